//! Seeded pulse-level sampler used as an oracle for the expected-value model.
//!
//! Each pulse independently picks an intensity, a photon number, both basis
//! choices, whether it clicks and whether the click is an error. Pulses that
//! do not click are skipped in bulk: the gap to the next registered click is
//! geometric with the per-pulse click probability, and the clicking pulse is
//! then sampled from the distribution conditioned on the click. This is the
//! same process as drawing every pulse, at a cost proportional to the number
//! of clicks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::channel::{
    background_yield, dead_time_factor, pulse_gain, pulses_per_sample, ChannelTrace, DetectorSpec,
    Intensity, SourceSpec, TallySet,
};
use crate::error::{invalid, Result};

const MAX_PHOTONS: usize = 40;

/// Matched-basis detections broken down by the emitted photon number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberTruth {
    pub s_z0: f64,
    pub s_z1: f64,
    pub s_x0: f64,
    pub s_x1: f64,
    /// X-basis errors on single-photon pulses.
    pub m_x1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub tallies: TallySet,
    pub truth: PhotonNumberTruth,
}

fn poisson_weights(mean: f64) -> [f64; MAX_PHOTONS + 1] {
    let mut w = [0.0; MAX_PHOTONS + 1];
    let mut term = (-mean).exp();
    for (n, slot) in w.iter_mut().enumerate() {
        *slot = term;
        term *= mean / (n as f64 + 1.0);
    }
    w
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples the pass at or above `min_elevation_deg`, sending
/// `round(pulse_rate * dt * thinning)` pulses per sample.
pub fn monte_carlo_tallies(
    seed: u64,
    trace: &ChannelTrace,
    source: &SourceSpec,
    det: &DetectorSpec,
    min_elevation_deg: f64,
    thinning: f64,
) -> Result<MonteCarloOutcome> {
    if !(thinning > 0.0 && thinning <= 1.0) {
        return Err(invalid("thinning", "must lie in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = background_yield(det, source.pulse_rate_hz);
    let pulses = pulses_per_sample(source, trace.sample_dt_s, thinning) as u64;
    let mut tallies = TallySet::default();
    let mut truth = PhotonNumberTruth::default();

    for sample in trace.samples.iter().filter(|s| s.elevation_deg >= min_elevation_deg) {
        let eta = sample.eta_total;
        tallies.n_sent += pulses as f64;
        let dead = dead_time_factor(source, det, eta, y0);

        let levels: Vec<(Intensity, f64, f64)> = Intensity::ALL
            .iter()
            .map(|&k| (k, source.mean(k), source.probability(k)))
            .collect();
        let weights: Vec<f64> = levels
            .iter()
            .map(|(_, mean, p)| p * pulse_gain(*mean, eta, y0) * dead)
            .collect();
        let click_prob: f64 = weights.iter().sum();
        if !(click_prob > 0.0) {
            continue;
        }

        // photon-number distribution of a clicking pulse, per intensity
        let photon_tables: Vec<Vec<f64>> = levels
            .iter()
            .map(|(_, mean, _)| {
                poisson_weights(*mean)
                    .iter()
                    .enumerate()
                    .map(|(n, p)| p * (1.0 - (1.0 - y0) * (1.0 - eta).powi(n as i32)))
                    .collect()
            })
            .collect();

        let geometric = Geometric::new(click_prob.min(1.0)).expect("valid probability");
        let mut position: u64 = 0;
        loop {
            let gap = geometric.sample(&mut rng);
            position = match position.checked_add(gap) {
                Some(p) if p < pulses => p,
                _ => break,
            };
            position += 1;

            let level = pick(&mut rng, &weights);
            let (k, _, _) = levels[level];
            let photons = pick(&mut rng, &photon_tables[level]);

            // split the click into background and signal contributions
            let signal = 1.0 - (1.0 - eta).powi(photons as i32);
            let clicked = 1.0 - (1.0 - signal) * (1.0 - y0);
            let u = rng.random::<f64>() * clicked;
            let (background_click, signal_click) = if u < signal * (1.0 - y0) {
                (false, true)
            } else if u < signal * (1.0 - y0) + (1.0 - signal) * y0 {
                (true, false)
            } else {
                (true, true)
            };

            let alice_z = rng.random::<f64>() < source.p_z_alice;
            let bob_z = rng.random::<f64>() < source.p_z_bob;
            let e_mis = if alice_z {
                source.misalignment_z
            } else {
                source.misalignment_x
            };
            let mut error_prob = 0.0;
            if background_click {
                error_prob += 0.5;
            }
            if signal_click {
                error_prob += e_mis;
            }
            let error = rng.random::<f64>() < error_prob.min(1.0);

            if alice_z != bob_z {
                continue;
            }
            let t = tallies.get_mut(k);
            let err = if error { 1.0 } else { 0.0 };
            if alice_z {
                t.n_z += 1.0;
                t.m_z += err;
                match photons {
                    0 => truth.s_z0 += 1.0,
                    1 => truth.s_z1 += 1.0,
                    _ => {}
                }
            } else {
                t.n_x += 1.0;
                t.m_x += err;
                match photons {
                    0 => truth.s_x0 += 1.0,
                    1 => {
                        truth.s_x1 += 1.0;
                        truth.m_x1 += err;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(MonteCarloOutcome { tallies, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{expected_tallies_from_trace, ChannelSample};

    fn trace(eta: f64, n: usize) -> ChannelTrace {
        ChannelTrace {
            samples: (0..n)
                .map(|i| ChannelSample {
                    t_s: i as f64,
                    elevation_deg: 30.0 + i as f64,
                    eta_total: eta,
                })
                .collect(),
            sample_dt_s: 1.0,
        }
    }

    fn source() -> SourceSpec {
        SourceSpec {
            pulse_rate_hz: 1e6,
            signal_intensity: 0.6,
            decoy_intensity: 0.2,
            vacuum_included: true,
            p_mu: 0.7,
            p_nu: 0.2,
            p_z_alice: 0.8,
            p_z_bob: 0.8,
            misalignment_z: 0.02,
            misalignment_x: 0.03,
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let det = DetectorSpec::snspd_id281();
        let tr = trace(1e-2, 3);
        let a = monte_carlo_tallies(7, &tr, &source(), &det, 0.0, 1.0).unwrap();
        let b = monte_carlo_tallies(7, &tr, &source(), &det, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo_tallies(8, &tr, &source(), &det, 0.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn signal_only_source() {
        let det = DetectorSpec::snspd_id281();
        let mut src = source();
        src.vacuum_included = false;
        src.p_mu = 1.0;
        src.p_nu = 0.0;
        let out = monte_carlo_tallies(1, &trace(1e-2, 2), &src, &det, 0.0, 1.0).unwrap();
        assert!(out.tallies.signal.n_z > 0.0);
        assert_eq!(out.tallies.decoy, Default::default());
        assert_eq!(out.tallies.vacuum, Default::default());
    }

    #[test]
    fn signal_counts_within_binomial_band() {
        let det = DetectorSpec::spcm_850_14();
        let src = source();
        let tr = trace(5e-3, 1);
        let expected = expected_tallies_from_trace(&tr, &src, &det, 0.0, 1.0);
        let n = expected.n_sent;
        assert_eq!(n, 1e6);
        let out = monte_carlo_tallies(42, &tr, &src, &det, 0.0, 1.0).unwrap();
        let e = expected.signal.n_z;
        let sigma = (e * (1.0 - e / n)).sqrt();
        assert!((out.tallies.signal.n_z - e).abs() <= 3.0 * sigma);
    }

    #[test]
    fn elevation_cut_removes_samples() {
        let det = DetectorSpec::snspd_id281();
        let out = monte_carlo_tallies(3, &trace(1e-2, 5), &source(), &det, 90.0, 1.0).unwrap();
        assert_eq!(out.tallies, TallySet::default());
    }
}
