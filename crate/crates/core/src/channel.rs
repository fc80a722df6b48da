//! Detection statistics of a weak-coherent-pulse decoy-state source.
//!
//! A pulse of mean photon number `k` through a channel of total transmission
//! `eta` (detector efficiency included) clicks with probability
//! `D_k = 1 - (1 - Y0) exp(-k eta)`, where `Y0` is the per-pulse background
//! yield. Background clicks carry a random bit; signal clicks are wrong with
//! the misalignment probability of the basis.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::link_budget::LinkBudgetBreakdown;
use crate::orbit::PassGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub name: String,
    pub efficiency: f64,
    pub dark_count_rate_hz: f64,
    pub dead_time_ns: f64,
    pub timing_jitter_ps: f64,
    /// Background-light click rate per detector.
    pub background_rate_hz: f64,
    pub n_detectors: u32,
    /// Coincidence window around each expected arrival time.
    pub gate_width_ns: f64,
}

impl DetectorSpec {
    /// Fibre-coupled SNSPD at 1550 nm.
    pub fn snspd_id281() -> Self {
        Self {
            name: "SNSPD ID281".into(),
            efficiency: 0.90,
            dark_count_rate_hz: 90.0,
            dead_time_ns: 30.0,
            timing_jitter_ps: 30.0,
            background_rate_hz: 8.0,
            n_detectors: 4,
            gate_width_ns: 1.0,
        }
    }

    /// Free-space InGaAs SPAD at 1550 nm.
    pub fn id_qube_nir() -> Self {
        Self {
            name: "ID Qube NIR".into(),
            efficiency: 0.20,
            dark_count_rate_hz: 3000.0,
            dead_time_ns: 100.0,
            timing_jitter_ps: 200.0,
            background_rate_hz: 33.0,
            n_detectors: 4,
            gate_width_ns: 1.0,
        }
    }

    /// Free-space silicon SPAD at 850 nm.
    pub fn spcm_850_14() -> Self {
        Self {
            name: "SPCM-850-14".into(),
            efficiency: 0.58,
            dark_count_rate_hz: 100.0,
            dead_time_ns: 22.0,
            timing_jitter_ps: 350.0,
            background_rate_hz: 380.0,
            n_detectors: 4,
            gate_width_ns: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("detector.efficiency", "must lie in (0, 1]"));
        }
        if !(self.dark_count_rate_hz >= 0.0) {
            return Err(invalid("detector.dark_count_rate_hz", "must be non-negative"));
        }
        if !(self.dead_time_ns >= 0.0) {
            return Err(invalid("detector.dead_time_ns", "must be non-negative"));
        }
        if !(self.timing_jitter_ps >= 0.0) {
            return Err(invalid("detector.timing_jitter_ps", "must be non-negative"));
        }
        if !(self.background_rate_hz >= 0.0) {
            return Err(invalid("detector.background_rate_hz", "must be non-negative"));
        }
        if self.n_detectors == 0 {
            return Err(invalid("detector.n_detectors", "must be at least 1"));
        }
        if !(self.gate_width_ns > 0.0) {
            return Err(invalid("detector.gate_width_ns", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub pulse_rate_hz: f64,
    /// Mean photon number of the signal state (mu).
    pub signal_intensity: f64,
    /// Mean photon number of the decoy state (nu).
    pub decoy_intensity: f64,
    /// Whether the probability left over by `p_mu + p_nu` goes to vacuum pulses.
    pub vacuum_included: bool,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_z_alice: f64,
    pub p_z_bob: f64,
    pub misalignment_z: f64,
    pub misalignment_x: f64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rate_hz > 0.0 && self.pulse_rate_hz.is_finite()) {
            return Err(invalid("source.pulse_rate_hz", "must be positive"));
        }
        if !(self.decoy_intensity > 0.0) {
            return Err(invalid("source.decoy_intensity", "must be positive"));
        }
        if !(self.decoy_intensity < self.signal_intensity) {
            return Err(invalid("source.signal_intensity", "must exceed the decoy intensity"));
        }
        for (field, p) in [
            ("source.p_mu", self.p_mu),
            ("source.p_nu", self.p_nu),
            ("source.p_z_alice", self.p_z_alice),
            ("source.p_z_bob", self.p_z_bob),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(field, "must lie in (0, 1)"));
            }
        }
        let total = self.p_mu + self.p_nu;
        if self.vacuum_included {
            if !(total < 1.0) {
                return Err(invalid("source.p_nu", "p_mu + p_nu must leave room for vacuum pulses"));
            }
        } else if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("source.p_nu", "p_mu + p_nu must equal 1 without vacuum pulses"));
        }
        for (field, e) in [
            ("source.misalignment_z", self.misalignment_z),
            ("source.misalignment_x", self.misalignment_x),
        ] {
            if !(0.0..0.5).contains(&e) {
                return Err(invalid(field, "must lie in [0, 0.5)"));
            }
        }
        Ok(())
    }

    pub fn p_vacuum(&self) -> f64 {
        if self.vacuum_included {
            (1.0 - self.p_mu - self.p_nu).max(0.0)
        } else {
            0.0
        }
    }

    pub fn mean(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.signal_intensity,
            Intensity::Decoy => self.decoy_intensity,
            Intensity::Vacuum => 0.0,
        }
    }

    pub fn probability(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.p_mu,
            Intensity::Decoy => self.p_nu,
            Intensity::Vacuum => self.p_vacuum(),
        }
    }

    /// Intensities with non-zero sending probability, paired with their means
    /// and probabilities.
    pub fn intensities(&self) -> impl Iterator<Item = (Intensity, f64, f64)> + '_ {
        Intensity::ALL
            .into_iter()
            .map(|k| (k, self.mean(k), self.probability(k)))
            .filter(|(_, _, p)| *p > 0.0)
    }
}

/// Detection and error counts for one intensity, split by matched basis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityTally {
    pub n_z: f64,
    pub n_x: f64,
    pub m_z: f64,
    pub m_x: f64,
}

impl IntensityTally {
    fn add(&mut self, other: &IntensityTally) {
        self.n_z += other.n_z;
        self.n_x += other.n_x;
        self.m_z += other.m_z;
        self.m_x += other.m_x;
    }

    fn sub(&mut self, other: &IntensityTally) {
        self.n_z -= other.n_z;
        self.n_x -= other.n_x;
        self.m_z -= other.m_z;
        self.m_x -= other.m_x;
    }
}

/// Counts per intensity over a block of pulses. Expected-value tallies hold
/// reals; Monte Carlo tallies hold integers stored as `f64`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TallySet {
    pub signal: IntensityTally,
    pub decoy: IntensityTally,
    pub vacuum: IntensityTally,
    pub n_sent: f64,
}

impl TallySet {
    pub fn get(&self, k: Intensity) -> &IntensityTally {
        match k {
            Intensity::Signal => &self.signal,
            Intensity::Decoy => &self.decoy,
            Intensity::Vacuum => &self.vacuum,
        }
    }

    pub fn get_mut(&mut self, k: Intensity) -> &mut IntensityTally {
        match k {
            Intensity::Signal => &mut self.signal,
            Intensity::Decoy => &mut self.decoy,
            Intensity::Vacuum => &mut self.vacuum,
        }
    }

    pub fn n_z(&self) -> f64 {
        self.signal.n_z + self.decoy.n_z + self.vacuum.n_z
    }

    pub fn n_x(&self) -> f64 {
        self.signal.n_x + self.decoy.n_x + self.vacuum.n_x
    }

    pub fn m_z(&self) -> f64 {
        self.signal.m_z + self.decoy.m_z + self.vacuum.m_z
    }

    pub fn m_x(&self) -> f64 {
        self.signal.m_x + self.decoy.m_x + self.vacuum.m_x
    }

    /// Observed Z-basis error fraction.
    pub fn qber_z(&self) -> f64 {
        let n = self.n_z();
        if n > 0.0 {
            self.m_z() / n
        } else {
            0.0
        }
    }

    pub fn add(&mut self, other: &TallySet) {
        for k in Intensity::ALL {
            self.get_mut(k).add(other.get(k));
        }
        self.n_sent += other.n_sent;
    }

    pub fn sub(&mut self, other: &TallySet) {
        for k in Intensity::ALL {
            self.get_mut(k).sub(other.get(k));
        }
        self.n_sent -= other.n_sent;
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> TallySet {
        let mut out = *self;
        for k in Intensity::ALL {
            let t = out.get_mut(k);
            t.n_z *= factor;
            t.n_x *= factor;
            t.m_z *= factor;
            t.m_x *= factor;
        }
        out.n_sent *= factor;
        out
    }

    /// The twelve count fields with stable names, for reports.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(12);
        for k in Intensity::ALL {
            let name = match k {
                Intensity::Signal => "mu",
                Intensity::Decoy => "nu",
                Intensity::Vacuum => "vac",
            };
            let t = self.get(k);
            out.push((format!("n_z_{name}"), t.n_z));
            out.push((format!("n_x_{name}"), t.n_x));
            out.push((format!("m_z_{name}"), t.m_z));
            out.push((format!("m_x_{name}"), t.m_x));
        }
        out
    }
}

/// Per-pulse background click probability summed over all detectors,
/// `n_det (DCR + BGL) t_gate`. The gate never exceeds the pulse period.
pub fn background_yield(det: &DetectorSpec, pulse_rate_hz: f64) -> f64 {
    let gate_s = (det.gate_width_ns * 1e-9).min(1.0 / pulse_rate_hz);
    (f64::from(det.n_detectors) * (det.dark_count_rate_hz + det.background_rate_hz) * gate_s).clamp(0.0, 1.0)
}

/// Detection probability for a pulse of mean photon number `k`.
pub fn pulse_gain(k: f64, eta_total: f64, y0: f64) -> f64 {
    y0 + (1.0 - y0) * signal_click(k, eta_total)
}

fn signal_click(k: f64, eta_total: f64) -> f64 {
    -(-k * eta_total).exp_m1()
}

/// Error fraction among detections of a pulse of mean photon number `k`.
pub fn pulse_qber(k: f64, eta_total: f64, y0: f64, e_mis: f64) -> Result<f64> {
    let gain = pulse_gain(k, eta_total, y0);
    if !(gain > 0.0) {
        return Err(Error::UndefinedQber);
    }
    Ok((0.5 * y0 + e_mis * signal_click(k, eta_total)) / gain)
}

/// Fraction of clicks surviving detector dead time, `1 / (1 + R tau)`, with
/// `R` the click rate seen by each detector.
pub fn dead_time_factor(source: &SourceSpec, det: &DetectorSpec, eta_total: f64, y0: f64) -> f64 {
    if det.dead_time_ns == 0.0 {
        return 1.0;
    }
    let mean_gain: f64 = source
        .intensities()
        .map(|(_, k, p)| p * pulse_gain(k, eta_total, y0))
        .sum();
    let per_detector = source.pulse_rate_hz * mean_gain / f64::from(det.n_detectors);
    1.0 / (1.0 + per_detector * det.dead_time_ns * 1e-9)
}

/// Per-sample total transmission (link times detector efficiency).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSample {
    pub t_s: f64,
    pub elevation_deg: f64,
    pub eta_total: f64,
}

/// A pass reduced to what the detection model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub samples: Vec<ChannelSample>,
    pub sample_dt_s: f64,
}

impl ChannelTrace {
    pub fn new(pass: &PassGeometry, breakdowns: &[LinkBudgetBreakdown], det: &DetectorSpec) -> Result<Self> {
        if pass.samples.len() != breakdowns.len() {
            return Err(invalid(
                "breakdowns",
                format!("{} budgets for {} pass samples", breakdowns.len(), pass.samples.len()),
            ));
        }
        let samples = pass
            .samples
            .iter()
            .zip(breakdowns)
            .map(|(s, b)| ChannelSample {
                t_s: s.t_s,
                elevation_deg: s.elevation_deg,
                eta_total: b.eta * det.efficiency,
            })
            .collect();
        Ok(Self {
            samples,
            sample_dt_s: pass.sample_dt_s,
        })
    }

    pub fn max_elevation_deg(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.elevation_deg)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Expected tallies for `pulses` pulses sent at total transmission `eta_total`.
pub fn tallies_at(
    eta_total: f64,
    pulses: f64,
    source: &SourceSpec,
    det: &DetectorSpec,
) -> TallySet {
    let y0 = background_yield(det, source.pulse_rate_hz);
    let dead = dead_time_factor(source, det, eta_total, y0);
    let p_zz = source.p_z_alice * source.p_z_bob;
    let p_xx = (1.0 - source.p_z_alice) * (1.0 - source.p_z_bob);
    let mut out = TallySet {
        n_sent: pulses,
        ..TallySet::default()
    };
    for (k, mean, p) in source.intensities() {
        let gain = pulse_gain(mean, eta_total, y0);
        let signal = signal_click(mean, eta_total);
        let base = pulses * p * dead;
        let t = out.get_mut(k);
        t.n_z = base * p_zz * gain;
        t.n_x = base * p_xx * gain;
        t.m_z = base * p_zz * (0.5 * y0 + source.misalignment_z * signal);
        t.m_x = base * p_xx * (0.5 * y0 + source.misalignment_x * signal);
    }
    out
}

/// Number of pulses the model sends during one sample.
pub fn pulses_per_sample(source: &SourceSpec, dt_s: f64, thinning: f64) -> f64 {
    (source.pulse_rate_hz * dt_s * thinning).round()
}

/// Expected tallies accumulated over every sample at or above `min_elevation_deg`.
pub fn expected_tallies(
    pass: &PassGeometry,
    breakdowns: &[LinkBudgetBreakdown],
    source: &SourceSpec,
    det: &DetectorSpec,
    min_elevation_deg: f64,
) -> Result<TallySet> {
    let trace = ChannelTrace::new(pass, breakdowns, det)?;
    Ok(expected_tallies_from_trace(&trace, source, det, min_elevation_deg, 1.0))
}

/// As [`expected_tallies`], with the pulse count of each sample thinned and
/// rounded the way the Monte Carlo sampler does.
pub fn expected_tallies_from_trace(
    trace: &ChannelTrace,
    source: &SourceSpec,
    det: &DetectorSpec,
    min_elevation_deg: f64,
    thinning: f64,
) -> TallySet {
    let pulses = if thinning == 1.0 {
        source.pulse_rate_hz * trace.sample_dt_s
    } else {
        pulses_per_sample(source, trace.sample_dt_s, thinning)
    };
    let mut total = TallySet::default();
    for s in trace.samples.iter().filter(|s| s.elevation_deg >= min_elevation_deg) {
        total.add(&tallies_at(s.eta_total, pulses, source, det));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn source() -> SourceSpec {
        SourceSpec {
            pulse_rate_hz: 1e9,
            signal_intensity: 0.6,
            decoy_intensity: 0.2,
            vacuum_included: true,
            p_mu: 0.8,
            p_nu: 0.15,
            p_z_alice: 0.9,
            p_z_bob: 0.9,
            misalignment_z: 0.01,
            misalignment_x: 0.01,
        }
    }

    #[test]
    fn background_yield_values() {
        let mut det = DetectorSpec::snspd_id281();
        assert_relative_eq!(background_yield(&det, 1e9), 3.92e-7, max_relative = 1e-12);
        det.dark_count_rate_hz = 0.0;
        det.background_rate_hz = 0.0;
        assert_eq!(background_yield(&det, 1e9), 0.0);
        let mut det = DetectorSpec::snspd_id281();
        let base = background_yield(&det, 1e8);
        det.gate_width_ns *= 2.0;
        assert_relative_eq!(background_yield(&det, 1e8), 2.0 * base, max_relative = 1e-12);
    }

    #[test]
    fn gain_and_qber_values() {
        assert_eq!(pulse_gain(0.0, 0.5, 0.0), 0.0);
        assert_relative_eq!(pulse_gain(0.6, 1e-3, 1e-6), 6.008_194_361_745_6e-4, max_relative = 1e-12);
        assert!((pulse_gain(0.6, 1e6, 0.0) - 1.0).abs() < 1e-12);
        assert_relative_eq!(
            pulse_qber(0.6, 1e-3, 1e-6, 0.01).unwrap(),
            0.010_815_562_827_528,
            max_relative = 1e-10
        );
        assert_relative_eq!(pulse_qber(0.6, 1e-3, 0.0, 0.013).unwrap(), 0.013, max_relative = 1e-12);
        assert!((pulse_qber(0.6, 1e-12, 1e-3, 0.01).unwrap() - 0.5).abs() < 1e-6);
        assert!(matches!(pulse_qber(0.0, 0.1, 0.0, 0.01), Err(Error::UndefinedQber)));
    }

    #[test]
    fn single_sample_hand_calculation() {
        let mut det = DetectorSpec::snspd_id281();
        det.dead_time_ns = 0.0;
        let src = source();
        let eta = 2e-4;
        let t = tallies_at(eta, 1e9, &src, &det);
        let y0 = 3.92e-7;
        let d_mu = 1.0 - (1.0 - y0) * (-0.6 * eta).exp();
        let expect = 1e9 * 0.8 * 0.9 * 0.9 * d_mu;
        assert_relative_eq!(t.signal.n_z, expect, max_relative = 1e-12);
        let d_vac = y0;
        assert_relative_eq!(t.vacuum.n_x, 1e9 * 0.05 * 0.01 * d_vac, max_relative = 1e-10);
        assert_relative_eq!(t.vacuum.m_x, 0.5 * t.vacuum.n_x, max_relative = 1e-10);
    }

    #[test]
    fn dead_time_zero_gives_unit_factor() {
        let mut det = DetectorSpec::spcm_850_14();
        det.dead_time_ns = 0.0;
        assert_eq!(dead_time_factor(&source(), &det, 1e-3, 1e-6), 1.0);
        det.dead_time_ns = 22.0;
        assert!(dead_time_factor(&source(), &det, 1e-3, 1e-6) < 1.0);
    }

    #[test]
    fn source_validation() {
        assert!(source().validate().is_ok());
        let mut s = source();
        s.decoy_intensity = 0.7;
        assert!(s.validate().unwrap_err().to_string().contains("signal_intensity"));
        let mut s = source();
        s.vacuum_included = false;
        assert!(s.validate().unwrap_err().to_string().contains("p_nu"));
        let mut s = source();
        s.p_z_bob = 1.0;
        assert!(s.validate().unwrap_err().to_string().contains("p_z_bob"));
    }

    #[test]
    fn model_bounds_hold() {
        for &y0 in &[0.0, 1e-7, 1e-5] {
            for &eta in &[1e-6, 1e-4, 1e-2] {
                let mut prev_gain = -1.0;
                for &k in &[0.0, 0.1, 0.3, 0.6, 1.0] {
                    let d = pulse_gain(k, eta, y0);
                    assert!(d >= y0 * (1.0 - 1e-9) && d <= 1.0);
                    assert!(d > prev_gain || (k == 0.0 && prev_gain < 0.0));
                    prev_gain = d;
                    if d > 0.0 {
                        let e = pulse_qber(k, eta, y0, 0.02).unwrap();
                        assert!(e <= 0.5 + 1e-12);
                        assert!(e >= 0.02 * signal_click(k, eta) / d - 1e-15);
                    }
                }
            }
        }
    }
}
