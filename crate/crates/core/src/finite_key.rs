//! Finite-key length of decoy-state BB84 with one or two decoy intensities.
//!
//! Key length over a block:
//!
//! ```text
//! l = s_Z0 + s_Z1 (1 - h(phi_Z)) - lambda_EC - 6 log2(b / eps_sec) - log2(2 / eps_corr)
//! ```
//!
//! with `b = 21` when a vacuum decoy is sent (signal, decoy, vacuum) and
//! `b = 19` for the one-decoy variant (signal, decoy). The security parameter
//! is split evenly over the `b` concentration bounds, so each Hoeffding
//! deviation is evaluated at `eps_sec / b`.
//!
//! In [`Statistics::Asymptotic`] mode the same estimators run with every
//! fluctuation term and logarithmic penalty set to zero, which is the
//! infinite-block limit of the finite-key length per pulse.

use serde::{Deserialize, Serialize};

use crate::channel::{tallies_at, DetectorSpec, Intensity, SourceSpec, TallySet};
use crate::error::{invalid, Result};

/// Coefficient of the privacy-amplification penalty term.
const PA_PENALTY_COEFF: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityParams {
    pub eps_sec: f64,
    pub eps_corr: f64,
    /// Error-correction inefficiency relative to the Shannon limit.
    pub f_ec: f64,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            eps_sec: 1e-9,
            eps_corr: 1e-15,
            f_ec: 1.16,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_sec > 0.0 && self.eps_sec < 1.0) {
            return Err(invalid("security.eps_sec", "must lie in (0, 1)"));
        }
        if !(self.eps_corr > 0.0 && self.eps_corr < 1.0) {
            return Err(invalid("security.eps_corr", "must lie in (0, 1)"));
        }
        if !(self.f_ec >= 1.0) {
            return Err(invalid("security.f_ec", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoyScheme {
    /// Signal and one decoy intensity.
    OneDecoy,
    /// Signal, decoy and vacuum intensities.
    TwoDecoy,
}

impl DecoyScheme {
    pub fn from_count(n_decoys: u8) -> Result<Self> {
        match n_decoys {
            1 => Ok(Self::OneDecoy),
            2 => Ok(Self::TwoDecoy),
            _ => Err(invalid("n_decoys", "must be 1 or 2")),
        }
    }

    pub fn n_decoys(self) -> u8 {
        match self {
            Self::OneDecoy => 1,
            Self::TwoDecoy => 2,
        }
    }

    /// Number of concentration bounds sharing `eps_sec`.
    pub fn epsilon_splits(self) -> f64 {
        match self {
            Self::OneDecoy => 19.0,
            Self::TwoDecoy => 21.0,
        }
    }

    pub fn uses_vacuum(self) -> bool {
        matches!(self, Self::TwoDecoy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Finite,
    Asymptotic,
}

/// `h(x) = -x log2 x - (1 - x) log2(1 - x)`.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Hoeffding deviation `sqrt(n/2 ln(1/eps))`.
pub fn hoeffding_delta(n: f64, eps: f64) -> f64 {
    (0.5 * n.max(0.0) * (1.0 / eps).ln()).sqrt()
}

/// Probability that a pulse drawn from the intensity mixture carries exactly
/// `n` photons. `levels` holds `(mean, probability)` pairs.
pub fn emission_tau(levels: &[(f64, f64)], n: u32) -> f64 {
    let factorial: f64 = (1..=n).map(f64::from).product();
    levels
        .iter()
        .map(|(k, p)| p * (-k).exp() * k.powi(n as i32) / factorial)
        .sum()
}

/// Correction transferring the single-photon X error rate `b`, measured on
/// `d` single-photon X detections, to the `c` single-photon Z detections.
/// `splits` is the number of bounds sharing the security parameter `a`.
pub fn statistical_transfer_gamma(a: f64, b: f64, c: f64, d: f64, splits: f64) -> f64 {
    if !(b > 0.0 && b < 1.0 && c > 0.0 && d > 0.0) {
        return 0.0;
    }
    let spread = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2);
    let log_term = ((c + d) / (c * d * (1.0 - b) * b) * splits * splits / (a * a)).log2();
    (spread * log_term).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub scheme: DecoyScheme,
    /// Lower bound on Z detections from vacuum pulses.
    pub s_z0_low: f64,
    /// Upper bound on Z vacuum detections (one-decoy only).
    pub s_z0_up: Option<f64>,
    pub s_z1_low: f64,
    pub s_x1_low: f64,
    /// Upper bound on X errors from single-photon pulses.
    pub v_x1_up: f64,
    /// Upper bound on the single-photon phase error rate.
    pub phi_z_up: f64,
    /// Emission probabilities of zero and one photon.
    pub tau: [f64; 2],
    pub aborted: Option<String>,
}

struct Rescaler {
    levels: [(f64, f64); 3],
}

impl Rescaler {
    fn new(source: &SourceSpec) -> Self {
        let mut levels = [(0.0, 0.0); 3];
        for k in Intensity::ALL {
            levels[k.index()] = (source.mean(k), source.probability(k));
        }
        Self { levels }
    }

    /// `e^k / p_k (count + shift)`.
    fn rescale(&self, k: Intensity, count: f64, shift: f64) -> f64 {
        let (mean, p) = self.levels[k.index()];
        mean.exp() / p * (count + shift)
    }
}

fn check_scheme(source: &SourceSpec, scheme: DecoyScheme) -> Result<()> {
    if source.decoy_intensity <= 0.0 || source.decoy_intensity >= source.signal_intensity {
        return Err(invalid("source.decoy_intensity", "need 0 < nu < mu"));
    }
    match scheme {
        DecoyScheme::TwoDecoy if source.p_vacuum() <= 0.0 => Err(invalid(
            "source.vacuum_included",
            "two-decoy bounds need vacuum pulses",
        )),
        DecoyScheme::OneDecoy if source.p_vacuum() > 0.0 => Err(invalid(
            "source.vacuum_included",
            "one-decoy bounds take exactly two intensities",
        )),
        _ => Ok(()),
    }
}

fn phase_error(
    v_x1: f64,
    s_x1: f64,
    s_z1: f64,
    security: &SecurityParams,
    scheme: DecoyScheme,
    stats: Statistics,
) -> (f64, Option<String>) {
    if !(s_z1 > 0.0) {
        return (0.5, Some("single-photon Z bound is not positive".into()));
    }
    if !(s_x1 > 0.0) {
        return (0.5, Some("single-photon X bound is not positive".into()));
    }
    let ratio = (v_x1 / s_x1).max(0.0);
    if ratio >= 0.5 {
        return (0.5, Some("single-photon X error rate at or above 1/2".into()));
    }
    let gamma = match stats {
        Statistics::Finite => {
            statistical_transfer_gamma(security.eps_sec, ratio, s_z1, s_x1, scheme.epsilon_splits())
        }
        Statistics::Asymptotic => 0.0,
    };
    let phi = ratio + gamma;
    if phi > 0.5 {
        (0.5, Some("phase error bound exceeds 1/2".into()))
    } else {
        (phi, None)
    }
}

/// Vacuum-plus-decoy bounds for signal `mu`, decoy `nu` and vacuum.
pub fn two_decoy_bounds(
    tallies: &TallySet,
    source: &SourceSpec,
    security: &SecurityParams,
    stats: Statistics,
) -> Result<DecoyBounds> {
    let scheme = DecoyScheme::TwoDecoy;
    check_scheme(source, scheme)?;
    let r = Rescaler::new(source);
    let mu = source.signal_intensity;
    let nu = source.decoy_intensity;
    let levels = [
        (mu, source.p_mu),
        (nu, source.p_nu),
        (0.0, source.p_vacuum()),
    ];
    let tau0 = emission_tau(&levels, 0);
    let tau1 = emission_tau(&levels, 1);
    let eps = security.eps_sec / scheme.epsilon_splits();
    let delta = |n: f64| match stats {
        Statistics::Finite => hoeffding_delta(n, eps),
        Statistics::Asymptotic => 0.0,
    };

    let single = |count: fn(&TallySet, Intensity) -> f64, total: f64| {
        let d = delta(total);
        let n_minus = |k| r.rescale(k, count(tallies, k), -d);
        let n_plus = |k| r.rescale(k, count(tallies, k), d);
        let s0 = (tau0 * n_minus(Intensity::Vacuum)).max(0.0);
        let s1 = tau1 * mu
            * (n_minus(Intensity::Decoy)
                - n_plus(Intensity::Vacuum)
                - nu * nu / (mu * mu) * (n_plus(Intensity::Signal) - s0 / tau0))
            / (nu * (mu - nu));
        (s0, s1)
    };
    let (s_z0_low, s_z1_low) = single(|t, k| t.get(k).n_z, tallies.n_z());
    let (_, s_x1_low) = single(|t, k| t.get(k).n_x, tallies.n_x());

    let dm = delta(tallies.m_x());
    let v_x1_up = (tau1
        * (r.rescale(Intensity::Decoy, tallies.decoy.m_x, dm)
            - r.rescale(Intensity::Vacuum, tallies.vacuum.m_x, -dm))
        / nu)
        .max(0.0);

    let (phi_z_up, aborted) = phase_error(v_x1_up, s_x1_low, s_z1_low, security, scheme, stats);
    Ok(DecoyBounds {
        scheme,
        s_z0_low,
        s_z0_up: None,
        s_z1_low: s_z1_low.max(0.0),
        s_x1_low: s_x1_low.max(0.0),
        v_x1_up,
        phi_z_up,
        tau: [tau0, tau1],
        aborted,
    })
}

/// Bounds for signal `mu` and one decoy `nu` without vacuum pulses. The
/// vacuum contribution is bounded from above by attributing every observed
/// error to vacuum, which errs with probability 1/2.
pub fn one_decoy_bounds(
    tallies: &TallySet,
    source: &SourceSpec,
    security: &SecurityParams,
    stats: Statistics,
) -> Result<DecoyBounds> {
    let scheme = DecoyScheme::OneDecoy;
    check_scheme(source, scheme)?;
    let r = Rescaler::new(source);
    let mu = source.signal_intensity;
    let nu = source.decoy_intensity;
    let levels = [(mu, source.p_mu), (nu, source.p_nu)];
    let tau0 = emission_tau(&levels, 0);
    let tau1 = emission_tau(&levels, 1);
    let eps = security.eps_sec / scheme.epsilon_splits();
    let delta = |n: f64| match stats {
        Statistics::Finite => hoeffding_delta(n, eps),
        Statistics::Asymptotic => 0.0,
    };

    // returns (s0 lower, s0 upper, s1 lower) for one basis
    let single = |count: fn(&TallySet, Intensity) -> f64,
                  errors: fn(&TallySet, Intensity) -> f64,
                  total: f64,
                  total_errors: f64| {
        let d = delta(total);
        let dm = delta(total_errors);
        let n_minus = |k| r.rescale(k, count(tallies, k), -d);
        let n_plus = |k| r.rescale(k, count(tallies, k), d);
        let s0_up = 2.0 * (tau0 * r.rescale(Intensity::Decoy, errors(tallies, Intensity::Decoy), dm) + d);
        let s0_low = (tau0 * (mu * n_minus(Intensity::Decoy) - nu * n_plus(Intensity::Signal)) / (mu - nu)).max(0.0);
        let s1 = tau1 * mu
            * (n_minus(Intensity::Decoy)
                - nu * nu / (mu * mu) * n_plus(Intensity::Signal)
                - (mu * mu - nu * nu) / (mu * mu) * s0_up / tau0)
            / (nu * (mu - nu));
        (s0_low, s0_up, s1)
    };
    let (s_z0_low, s_z0_up, s_z1_low) =
        single(|t, k| t.get(k).n_z, |t, k| t.get(k).m_z, tallies.n_z(), tallies.m_z());
    let (_, _, s_x1_low) = single(|t, k| t.get(k).n_x, |t, k| t.get(k).m_x, tallies.n_x(), tallies.m_x());

    let dm = delta(tallies.m_x());
    let v_x1_up = (tau1
        * (r.rescale(Intensity::Signal, tallies.signal.m_x, dm)
            - r.rescale(Intensity::Decoy, tallies.decoy.m_x, -dm))
        / (mu - nu))
        .max(0.0);

    let (phi_z_up, aborted) = phase_error(v_x1_up, s_x1_low, s_z1_low, security, scheme, stats);
    Ok(DecoyBounds {
        scheme,
        s_z0_low,
        s_z0_up: Some(s_z0_up),
        s_z1_low: s_z1_low.max(0.0),
        s_x1_low: s_x1_low.max(0.0),
        v_x1_up,
        phi_z_up,
        tau: [tau0, tau1],
        aborted,
    })
}

pub fn decoy_bounds(
    scheme: DecoyScheme,
    tallies: &TallySet,
    source: &SourceSpec,
    security: &SecurityParams,
    stats: Statistics,
) -> Result<DecoyBounds> {
    match scheme {
        DecoyScheme::OneDecoy => one_decoy_bounds(tallies, source, security, stats),
        DecoyScheme::TwoDecoy => two_decoy_bounds(tallies, source, security, stats),
    }
}

/// Contribution of each term of the key-length formula, in bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SklDiagnostics {
    pub s_z0: f64,
    pub s_z1: f64,
    pub phi_z: f64,
    pub qber_z: f64,
    pub privacy_penalty: f64,
    pub correctness_penalty: f64,
    /// Key length before clamping and flooring.
    pub raw_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SklResult {
    pub skl_bits: f64,
    pub lambda_ec_bits: f64,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub diagnostics: SklDiagnostics,
}

impl SklResult {
    pub fn zero(reason: impl Into<String>) -> Self {
        Self {
            skl_bits: 0.0,
            lambda_ec_bits: 0.0,
            aborted: true,
            abort_reason: Some(reason.into()),
            diagnostics: SklDiagnostics::default(),
        }
    }
}

pub fn secure_key_length(
    bounds: &DecoyBounds,
    tallies: &TallySet,
    security: &SecurityParams,
    stats: Statistics,
) -> SklResult {
    let scheme = bounds.scheme;
    let qber_z = tallies.qber_z().min(0.5);
    let lambda_ec = security.f_ec * tallies.n_z() * binary_entropy(qber_z);
    let (privacy_penalty, correctness_penalty) = match stats {
        Statistics::Finite => (
            PA_PENALTY_COEFF * (scheme.epsilon_splits() / security.eps_sec).log2(),
            (2.0 / security.eps_corr).log2(),
        ),
        Statistics::Asymptotic => (0.0, 0.0),
    };
    let raw = bounds.s_z0_low + bounds.s_z1_low * (1.0 - binary_entropy(bounds.phi_z_up))
        - lambda_ec
        - privacy_penalty
        - correctness_penalty;
    let diagnostics = SklDiagnostics {
        s_z0: bounds.s_z0_low,
        s_z1: bounds.s_z1_low,
        phi_z: bounds.phi_z_up,
        qber_z,
        privacy_penalty,
        correctness_penalty,
        raw_length: raw,
    };
    let abort_reason = match (&bounds.aborted, raw > 0.0) {
        (Some(reason), _) => Some(reason.clone()),
        (None, false) => Some("key length not positive".to_string()),
        (None, true) => None,
    };
    let skl_bits = match (&abort_reason, stats) {
        (Some(_), _) => 0.0,
        (None, Statistics::Finite) => raw.floor(),
        (None, Statistics::Asymptotic) => raw,
    };
    SklResult {
        skl_bits,
        lambda_ec_bits: lambda_ec,
        aborted: abort_reason.is_some(),
        abort_reason,
        diagnostics,
    }
}

/// Bounds and key length of a block in one call.
pub fn evaluate_block(
    scheme: DecoyScheme,
    tallies: &TallySet,
    source: &SourceSpec,
    security: &SecurityParams,
    stats: Statistics,
) -> Result<SklResult> {
    let bounds = decoy_bounds(scheme, tallies, source, security, stats)?;
    Ok(secure_key_length(&bounds, tallies, security, stats))
}

/// Infinite-block key rate per sent pulse at fixed total transmission.
pub fn asymptotic_skr(
    eta_total: f64,
    source: &SourceSpec,
    det: &DetectorSpec,
    security: &SecurityParams,
    scheme: DecoyScheme,
) -> Result<f64> {
    if !(eta_total > 0.0) {
        return Ok(0.0);
    }
    let tallies = tallies_at(eta_total, 1.0, source, det);
    let result = evaluate_block(scheme, &tallies, source, security, Statistics::Asymptotic)?;
    Ok(result.skl_bits.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_decoy_source() -> SourceSpec {
        SourceSpec {
            pulse_rate_hz: 1e9,
            signal_intensity: 0.6,
            decoy_intensity: 0.18,
            vacuum_included: true,
            p_mu: 0.8,
            p_nu: 0.15,
            p_z_alice: 0.9,
            p_z_bob: 0.9,
            misalignment_z: 0.01,
            misalignment_x: 0.01,
        }
    }

    fn one_decoy_source() -> SourceSpec {
        SourceSpec {
            vacuum_included: false,
            p_mu: 0.8,
            p_nu: 0.2,
            ..two_decoy_source()
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_relative_eq!(binary_entropy(0.11), 0.499_915_958_164_528, epsilon = 1e-12);
    }

    #[test]
    fn hoeffding_values() {
        assert_eq!(hoeffding_delta(0.0, 1e-10), 0.0);
        assert_relative_eq!(hoeffding_delta(1e6, 1e-10), 3393.070_212_207_556, epsilon = 1e-8);
        assert_relative_eq!(
            hoeffding_delta(4e6, 1e-10),
            2.0 * hoeffding_delta(1e6, 1e-10),
            max_relative = 1e-14
        );
    }

    #[test]
    fn tau_values() {
        assert_relative_eq!(emission_tau(&[(0.6, 1.0)], 1), 0.329_286_981_656_416, epsilon = 1e-14);
        assert_eq!(emission_tau(&[(0.0, 1.0)], 0), 1.0);
        for mix in [[(0.6, 0.5), (0.1, 0.5)], [(1.0, 0.3), (0.05, 0.7)]] {
            assert!(emission_tau(&mix, 0) + emission_tau(&mix, 1) <= 1.0);
        }
    }

    #[test]
    fn zero_counts_abort() {
        let t = TallySet::default();
        let sec = SecurityParams::default();
        let b = two_decoy_bounds(&t, &two_decoy_source(), &sec, Statistics::Finite).unwrap();
        assert!(b.aborted.is_some());
        let r = secure_key_length(&b, &t, &sec, Statistics::Finite);
        assert!(r.aborted);
        assert_eq!(r.skl_bits, 0.0);
    }

    #[test]
    fn one_decoy_vacuum_bound_is_pure_fluctuation_without_errors() {
        let mut det = DetectorSpec::snspd_id281();
        det.dark_count_rate_hz = 0.0;
        det.background_rate_hz = 0.0;
        let mut src = one_decoy_source();
        src.misalignment_z = 0.0;
        src.misalignment_x = 0.0;
        let t = tallies_at(1e-3, 1e11, &src, &det);
        assert_eq!(t.m_z(), 0.0);
        let sec = SecurityParams::default();
        let b = one_decoy_bounds(&t, &src, &sec, Statistics::Finite).unwrap();
        let d = hoeffding_delta(t.n_z(), sec.eps_sec / 19.0);
        assert_relative_eq!(b.s_z0_up.unwrap(), 2.0 * d, max_relative = 1e-12);
    }

    #[test]
    fn scheme_mismatch_rejected() {
        let t = TallySet::default();
        let sec = SecurityParams::default();
        assert!(two_decoy_bounds(&t, &one_decoy_source(), &sec, Statistics::Finite).is_err());
        assert!(one_decoy_bounds(&t, &two_decoy_source(), &sec, Statistics::Finite).is_err());
    }

    #[test]
    fn hand_fed_key_length() {
        // every term evaluated independently of the implementation
        let bounds = DecoyBounds {
            scheme: DecoyScheme::TwoDecoy,
            s_z0_low: 1.2e4,
            s_z0_up: None,
            s_z1_low: 2.5e6,
            s_x1_low: 2.0e5,
            v_x1_up: 4.0e3,
            phi_z_up: 0.03,
            tau: [0.5, 0.3],
            aborted: None,
        };
        let tallies = TallySet {
            signal: crate::channel::IntensityTally {
                n_z: 4.0e6,
                n_x: 4.0e5,
                m_z: 6.0e4,
                m_x: 6.0e3,
            },
            n_sent: 1e11,
            ..TallySet::default()
        };
        let sec = SecurityParams {
            eps_sec: 1e-9,
            eps_corr: 1e-15,
            f_ec: 1.16,
        };
        let r = secure_key_length(&bounds, &tallies, &sec, Statistics::Finite);
        // h(0.03) = 0.194_391_857_8, h(0.015) = 0.112_360_710_1
        // l = 12000 + 2.5e6 * (1 - 0.19439186) - 1.16 * 4e6 * 0.11236071
        //     - 6 log2(21e9) - log2(2e15)
        assert_eq!(r.skl_bits, 1_504_410.0);
        assert!(!r.aborted);
    }

    #[test]
    fn relaxing_eps_sec_increases_length() {
        let det = DetectorSpec::snspd_id281();
        let src = SourceSpec {
            p_z_alice: 0.7,
            p_z_bob: 0.7,
            ..two_decoy_source()
        };
        let t = tallies_at(1.5e-4, 1e12, &src, &det);
        let strict = SecurityParams {
            eps_sec: 1e-12,
            ..SecurityParams::default()
        };
        let loose = SecurityParams {
            eps_sec: 1e-6,
            ..SecurityParams::default()
        };
        let a = evaluate_block(DecoyScheme::TwoDecoy, &t, &src, &strict, Statistics::Finite).unwrap();
        let b = evaluate_block(DecoyScheme::TwoDecoy, &t, &src, &loose, Statistics::Finite).unwrap();
        assert!(!a.aborted, "{:?}", a);
        assert!(b.skl_bits > a.skl_bits);
    }

    #[test]
    fn gamma_limits() {
        assert_eq!(statistical_transfer_gamma(1e-9, 0.0, 1e6, 1e5, 21.0), 0.0);
        let g_small = statistical_transfer_gamma(1e-9, 0.02, 1e8, 1e7, 21.0);
        let g_large = statistical_transfer_gamma(1e-9, 0.02, 1e6, 1e5, 21.0);
        assert!(g_small > 0.0 && g_small < g_large);
    }

    #[test]
    fn asymptotic_rate_edge_cases() {
        let det = DetectorSpec::snspd_id281();
        let sec = SecurityParams::default();
        let src = two_decoy_source();
        assert_eq!(asymptotic_skr(0.0, &src, &det, &sec, DecoyScheme::TwoDecoy).unwrap(), 0.0);
        let r1 = asymptotic_skr(1e-3, &src, &det, &sec, DecoyScheme::TwoDecoy).unwrap();
        let r2 = asymptotic_skr(2e-3, &src, &det, &sec, DecoyScheme::TwoDecoy).unwrap();
        let ratio = r2 / r1;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }
}
