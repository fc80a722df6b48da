mod common;

use common::{reference_pass, setup, Receiver};
use satqkd_core::channel::expected_tallies_from_trace;
use satqkd_core::finite_key::DecoyScheme;
use satqkd_core::optimizer::{
    long_term_rate, optimize_pass, pointwise_asymptotic_profile, sweep_max_elevation, OptimizerConfig,
};
use satqkd_core::orbit::{synth_pass, GroundStation, OrbitSpec};

fn small_config() -> OptimizerConfig {
    OptimizerConfig {
        coarse_grid_steps: 4,
        refine_iterations: 6,
        random_probes: 8,
        ..OptimizerConfig::default()
    }
}

#[test]
fn identical_seed_gives_identical_optimum() {
    let s = setup(Receiver::Snspd, DecoyScheme::OneDecoy);
    let pass = reference_pass(2.0);
    let a = optimize_pass(&pass, &s, &small_config()).unwrap();
    let b = optimize_pass(&pass, &s, &small_config()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.result, b.result);
    assert_eq!(a.trace, b.trace);
    assert!(a.dominates_trace());
    a.params.validate(s.scheme).unwrap();
}

#[test]
fn better_detector_never_lowers_key() {
    let pass = reference_pass(2.0);
    let mut previous = 0.0;
    for efficiency in [0.3, 0.45, 0.58, 0.75, 0.9] {
        let mut s = setup(Receiver::Spcm, DecoyScheme::TwoDecoy);
        s.detector.efficiency = efficiency;
        let out = optimize_pass(&pass, &s, &small_config()).unwrap();
        assert!(out.result.skl_bits >= previous, "efficiency {efficiency}");
        previous = out.result.skl_bits;
    }
}

#[test]
fn noisy_detector_prefers_interior_elevation() {
    let s = setup(Receiver::IdQube, DecoyScheme::TwoDecoy);
    let out = optimize_pass(&reference_pass(1.0), &s, &small_config()).unwrap();
    assert!(!out.result.aborted);
    assert!(out.params.min_elevation_deg > 35.0, "{}", out.params.min_elevation_deg);
}

#[test]
fn pointwise_profile_peaks_and_dominates() {
    let s = setup(Receiver::Spcm, DecoyScheme::TwoDecoy);
    let pass = reference_pass(15.0);
    let config = OptimizerConfig {
        coarse_grid_steps: 3,
        refine_iterations: 4,
        random_probes: 4,
        ..OptimizerConfig::default()
    };
    let profile = pointwise_asymptotic_profile(&pass, &s, &config).unwrap();
    let n = profile.len();
    let peak = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.skr_per_pulse.total_cmp(&b.1.skr_per_pulse))
        .unwrap()
        .0;
    assert_eq!(peak, n / 2);
    for i in 0..n / 2 {
        let (a, b) = (profile[i].skr_per_pulse, profile[n - 1 - i].skr_per_pulse);
        assert!((a - b).abs() <= 1e-3 * a.max(b));
    }

    let fixed = optimize_pass(
        &pass,
        &s,
        &OptimizerConfig {
            fixed_min_elevation_deg: Some(20.0),
            ..small_config()
        },
    )
    .unwrap();
    let trace = s.channel_trace(&pass).unwrap();
    let source = s.source_for(&fixed.params);
    let sent = expected_tallies_from_trace(&trace, &source, &s.detector, 20.0, 1.0).n_sent;
    let average = profile.iter().map(|p| p.skr_per_pulse).sum::<f64>() / n as f64;
    assert!(average >= fixed.result.skl_bits / sent);
}

#[test]
fn culmination_sweep_is_monotone() {
    let s = setup(Receiver::Snspd, DecoyScheme::OneDecoy);
    let orbit = OrbitSpec::sun_synchronous(567.0).unwrap();
    let rows = sweep_max_elevation(&orbit, 20.0, &[30.0, 50.0, 70.0, 90.0], 2.0, &s, &small_config()).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].skl_bits >= w[0].skl_bits);
    }
    assert!(rows.iter().all(|r| r.params.unwrap().min_elevation_deg == 20.0));
}

#[test]
fn long_term_rate_falls_with_altitude() {
    let s = setup(Receiver::Spcm, DecoyScheme::OneDecoy);
    let mut previous = f64::INFINITY;
    for h in [400.0, 600.0, 800.0, 1000.0] {
        let orbit = OrbitSpec::sun_synchronous(h).unwrap();
        let pass = synth_pass(&orbit, &GroundStation::new(20.0, 80.0).unwrap(), 2.0).unwrap();
        let out = optimize_pass(&pass, &s, &small_config()).unwrap();
        let rate = long_term_rate(out.result.skl_bits, h, pass.duration_s()).unwrap();
        assert!(rate < previous, "h = {h}: {rate} bit/s");
        previous = rate;
    }
}
