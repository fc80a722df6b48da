//! Whole-pass optimisation of the source parameters and the post-processing
//! minimum elevation.
//!
//! The five continuous parameters live on a unit cube. The search evaluates
//! a full grid on the cube, then refines the best grid point one coordinate
//! at a time with golden-section line searches on a shrinking bracket, and
//! finally tries a handful of seeded random neighbours. For every candidate
//! the minimum elevation is chosen exhaustively on a 1 degree grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{tallies_at, ChannelTrace, DetectorSpec, SourceSpec, TallySet};
use crate::error::{invalid, Result};
use crate::finite_key::{asymptotic_skr, evaluate_block, DecoyScheme, SecurityParams, SklResult, Statistics};
use crate::link_budget::LinkHardware;
use crate::orbit::{coverage_and_availability, synth_pass, GroundStation, OrbitSpec, PassGeometry};

pub const MIN_ELEVATION_LOWER_DEG: u32 = 20;
pub const MIN_ELEVATION_UPPER_DEG: u32 = 80;

const MU_RANGE: (f64, f64) = (0.1, 1.0);
const NU_FLOOR: f64 = 0.01;
const NU_GAP: f64 = 0.01;
const P_FLOOR: f64 = 0.01;
const P_Z_RANGE: (f64, f64) = (0.5, 0.99);
const GOLDEN_STEPS: usize = 14;
const PROBE_RADIUS: f64 = 0.05;

const DIMS: usize = 5;
type Cube = [f64; DIMS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamVector {
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_z: f64,
    pub min_elevation_deg: f64,
}

impl ParamVector {
    pub fn validate(&self, scheme: DecoyScheme) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < self.mu && self.mu <= 1.0) {
            return Err(invalid("params.nu", "need 0 < nu < mu <= 1"));
        }
        if !(self.p_mu > 0.0 && self.p_nu > 0.0) {
            return Err(invalid("params.p_mu", "p_mu and p_nu must be positive"));
        }
        let total = self.p_mu + self.p_nu;
        match scheme {
            DecoyScheme::TwoDecoy if total > 1.0 => {
                return Err(invalid("params.p_nu", "p_mu + p_nu must not exceed 1"))
            }
            DecoyScheme::OneDecoy if (total - 1.0).abs() > 1e-9 => {
                return Err(invalid("params.p_nu", "p_mu + p_nu must equal 1 with one decoy"))
            }
            _ => {}
        }
        if !(self.p_z > 0.0 && self.p_z < 1.0) {
            return Err(invalid("params.p_z", "must lie in (0, 1)"));
        }
        let lo = f64::from(MIN_ELEVATION_LOWER_DEG);
        let hi = f64::from(MIN_ELEVATION_UPPER_DEG);
        if !(lo..=hi).contains(&self.min_elevation_deg) {
            return Err(invalid("params.min_elevation_deg", "must lie in [20, 80]"));
        }
        Ok(())
    }

    /// Source with these intensities and probabilities; pulse rate and
    /// misalignment come from `template`.
    pub fn apply(&self, template: &SourceSpec, scheme: DecoyScheme) -> SourceSpec {
        SourceSpec {
            signal_intensity: self.mu,
            decoy_intensity: self.nu,
            vacuum_included: scheme.uses_vacuum(),
            p_mu: self.p_mu,
            p_nu: self.p_nu,
            p_z_alice: self.p_z,
            p_z_bob: self.p_z,
            ..*template
        }
    }

    fn from_cube(u: &Cube, scheme: DecoyScheme, min_elevation_deg: f64) -> Self {
        let mu = MU_RANGE.0 + (MU_RANGE.1 - MU_RANGE.0) * u[0];
        let nu = NU_FLOOR + u[1] * (mu - NU_GAP - NU_FLOOR);
        let (p_mu, p_nu) = match scheme {
            DecoyScheme::TwoDecoy => {
                let p_mu = P_FLOOR + (1.0 - 3.0 * P_FLOOR) * u[2];
                let p_nu = P_FLOOR + u[3] * (1.0 - 2.0 * P_FLOOR - p_mu);
                (p_mu, p_nu)
            }
            DecoyScheme::OneDecoy => {
                let p_mu = P_FLOOR + (1.0 - 2.0 * P_FLOOR) * u[2];
                (p_mu, 1.0 - p_mu)
            }
        };
        let p_z = P_Z_RANGE.0 + (P_Z_RANGE.1 - P_Z_RANGE.0) * u[4];
        Self {
            mu,
            nu,
            p_mu,
            p_nu,
            p_z,
            min_elevation_deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub coarse_grid_steps: u32,
    /// Maximum number of coordinate sweeps after the grid.
    pub refine_iterations: u32,
    pub rel_tolerance: f64,
    pub rng_seed: u64,
    #[serde(default = "default_random_probes")]
    pub random_probes: u32,
    /// Pins the minimum elevation instead of optimising it.
    #[serde(default)]
    pub fixed_min_elevation_deg: Option<f64>,
}

fn default_random_probes() -> u32 {
    16
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            coarse_grid_steps: 8,
            refine_iterations: 20,
            rel_tolerance: 1e-3,
            rng_seed: 0,
            random_probes: default_random_probes(),
            fixed_min_elevation_deg: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_grid_steps < 2 {
            return Err(invalid("optimizer.coarse_grid_steps", "must be at least 2"));
        }
        if self.refine_iterations == 0 {
            return Err(invalid("optimizer.refine_iterations", "must be positive"));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(invalid("optimizer.rel_tolerance", "must be positive"));
        }
        if let Some(e) = self.fixed_min_elevation_deg {
            let lo = f64::from(MIN_ELEVATION_LOWER_DEG);
            let hi = f64::from(MIN_ELEVATION_UPPER_DEG);
            if !(lo..=hi).contains(&e) {
                return Err(invalid("optimizer.fixed_min_elevation_deg", "must lie in [20, 80]"));
            }
        }
        Ok(())
    }
}

/// Everything about the link except the pass and the tunable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSetup {
    pub hardware: LinkHardware,
    pub detector: DetectorSpec,
    /// Pulse rate and misalignment; the intensities and probabilities are
    /// replaced by each candidate.
    pub source: SourceSpec,
    pub security: SecurityParams,
    pub scheme: DecoyScheme,
    /// Receiver picks its basis 50/50 instead of following `p_z`.
    #[serde(default)]
    pub passive_receiver_basis: bool,
}

impl MissionSetup {
    pub fn source_for(&self, params: &ParamVector) -> SourceSpec {
        let mut source = params.apply(&self.source, self.scheme);
        if self.passive_receiver_basis {
            source.p_z_bob = 0.5;
        }
        source
    }

    pub fn validate(&self) -> Result<()> {
        self.hardware.validate()?;
        self.detector.validate()?;
        self.source.validate()?;
        self.security.validate()
    }

    pub fn channel_trace(&self, pass: &PassGeometry) -> Result<ChannelTrace> {
        let breakdowns = pass
            .samples
            .iter()
            .map(|s| self.hardware.breakdown(s))
            .collect::<Result<Vec<_>>>()?;
        ChannelTrace::new(pass, &breakdowns, &self.detector)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStage {
    Grid,
    Refine,
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: SearchStage,
    pub params: ParamVector,
    pub skl_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub params: ParamVector,
    pub result: SklResult,
    pub trace: Vec<TraceEntry>,
}

impl OptimizationOutcome {
    /// True when no traced candidate beats the returned key length.
    pub fn dominates_trace(&self) -> bool {
        self.trace.iter().all(|e| e.skl_bits <= self.result.skl_bits)
    }
}

/// Evaluates whole-pass key lengths for one trace.
struct PassObjective<'a> {
    trace: &'a ChannelTrace,
    setup: &'a MissionSetup,
    /// Sample indices by decreasing elevation.
    order: Vec<usize>,
    /// Candidate minimum elevations with the number of samples at or above each.
    cuts: Vec<(f64, usize)>,
}

impl<'a> PassObjective<'a> {
    fn new(trace: &'a ChannelTrace, setup: &'a MissionSetup, fixed: Option<f64>) -> Self {
        let mut order: Vec<usize> = (0..trace.samples.len()).collect();
        order.sort_by(|&a, &b| {
            trace.samples[b]
                .elevation_deg
                .total_cmp(&trace.samples[a].elevation_deg)
                .then(a.cmp(&b))
        });
        let elevations: Vec<f64> = match fixed {
            Some(e) => vec![e],
            None => (MIN_ELEVATION_LOWER_DEG..=MIN_ELEVATION_UPPER_DEG)
                .map(f64::from)
                .collect(),
        };
        let cuts = elevations
            .into_iter()
            .map(|e| {
                let count = order
                    .iter()
                    .take_while(|&&i| trace.samples[i].elevation_deg >= e)
                    .count();
                (e, count)
            })
            .collect();
        Self {
            trace,
            setup,
            order,
            cuts,
        }
    }

    /// Best key length over the minimum-elevation grid; ties go to the lower
    /// elevation.
    fn evaluate(&self, u: &Cube) -> (ParamVector, SklResult) {
        let scheme = self.setup.scheme;
        let mut params = ParamVector::from_cube(u, scheme, self.cuts[0].0);
        let source = self.setup.source_for(&params);
        let pulses = source.pulse_rate_hz * self.trace.sample_dt_s;

        let max_count = self.cuts.iter().map(|c| c.1).max().unwrap_or(0);
        let mut prefix = Vec::with_capacity(max_count + 1);
        let mut running = TallySet::default();
        prefix.push(running);
        for &i in self.order.iter().take(max_count) {
            let t = tallies_at(self.trace.samples[i].eta_total, pulses, &source, &self.setup.detector);
            running.add(&t);
            prefix.push(running);
        }

        let mut best: Option<(f64, SklResult)> = None;
        for &(elevation, count) in &self.cuts {
            let result = if count == 0 {
                SklResult::zero("no samples above the minimum elevation")
            } else {
                match evaluate_block(scheme, &prefix[count], &source, &self.setup.security, Statistics::Finite) {
                    Ok(r) => r,
                    Err(e) => SklResult::zero(e.to_string()),
                }
            };
            let better = match &best {
                None => true,
                Some((_, b)) => result.skl_bits > b.skl_bits,
            };
            if better {
                best = Some((elevation, result));
            }
        }
        let (elevation, result) = best.expect("at least one elevation cut");
        params.min_elevation_deg = elevation;
        (params, result)
    }
}

struct SearchOutcome<T> {
    best: T,
    score: f64,
    evaluated: Vec<(SearchStage, T, f64)>,
}

fn grid_points(dims: usize, steps: u32) -> Vec<Cube> {
    let s = steps as usize;
    let total = s.pow(dims as u32);
    (0..total)
        .map(|mut idx| {
            let mut u = [0.0; DIMS];
            for slot in u.iter_mut().take(dims).rev() {
                *slot = (idx % s) as f64 / (s - 1) as f64;
                idx /= s;
            }
            u
        })
        .collect()
}

/// Grid, coordinate refinement and random probes over the first `dims`
/// coordinates of the cube.
fn search<T, F>(dims: usize, config: &OptimizerConfig, keep_trace: bool, eval: F) -> SearchOutcome<T>
where
    T: Clone + Send,
    F: Fn(&Cube) -> (T, f64) + Sync,
{
    let grid = grid_points(dims, config.coarse_grid_steps);
    let scored: Vec<(T, f64)> = grid.par_iter().map(|u| eval(u)).collect();

    let mut best_idx = 0;
    for (i, (_, score)) in scored.iter().enumerate() {
        if *score > scored[best_idx].1 {
            best_idx = i;
        }
    }
    let mut best_u = grid[best_idx];
    let (mut best, mut score) = scored[best_idx].clone();
    let mut evaluated: Vec<(SearchStage, T, f64)> = if keep_trace {
        scored.into_iter().map(|(t, s)| (SearchStage::Grid, t, s)).collect()
    } else {
        Vec::new()
    };
    let record = |stage, t: &T, s: f64, evaluated: &mut Vec<(SearchStage, T, f64)>| {
        if keep_trace {
            evaluated.push((stage, t.clone(), s));
        }
    };

    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut width = 1.0 / (config.coarse_grid_steps - 1) as f64;
    for _ in 0..config.refine_iterations {
        let sweep_start = score;
        for d in 0..dims {
            let lo = (best_u[d] - width).max(0.0);
            let hi = (best_u[d] + width).min(1.0);
            let at = |x: f64| {
                let mut u = best_u;
                u[d] = x;
                (u, eval(&u))
            };
            let (mut a, mut b) = (lo, hi);
            let mut c = b - golden * (b - a);
            let mut e = a + golden * (b - a);
            let mut fc = at(c);
            let mut fe = at(e);
            record(SearchStage::Refine, &fc.1 .0, fc.1 .1, &mut evaluated);
            record(SearchStage::Refine, &fe.1 .0, fe.1 .1, &mut evaluated);
            for _ in 0..GOLDEN_STEPS {
                if fc.1 .1 >= fe.1 .1 {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - golden * (b - a);
                    fc = at(c);
                    record(SearchStage::Refine, &fc.1 .0, fc.1 .1, &mut evaluated);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + golden * (b - a);
                    fe = at(e);
                    record(SearchStage::Refine, &fe.1 .0, fe.1 .1, &mut evaluated);
                }
            }
            let (u, (t, s)) = if fc.1 .1 >= fe.1 .1 { fc } else { fe };
            if s > score {
                best_u = u;
                best = t;
                score = s;
            }
        }
        width *= 0.5;
        let gain = score - sweep_start;
        if !(gain > config.rel_tolerance * score.abs()) {
            break;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    for _ in 0..config.random_probes {
        let mut u = best_u;
        for slot in u.iter_mut().take(dims) {
            *slot = (*slot + rng.random_range(-PROBE_RADIUS..=PROBE_RADIUS)).clamp(0.0, 1.0);
        }
        let (t, s) = eval(&u);
        record(SearchStage::Probe, &t, s, &mut evaluated);
        if s > score {
            best_u = u;
            best = t;
            score = s;
        }
    }

    SearchOutcome {
        best,
        score,
        evaluated,
    }
}

fn search_dims(scheme: DecoyScheme) -> usize {
    match scheme {
        DecoyScheme::TwoDecoy => 5,
        DecoyScheme::OneDecoy => 4,
    }
}

/// Maps the 4-D one-decoy search onto the cube layout, where `u[3]` is unused.
fn widen(u: &Cube, scheme: DecoyScheme) -> Cube {
    match scheme {
        DecoyScheme::TwoDecoy => *u,
        DecoyScheme::OneDecoy => [u[0], u[1], u[2], 0.0, u[3]],
    }
}

/// Maximises the finite-key length of one pass over the source parameters
/// and the minimum elevation.
pub fn optimize_pass(pass: &PassGeometry, setup: &MissionSetup, config: &OptimizerConfig) -> Result<OptimizationOutcome> {
    config.validate()?;
    setup.validate()?;
    let trace = setup.channel_trace(pass)?;
    optimize_trace(&trace, setup, config)
}

pub fn optimize_trace(trace: &ChannelTrace, setup: &MissionSetup, config: &OptimizerConfig) -> Result<OptimizationOutcome> {
    config.validate()?;
    let objective = PassObjective::new(trace, setup, config.fixed_min_elevation_deg);
    let scheme = setup.scheme;
    let outcome = search(search_dims(scheme), config, true, |u| {
        let (params, result) = objective.evaluate(&widen(u, scheme));
        let score = result.skl_bits;
        ((params, result), score)
    });
    let (params, result) = outcome.best;
    let trace = outcome
        .evaluated
        .into_iter()
        .map(|(stage, (params, _), skl_bits)| TraceEntry {
            stage,
            params,
            skl_bits,
        })
        .collect();
    Ok(OptimizationOutcome { params, result, trace })
}

/// Key length of a pass at fixed parameters.
pub fn evaluate_params(pass: &PassGeometry, setup: &MissionSetup, params: &ParamVector) -> Result<SklResult> {
    setup.validate()?;
    params.validate(setup.scheme)?;
    let trace = setup.channel_trace(pass)?;
    let source = setup.source_for(params);
    source.validate()?;
    let tallies = crate::channel::expected_tallies_from_trace(&trace, &source, &setup.detector, params.min_elevation_deg, 1.0);
    evaluate_block(setup.scheme, &tallies, &source, &setup.security, Statistics::Finite)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t_s: f64,
    pub elevation_deg: f64,
    /// Secure bits per sent pulse.
    pub skr_per_pulse: f64,
}

/// Infinite-block key rate per pulse, with the source parameters optimised
/// separately at every sample.
pub fn pointwise_asymptotic_profile(
    pass: &PassGeometry,
    setup: &MissionSetup,
    config: &OptimizerConfig,
) -> Result<Vec<ProfilePoint>> {
    config.validate()?;
    setup.validate()?;
    let trace = setup.channel_trace(pass)?;
    let scheme = setup.scheme;
    let mut out = Vec::with_capacity(trace.samples.len());
    for sample in &trace.samples {
        let best = search(search_dims(scheme), config, false, |u| {
            let params = ParamVector::from_cube(&widen(u, scheme), scheme, f64::from(MIN_ELEVATION_LOWER_DEG));
            let source = setup.source_for(&params);
            let rate = asymptotic_skr(sample.eta_total, &source, &setup.detector, &setup.security, scheme).unwrap_or(0.0);
            ((), rate)
        });
        out.push(ProfilePoint {
            t_s: sample.t_s,
            elevation_deg: sample.elevation_deg,
            skr_per_pulse: best.score,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub max_elevation_deg: f64,
    pub pass_duration_s: f64,
    pub params: Option<ParamVector>,
    pub skl_bits: f64,
    pub aborted: bool,
}

/// One optimisation per culmination elevation, with the minimum elevation
/// pinned to `min_elevation_deg`.
pub fn sweep_max_elevation(
    orbit: &OrbitSpec,
    min_elevation_deg: f64,
    max_elevations_deg: &[f64],
    sample_dt_s: f64,
    setup: &MissionSetup,
    config: &OptimizerConfig,
) -> Result<Vec<SweepRow>> {
    let config = OptimizerConfig {
        fixed_min_elevation_deg: Some(min_elevation_deg),
        ..*config
    };
    config.validate()?;
    let mut rows = Vec::with_capacity(max_elevations_deg.len());
    for &max_elevation in max_elevations_deg {
        if !(max_elevation <= 90.0) {
            return Err(invalid("max_elevation_deg", "must not exceed 90"));
        }
        if max_elevation <= min_elevation_deg {
            rows.push(SweepRow {
                max_elevation_deg: max_elevation,
                pass_duration_s: 0.0,
                params: None,
                skl_bits: 0.0,
                aborted: true,
            });
            continue;
        }
        let station = GroundStation::new(min_elevation_deg, max_elevation)?;
        let pass = synth_pass(orbit, &station, sample_dt_s)?;
        let outcome = optimize_pass(&pass, setup, &config)?;
        rows.push(SweepRow {
            max_elevation_deg: max_elevation,
            pass_duration_s: pass.duration_s(),
            params: Some(outcome.params),
            skl_bits: outcome.result.skl_bits,
            aborted: outcome.result.aborted,
        });
    }
    Ok(rows)
}

/// Long-term average key rate in bit/s: the pass key length spread over the
/// pass duration and weighted by the fraction of time a satellite at
/// `altitude_km` is in view.
pub fn long_term_rate(skl_bits: f64, altitude_km: f64, pass_duration_s: f64) -> Result<f64> {
    if !(pass_duration_s > 0.0) {
        return Err(invalid("pass_duration_s", "must be positive"));
    }
    let availability = coverage_and_availability(altitude_km)?.availability;
    Ok(skl_bits * availability / pass_duration_s)
}
