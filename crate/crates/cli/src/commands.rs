//! Command bodies. Each returns its artifacts in memory; the caller decides
//! whether they go to disk or to stdout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use satqkd_core::channel::{expected_tallies_from_trace, TallySet};
use satqkd_core::monte_carlo::monte_carlo_tallies;
use satqkd_core::optimizer::{
    evaluate_params, long_term_rate, optimize_pass, sweep_max_elevation, OptimizerConfig, ParamVector, SearchStage,
};
use satqkd_core::relay::{recover, BitKey, KeyStatus, KeyStore};
use satqkd_core::Error;

use crate::scenario::LoadedScenario;

pub const TRACE_FILE: &str = "optimize_trace.csv";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// The protocol aborted or produced no key.
    Aborted,
    /// A self-check inside the command failed.
    CheckFailed,
}

/// Artifacts of one command; the first one is the primary output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    pub outcome: Outcome,
}

impl CommandOutput {
    fn single(name: String, bytes: Vec<u8>, outcome: Outcome) -> Self {
        Self {
            artifacts: vec![Artifact { name, bytes }],
            outcome,
        }
    }

    pub fn primary(&self) -> &Artifact {
        &self.artifacts[0]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, CommandError>;

/// Pretty JSON with keys in sorted order.
pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("report types serialise");
    let mut out = serde_json::to_vec_pretty(&value).expect("JSON values serialise");
    out.push(b'\n');
    out
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    writer.into_inner().map_err(|e| CommandError::Usage(e.to_string()))
}

fn table<T: Serialize>(stem: &str, rows: &[T], format: Format) -> Result<Artifact> {
    let bytes = match format {
        Format::Csv => to_csv(rows)?,
        Format::Json => to_json(&rows),
    };
    Ok(Artifact {
        name: format!("{stem}.{}", format.extension()),
        bytes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRow {
    pub t_s: f64,
    pub elevation_deg: f64,
    pub slant_range_km: f64,
}

pub fn pass(scenario: &LoadedScenario, format: Format) -> Result<CommandOutput> {
    let rows: Vec<PassRow> = scenario
        .pass()?
        .samples
        .iter()
        .map(|s| PassRow {
            t_s: s.t_s,
            elevation_deg: s.elevation_deg,
            slant_range_km: s.slant_range_km,
        })
        .collect();
    let artifact = table("pass", &rows, format)?;
    Ok(CommandOutput {
        artifacts: vec![artifact],
        outcome: Outcome::Ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub t_s: f64,
    pub elevation_deg: f64,
    pub slant_range_km: f64,
    pub tx_gain_db: f64,
    pub rx_area_gain_db: f64,
    pub free_space_loss_db: f64,
    pub atmospheric_loss_db: f64,
    pub pointing_loss_db: f64,
    pub rx_path_loss_db: f64,
    pub coupling_loss_db: f64,
    pub total_db: f64,
    pub eta: f64,
}

pub fn budget_rows(scenario: &LoadedScenario) -> Result<Vec<BudgetRow>> {
    let hardware = &scenario.setup.hardware;
    let mut rows = Vec::new();
    for sample in &scenario.pass()?.samples {
        let b = hardware.breakdown(sample)?;
        rows.push(BudgetRow {
            t_s: sample.t_s,
            elevation_deg: b.elevation_deg,
            slant_range_km: b.slant_range_km,
            tx_gain_db: b.tx_gain_db,
            rx_area_gain_db: b.rx_area_gain_db,
            free_space_loss_db: b.free_space_loss_db,
            atmospheric_loss_db: b.atmospheric_loss_db,
            pointing_loss_db: b.pointing_loss_db,
            rx_path_loss_db: b.rx_path_loss_db,
            coupling_loss_db: b.coupling_loss_db,
            total_db: b.total_db,
            eta: b.eta,
        });
    }
    Ok(rows)
}

pub fn budget(scenario: &LoadedScenario, format: Format) -> Result<CommandOutput> {
    let artifact = table("budget", &budget_rows(scenario)?, format)?;
    Ok(CommandOutput {
        artifacts: vec![artifact],
        outcome: Outcome::Ok,
    })
}

fn outcome_of(aborted: bool) -> Outcome {
    if aborted {
        Outcome::Aborted
    } else {
        Outcome::Ok
    }
}

/// `params` defaults to the source section of the scenario at the station's
/// minimum elevation.
pub fn skl(scenario: &LoadedScenario, params: Option<ParamVector>, min_elevation_deg: Option<f64>) -> Result<CommandOutput> {
    let mut params = params.unwrap_or_else(|| scenario.scenario.listed_params());
    if let Some(e) = min_elevation_deg {
        params.min_elevation_deg = e;
    }
    let pass = scenario.pass()?;
    let result = evaluate_params(&pass, &scenario.setup, &params)?;
    let report = serde_json::json!({
        "params": params,
        "result": result,
        "scheme": scenario.setup.scheme,
        "pass_duration_s": pass.duration_above_s(params.min_elevation_deg),
    });
    Ok(CommandOutput::single("skl.json".into(), to_json(&report), outcome_of(result.aborted)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: usize,
    pub stage: SearchStage,
    pub mu: f64,
    pub nu: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_z: f64,
    pub min_elevation_deg: f64,
    pub skl_bits: f64,
}

fn config_with_seed(scenario: &LoadedScenario, seed: Option<u64>) -> OptimizerConfig {
    let mut config = scenario.scenario.optimizer;
    if let Some(seed) = seed {
        config.rng_seed = seed;
    }
    config
}

pub fn optimize(scenario: &LoadedScenario, seed: Option<u64>) -> Result<CommandOutput> {
    let config = config_with_seed(scenario, seed);
    let pass = scenario.pass()?;
    let outcome = optimize_pass(&pass, &scenario.setup, &config)?;
    let rows: Vec<TraceRow> = outcome
        .trace
        .iter()
        .enumerate()
        .map(|(index, e)| TraceRow {
            index,
            stage: e.stage,
            mu: e.params.mu,
            nu: e.params.nu,
            p_mu: e.params.p_mu,
            p_nu: e.params.p_nu,
            p_z: e.params.p_z,
            min_elevation_deg: e.params.min_elevation_deg,
            skl_bits: e.skl_bits,
        })
        .collect();
    let altitude = scenario.orbit.altitude_km;
    let rate = long_term_rate(outcome.result.skl_bits, altitude, pass.duration_s())?;
    let report = serde_json::json!({
        "params": outcome.params,
        "result": outcome.result,
        "scheme": scenario.setup.scheme,
        "evaluations": rows.len(),
        "rng_seed": config.rng_seed,
        "pass_duration_s": pass.duration_s(),
        "long_term_rate_bps": rate,
        "trace_path": TRACE_FILE,
    });
    Ok(CommandOutput {
        artifacts: vec![
            Artifact {
                name: "optimize.json".into(),
                bytes: to_json(&report),
            },
            Artifact {
                name: TRACE_FILE.into(),
                bytes: to_csv(&rows)?,
            },
        ],
        outcome: outcome_of(outcome.result.aborted),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub max_elevation_deg: f64,
    pub pass_duration_s: f64,
    pub skl_bits: f64,
    pub aborted: bool,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub p_mu: Option<f64>,
    pub p_nu: Option<f64>,
    pub p_z: Option<f64>,
    pub min_elevation_deg: Option<f64>,
}

pub const DEFAULT_SWEEP: [f64; 7] = [30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];

pub fn sweep_elevation(scenario: &LoadedScenario, max_elevations: &[f64], seed: Option<u64>, format: Format) -> Result<CommandOutput> {
    if max_elevations.is_empty() {
        return Err(CommandError::Usage("--max-elevations needs at least one value".into()));
    }
    let config = config_with_seed(scenario, seed);
    let s = &scenario.scenario;
    let rows = sweep_max_elevation(
        &scenario.orbit,
        s.station.min_elevation_deg,
        max_elevations,
        s.orbit.sample_dt_s,
        &scenario.setup,
        &config,
    )?;
    let flat: Vec<SweepCsvRow> = rows
        .iter()
        .map(|r| SweepCsvRow {
            max_elevation_deg: r.max_elevation_deg,
            pass_duration_s: r.pass_duration_s,
            skl_bits: r.skl_bits,
            aborted: r.aborted,
            mu: r.params.map(|p| p.mu),
            nu: r.params.map(|p| p.nu),
            p_mu: r.params.map(|p| p.p_mu),
            p_nu: r.params.map(|p| p.p_nu),
            p_z: r.params.map(|p| p.p_z),
            min_elevation_deg: r.params.map(|p| p.min_elevation_deg),
        })
        .collect();
    let artifact = table("sweep_elevation", &flat, format)?;
    Ok(CommandOutput {
        artifacts: vec![artifact],
        outcome: Outcome::Ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCheck {
    pub field: String,
    pub expected: f64,
    pub observed: f64,
    pub sigma: f64,
    pub z_score: f64,
    pub within_3_sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub seeds: Vec<u64>,
    pub thinning: f64,
    pub min_elevation_deg: f64,
    pub pulses_per_run: f64,
    /// Sums over all seeds compared with the summed expectation.
    pub pooled: Vec<FieldCheck>,
    /// Largest single-run deviation in units of its own sigma.
    pub max_single_run_z: f64,
    pub all_within_3_sigma: bool,
}

fn binomial_sigma(expected: f64, trials: f64) -> f64 {
    if trials > 0.0 {
        (expected * (1.0 - expected / trials)).max(0.0).sqrt()
    } else {
        0.0
    }
}

fn z_score(observed: f64, expected: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        (observed - expected) / sigma
    } else if observed == expected {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn mc_validate(scenario: &LoadedScenario, seed: u64, n_seeds: u32, thinning: f64) -> Result<CommandOutput> {
    if n_seeds == 0 {
        return Err(CommandError::Usage("--seeds must be at least 1".into()));
    }
    let setup = &scenario.setup;
    let params = scenario.scenario.listed_params();
    let source = setup.source_for(&params);
    let trace = setup.channel_trace(&scenario.pass()?)?;
    let min_elev = params.min_elevation_deg;
    let expected = expected_tallies_from_trace(&trace, &source, &setup.detector, min_elev, thinning);

    let seeds: Vec<u64> = (0..u64::from(n_seeds)).map(|i| seed.wrapping_add(i)).collect();
    let mut pooled = TallySet::default();
    let mut max_single_run_z: f64 = 0.0;
    for &s in &seeds {
        let run = monte_carlo_tallies(s, &trace, &source, &setup.detector, min_elev, thinning)?;
        for ((_, got), (_, want)) in run.tallies.fields().into_iter().zip(expected.fields()) {
            let z = z_score(got, want, binomial_sigma(want, expected.n_sent));
            max_single_run_z = max_single_run_z.max(z.abs());
        }
        pooled.add(&run.tallies);
    }
    let total = expected.scaled(seeds.len() as f64);
    let checks: Vec<FieldCheck> = pooled
        .fields()
        .into_iter()
        .zip(total.fields())
        .map(|((field, observed), (_, want))| {
            let sigma = binomial_sigma(want, total.n_sent);
            let z = z_score(observed, want, sigma);
            FieldCheck {
                field,
                expected: want,
                observed,
                sigma,
                z_score: z,
                within_3_sigma: z.abs() <= 3.0,
            }
        })
        .collect();
    let all = checks.iter().all(|c| c.within_3_sigma);
    let report = McReport {
        seeds,
        thinning,
        min_elevation_deg: min_elev,
        pulses_per_run: expected.n_sent,
        pooled: checks,
        max_single_run_z,
        all_within_3_sigma: all,
    };
    let outcome = if all { Outcome::Ok } else { Outcome::CheckFailed };
    Ok(CommandOutput::single("mc_validate.json".into(), to_json(&report), outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayRound {
    pub bit_len: usize,
    pub key_id_a: u64,
    pub key_id_b: u64,
    pub k_a_hex: String,
    pub k_b_hex: String,
    pub payload_hex: String,
    pub recovered_hex: String,
    pub recovered_matches: bool,
    pub erased: bool,
    pub consumed_bits: u64,
    pub relayed_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayTranscript {
    pub seed: u64,
    pub rounds: Vec<RelayRound>,
    pub residual_key_bytes: usize,
    pub all_recovered: bool,
}

pub const DEFAULT_RELAY_LENGTHS: [usize; 3] = [64, 1000, 4096];

pub fn relay_demo(lengths: &[usize], seed: u64) -> Result<CommandOutput> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(CommandError::Usage("--lengths needs positive bit counts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = KeyStore::new();
    let mut rounds = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let k_a = BitKey::random(&mut rng, n);
        let k_b = BitKey::random(&mut rng, n);
        let before = store.accounting();
        let id_a = store.store_key("ogs_a", k_a.clone())?;
        let id_b = store.store_key("ogs_b", k_b.clone())?;
        let message = store.combine_and_broadcast(id_a, id_b)?;
        let recovered = recover(&k_b, &message)?;
        let after = store.accounting();
        let erased = [id_a, id_b].iter().all(|id| {
            store
                .lookup(*id)
                .is_some_and(|r| r.status == KeyStatus::Consumed && r.bits().is_all_zero())
        });
        rounds.push(RelayRound {
            bit_len: n,
            key_id_a: id_a,
            key_id_b: id_b,
            k_a_hex: k_a.to_hex(),
            k_b_hex: k_b.to_hex(),
            payload_hex: message.payload.to_hex(),
            recovered_hex: recovered.to_hex(),
            recovered_matches: recovered == k_a,
            erased,
            consumed_bits: after.consumed_bits - before.consumed_bits,
            relayed_bits: after.relayed_bits - before.relayed_bits,
        });
    }
    let all = rounds
        .iter()
        .all(|r| r.recovered_matches && r.erased && r.consumed_bits == 2 * r.relayed_bits);
    let transcript = RelayTranscript {
        seed,
        rounds,
        residual_key_bytes: store.residual_consumed_bytes(),
        all_recovered: all,
    };
    let outcome = if all && transcript.residual_key_bytes == 0 {
        Outcome::Ok
    } else {
        Outcome::CheckFailed
    };
    Ok(CommandOutput::single("relay_demo.json".into(), to_json(&transcript), outcome))
}

/// Summary written next to the outputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub command: String,
    pub scenario_digest: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
}

impl RunReport {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("report serialises")
    }
}
