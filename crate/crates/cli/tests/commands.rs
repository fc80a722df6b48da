mod common;

use common::{cli, load, scenario_path, scenario_value, write_scenario};
use satqkd_cli::commands::{self, BudgetRow, Format, McReport, Outcome, PassRow, RelayTranscript};
use satqkd_cli::{EXIT_ABORTED, EXIT_OK};
use serde_json::{json, Value};

fn parse_csv<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Vec<T> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .unwrap()
}

#[test]
fn pass_csv_round_trips_exactly() {
    let scenario = load("snspd-pol-2");
    let pass = scenario.pass().unwrap();
    let out = commands::pass(&scenario, Format::Csv).unwrap();
    let bytes = &out.primary().bytes;
    assert!(!bytes.contains(&b'\r'));
    assert!(bytes.starts_with(b"t_s,elevation_deg,slant_range_km\n"));
    let rows: Vec<PassRow> = parse_csv(bytes);
    assert_eq!(rows.len(), pass.len());
    for (row, s) in rows.iter().zip(&pass.samples) {
        assert_eq!((row.t_s, row.elevation_deg, row.slant_range_km), (s.t_s, s.elevation_deg, s.slant_range_km));
    }
    let json_rows: Vec<PassRow> = serde_json::from_slice(&commands::pass(&scenario, Format::Json).unwrap().primary().bytes).unwrap();
    assert_eq!(json_rows, rows);
}

#[test]
fn one_second_pass_has_one_row_per_second() {
    let out = cli(&["pass", "--scenario", scenario_path("spcm-pol-1").to_str().unwrap()]);
    assert_eq!(out.code, EXIT_OK);
    let rows: Vec<PassRow> = parse_csv(&out.stdout);
    let duration = rows.last().unwrap().t_s - rows[0].t_s;
    assert_eq!(rows.len() as f64, duration + 1.0);
    let peak = rows.iter().map(|r| r.elevation_deg).fold(0.0, f64::max);
    assert!((peak - 80.0).abs() < 1e-9);
    let n = rows.len();
    for i in 0..n / 2 {
        assert!((rows[i].elevation_deg - rows[n - 1 - i].elevation_deg).abs() < 1e-9);
    }
}

#[test]
fn budget_rows_add_up_and_improve_with_elevation() {
    let scenario = load("spcm-pol-2");
    let out = commands::budget(&scenario, Format::Csv).unwrap();
    let rows: Vec<BudgetRow> = parse_csv(&out.primary().bytes);
    for r in &rows {
        let sum = r.free_space_loss_db + r.atmospheric_loss_db + r.pointing_loss_db + r.rx_path_loss_db + r.coupling_loss_db
            - r.tx_gain_db
            - r.rx_area_gain_db;
        assert!((sum - r.total_db).abs() < 1e-9);
        assert!((r.eta - 10f64.powf(-r.total_db / 10.0)).abs() <= 1e-12 * r.eta);
    }
    let rising: Vec<&BudgetRow> = rows.iter().filter(|r| r.t_s <= 0.0).collect();
    for w in rising.windows(2) {
        assert!(w[1].total_db < w[0].total_db);
    }
    // culmination row checked against an independent evaluation of the budget
    let top = rows.iter().find(|r| r.t_s == 0.0).unwrap();
    assert!((top.slant_range_km - 575.017_996_397_468_8).abs() < 1e-6);
    assert!((top.total_db - 27.300_862_901_826_747).abs() < 1e-9);
}

#[test]
fn skl_uses_listed_parameters_and_overrides() {
    let path = scenario_path("snspd-pol-2");
    let out = cli(&["skl", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_OK);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["params"]["mu"], json!(0.6));
    let base = report["result"]["skl_bits"].as_f64().unwrap();
    assert!(base > 0.0);

    let out = cli(&["skl", "--scenario", path.to_str().unwrap(), "--min-elevation", "60"]);
    let high: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(high["params"]["min_elevation_deg"], json!(60.0));
    assert!(high["result"]["skl_bits"].as_f64().unwrap() < base);

    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    std::fs::write(
        &params,
        r#"{"mu": 0.9, "nu": 0.85, "p_mu": 0.05, "p_nu": 0.05, "p_z": 0.99, "min_elevation_deg": 20}"#,
    )
    .unwrap();
    let out = cli(&["skl", "--scenario", path.to_str().unwrap(), "--params", params.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_ABORTED);
    let aborted: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(aborted["result"]["aborted"], json!(true));
    assert_eq!(aborted["result"]["skl_bits"], json!(0.0));
}

#[test]
fn aborted_optimisation_exits_with_code_three() {
    let mut v = scenario_value("idqube-pol-1");
    v["detector"]["dark_count_rate_hz"] = json!(3e6);
    v["optimizer"] = json!({"coarse_grid_steps": 2, "refine_iterations": 1, "rel_tolerance": 0.1, "rng_seed": 0, "random_probes": 0});
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &v);
    let out_dir = dir.path().join("out");
    let out = cli(&["optimize", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.code, EXIT_ABORTED);
    let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["exit_code"], json!(EXIT_ABORTED));
}

#[test]
fn optimize_on_snspd_reaches_lowest_elevation() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "optimize",
        "--scenario",
        scenario_path("snspd-pol-2").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("optimize.json")).unwrap()).unwrap();
    assert_eq!(report["params"]["min_elevation_deg"], json!(20.0));
    assert_eq!(report["rng_seed"], json!(3));
    let trace_name = report["trace_path"].as_str().unwrap();
    let trace = std::fs::read(dir.path().join(trace_name)).unwrap();
    let lines = trace.iter().filter(|b| **b == b'\n').count();
    assert_eq!(lines as u64, report["evaluations"].as_u64().unwrap() + 1);

    let run: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(run["command"], json!("optimize"));
    assert_eq!(run["seed"], json!(3));
    assert_eq!(run["outputs"], json!(["optimize.json", "optimize_trace.csv"]));
    assert_eq!(run["scenario_digest"].as_str().unwrap(), load("snspd-pol-2").digest);
}

#[test]
fn mc_validate_agrees_within_three_sigma() {
    let scenario = load("snspd-pol-2");
    let out = commands::mc_validate(&scenario, 0, 10, 1e-3).unwrap();
    let report: McReport = serde_json::from_slice(&out.primary().bytes).unwrap();
    assert_eq!(out.outcome, Outcome::Ok);
    assert_eq!(report.seeds, (0..10).collect::<Vec<u64>>());
    assert_eq!(report.pooled.len(), 12);
    assert!(report.all_within_3_sigma);
    assert!(report.pooled.iter().any(|c| c.expected > 1e5));
}

#[test]
fn relay_demo_recovers_stored_key() {
    let out = cli(&["relay-demo", "--lengths", "1,7,8,9,1000", "--seed", "11"]);
    assert_eq!(out.code, EXIT_OK);
    let t: RelayTranscript = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(t.rounds.len(), 5);
    assert!(t.all_recovered);
    assert_eq!(t.residual_key_bytes, 0);
    for r in &t.rounds {
        assert_eq!(r.recovered_hex, r.k_a_hex);
        assert_eq!(r.consumed_bits, 2 * r.bit_len as u64);
        assert_eq!(r.payload_hex.len(), 2 * r.bit_len.div_ceil(8));
    }
    let bad = commands::relay_demo(&[0], 1);
    assert!(bad.is_err());
}

#[test]
fn sweep_lists_requested_elevations() {
    let mut v = scenario_value("spcm-pol-1");
    v["optimizer"] = json!({"coarse_grid_steps": 4, "refine_iterations": 4, "rel_tolerance": 1e-3, "rng_seed": 0, "random_probes": 4});
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), &v);
    let out = cli(&["sweep-elevation", "--scenario", path.to_str().unwrap(), "--max-elevations", "15,45,90", "--format", "json"]);
    assert_eq!(out.code, EXIT_OK);
    let rows: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["aborted"], json!(true));
    assert_eq!(rows[0]["mu"], Value::Null);
    assert!(rows[2]["skl_bits"].as_f64().unwrap() > rows[1]["skl_bits"].as_f64().unwrap());
}
