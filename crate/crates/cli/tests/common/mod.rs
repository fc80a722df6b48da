#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;
use satqkd_cli::scenario::LoadedScenario;
use satqkd_cli::{run, Cli};

pub const BUNDLED: [&str; 9] = [
    "snspd-pol-2",
    "snspd-pol-1",
    "snspd-tb-2",
    "idqube-pol-2",
    "idqube-pol-1",
    "idqube-tb-2",
    "spcm-pol-2",
    "spcm-pol-1",
    "spcm-tb-2",
];

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

pub fn load(name: &str) -> LoadedScenario {
    LoadedScenario::load(&scenario_path(name)).unwrap()
}

pub fn scenario_value(name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

pub struct RunResult {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

pub fn cli(args: &[&str]) -> RunResult {
    let parsed = Cli::try_parse_from(std::iter::once("satqkd").chain(args.iter().copied())).unwrap();
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = run(&parsed, &mut stdout, &mut stderr);
    RunResult {
        code,
        stdout,
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

/// Writes `value` as a scenario file in `dir` and returns its path.
pub fn write_scenario(dir: &Path, value: &serde_json::Value) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}
