//! Declarative scenario files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use satqkd_core::channel::{DetectorSpec, SourceSpec};
use satqkd_core::finite_key::{DecoyScheme, SecurityParams};
use satqkd_core::link_budget::{AtmosphereBand, AtmosphereModel, AtmosphereTable, LinkHardware, ReceiverSpec, TransmitterSpec};
use satqkd_core::optimizer::{MissionSetup, OptimizerConfig, ParamVector};
use satqkd_core::orbit::{synth_pass, GroundStation, OrbitSpec, PassGeometry};
use satqkd_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Polarisation,
    TimeBin,
}

/// Which rate `source.pulse_rate_hz` holds fixed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateConvention {
    /// Qubits per second.
    #[default]
    Qubit,
    /// Optical slots per second; a time-bin qubit takes three slots.
    Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSection {
    pub altitude_km: f64,
    /// Sun-synchronous inclination when absent.
    #[serde(default)]
    pub inclination_deg: Option<f64>,
    pub sample_dt_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereSection {
    pub bands: Vec<AtmosphereBand>,
    /// Two-column CSV (elevation_deg, loss_db), relative to the scenario file.
    #[serde(default)]
    pub override_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub pulse_rate_hz: f64,
    #[serde(default)]
    pub rate_convention: RateConvention,
    pub signal_intensity: f64,
    pub decoy_intensity: f64,
    pub p_mu: f64,
    pub p_nu: f64,
    pub p_z_alice: f64,
    /// Passive 50/50 receiver when absent.
    #[serde(default)]
    pub p_z_bob: Option<f64>,
    pub misalignment_z: f64,
    pub misalignment_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub orbit: OrbitSection,
    pub station: GroundStation,
    pub transmitter: TransmitterSpec,
    pub receiver: ReceiverSpec,
    pub atmosphere: AtmosphereSection,
    pub detector: DetectorSpec,
    pub source: SourceSection,
    pub security: SecurityParams,
    pub optimizer: OptimizerConfig,
    pub encoding: Encoding,
    pub n_decoys: u8,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] Error),
}

/// A scenario checked against every model invariant, with the derived
/// objects the commands need.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// SHA-256 of the canonical JSON form of the file.
    pub digest: String,
    pub orbit: OrbitSpec,
    pub setup: MissionSetup,
}

pub fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json maps are ordered by key unless `preserve_order` is enabled
    serde_json::to_string(value).expect("JSON values always serialise")
}

pub fn digest_of(value: &serde_json::Value) -> String {
    let hash = Sha256::digest(canonical_json(value).as_bytes());
    hex::encode(hash)
}

impl Scenario {
    pub fn scheme(&self) -> Result<DecoyScheme, Error> {
        DecoyScheme::from_count(self.n_decoys)
    }

    /// Source parameters as listed in the file, with the qubit rate and the
    /// receiver basis choice resolved.
    pub fn source_spec(&self) -> Result<SourceSpec, Error> {
        let s = &self.source;
        let qubit_rate = match (self.encoding, s.rate_convention) {
            (Encoding::TimeBin, RateConvention::Slot) => s.pulse_rate_hz / 3.0,
            _ => s.pulse_rate_hz,
        };
        Ok(SourceSpec {
            pulse_rate_hz: qubit_rate,
            signal_intensity: s.signal_intensity,
            decoy_intensity: s.decoy_intensity,
            vacuum_included: self.scheme()?.uses_vacuum(),
            p_mu: s.p_mu,
            p_nu: s.p_nu,
            p_z_alice: s.p_z_alice,
            p_z_bob: s.p_z_bob.unwrap_or(0.5),
            misalignment_z: s.misalignment_z,
            misalignment_x: s.misalignment_x,
        })
    }

    /// Source parameters of the file as a parameter vector at the station's
    /// minimum elevation.
    pub fn listed_params(&self) -> ParamVector {
        ParamVector {
            mu: self.source.signal_intensity,
            nu: self.source.decoy_intensity,
            p_mu: self.source.p_mu,
            p_nu: self.source.p_nu,
            p_z: self.source.p_z_alice,
            min_elevation_deg: self.station.min_elevation_deg,
        }
    }

    fn orbit_spec(&self) -> Result<OrbitSpec, Error> {
        match self.orbit.inclination_deg {
            Some(i) => OrbitSpec::new(self.orbit.altitude_km, i),
            None => OrbitSpec::sun_synchronous(self.orbit.altitude_km).map_err(|e| match e {
                Error::NoSunSynchronousSolution { altitude_km } => invalid(
                    "orbit.altitude_km",
                    format!("no sun-synchronous inclination at {altitude_km} km; set orbit.inclination_deg"),
                ),
                other => other,
            }),
        }
    }

    pub fn validate(&self, base_dir: &Path) -> Result<(OrbitSpec, MissionSetup), Error> {
        if !(self.orbit.sample_dt_s > 0.0 && self.orbit.sample_dt_s.is_finite()) {
            return Err(invalid("orbit.sample_dt_s", "must be positive"));
        }
        if !(self.orbit.altitude_km > 0.0 && self.orbit.altitude_km.is_finite()) {
            return Err(invalid("orbit.altitude_km", "must be positive and finite"));
        }
        let orbit = self.orbit_spec()?;
        self.station.validate()?;
        let scheme = self.scheme()?;
        let s = &self.source;
        if let Some(p) = s.p_z_bob {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid("source.p_z_bob", "must lie in (0, 1)"));
            }
        }
        if self.atmosphere.bands.is_empty() && self.atmosphere.override_table.is_none() {
            return Err(invalid("atmosphere.bands", "need at least one band"));
        }
        let override_table = match &self.atmosphere.override_table {
            Some(path) => Some(AtmosphereTable::load(&base_dir.join(path))?),
            None => None,
        };
        let hardware = LinkHardware {
            transmitter: self.transmitter,
            receiver: self.receiver,
            atmosphere: AtmosphereModel {
                bands: self.atmosphere.bands.clone(),
                override_table,
            },
        };
        hardware.validate().map_err(|e| match e {
            Error::MissingAtmosphereBand { wavelength_nm } => invalid(
                "transmitter.wavelength_nm",
                format!("no atmosphere band at {wavelength_nm} nm"),
            ),
            other => other,
        })?;
        let source = self.source_spec()?;
        source.validate()?;
        let setup = MissionSetup {
            hardware,
            detector: self.detector.clone(),
            source,
            security: self.security,
            scheme,
            passive_receiver_basis: s.p_z_bob.is_none(),
        };
        setup.validate()?;
        self.optimizer.validate()?;
        Ok((orbit, setup))
    }

    pub fn pass(&self, orbit: &OrbitSpec) -> Result<PassGeometry, Error> {
        synth_pass(orbit, &self.station, self.orbit.sample_dt_s)
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

impl LoadedScenario {
    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let scenario: Scenario = serde_json::from_value(value.clone()).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let (orbit, setup) = scenario.validate(base_dir)?;
        Ok(Self {
            scenario,
            digest: digest_of(&value),
            orbit,
            setup,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_str(&text, base)
    }

    pub fn pass(&self) -> Result<PassGeometry, Error> {
        self.scenario.pass(&self.orbit)
    }
}
