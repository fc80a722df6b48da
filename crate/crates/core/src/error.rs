use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("no sun-synchronous solution at altitude {altitude_km} km")]
    NoSunSynchronousSolution { altitude_km: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("near-field regime unsupported (transmission {eta} exceeds 1)")]
    NearFieldUnsupported { eta: f64 },

    #[error("error fraction undefined: detection probability is zero")]
    UndefinedQber,

    #[error("no atmospheric data for wavelength {wavelength_nm} nm")]
    MissingAtmosphereBand { wavelength_nm: f64 },

    #[error("atmosphere table: {0}")]
    AtmosphereTable(String),

    #[error("key {0} not found")]
    UnknownKey(u64),

    #[error("key {0} already consumed")]
    KeyConsumed(u64),

    #[error("key length mismatch: {left} vs {right} bits")]
    KeyLengthMismatch { left: usize, right: usize },

    #[error("empty key material")]
    EmptyKey,

    #[error("snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
