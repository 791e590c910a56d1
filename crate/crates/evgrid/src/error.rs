//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by simulation setup and execution.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown EVSE id `{0}`")]
    UnknownEvse(String),

    #[error("negative rate {rate} A requested for EVSE `{station}`")]
    NegativeRate { station: String, rate: f64 },

    #[error("negative pilot signal {0} A")]
    NegativePilot(f64),

    #[error("fixed rates are infeasible before assigning `{station}`")]
    InfeasibleFixedRates { station: String },

    #[error("EVSE `{station}` is already occupied by session `{occupant}`")]
    EvseOccupied { station: String, occupant: String },

    #[error("session `{0}` has no station assignment in a deterministic network")]
    MissingStation(String),

    #[error("transformer capacity must be positive, got {0} kW")]
    NonpositiveCapacity(f64),

    #[error("{name} must be positive, got {value}")]
    NonpositiveArgument { name: &'static str, value: f64 },

    #[error("polygon approximation needs at least 3 sides, got {0}")]
    TooFewSides(usize),

    #[error("tariff `{name}` does not cover {instant}")]
    UncoveredInstant { name: String, instant: String },

    #[error("tariff `{name}` fails coverage validation: {detail}")]
    TariffCoverage { name: String, detail: String },

    #[error("signal period of {signal_minutes} min does not match the simulation period of {sim_minutes} min")]
    PeriodMismatch {
        signal_minutes: f64,
        sim_minutes: f64,
    },

    #[error("mixture sampling exhausted its rejection budget ({0} redraws)")]
    RejectionBudget(usize),

    #[error("scheduling algorithm `{name}` failed at period {period}: {detail}")]
    Algorithm {
        name: String,
        period: u32,
        detail: String,
    },

    #[error("objective term `{0}` cannot be built: {1}")]
    ObjectiveTerm(&'static str, String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an io error with the offending path, which the CLI surfaces in
    /// diagnostics.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
