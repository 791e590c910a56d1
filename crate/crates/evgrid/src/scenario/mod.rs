//! Scenario tooling: config documents, session-record ingestion,
//! Gaussian-mixture workload sampling, run metrics, capacity sweeps, and
//! grid-profile export.

pub mod config;
pub mod export;
pub mod gmm;
pub mod metrics;
pub mod sessions;
pub mod sweep;

pub use config::{
    config_base, AlgorithmConfig, AutoConfig, BatteryConfig, EventsConfig, NetworkConfig,
    ScenarioConfig, StationsSpec, TariffConfig,
};
pub use export::export_load_profile;
pub use gmm::{sample_events, ArrivalsPerDay, MixtureComponent, MixtureConfig};
pub use metrics::{audit_against_network, compute_metrics, MetricsReport};
pub use sessions::{sessions_to_events, IngestOptions, SessionRecord};
pub use sweep::{capacity_sweep, sweep_to_csv, SweepConfig, SweepRow};
