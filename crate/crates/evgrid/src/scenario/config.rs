//! The scenario document: one JSON file that names the network, the
//! workload, the tariff and signals, battery defaults, and the algorithm,
//! so a run is reproducible from a single artifact plus a seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{baseline_by_name, SchedulingAlgorithm};
use crate::engine::{SignalSet, SimConfig, SimRecord, Simulation};
use crate::error::{Error, Result};
use crate::events::EventQueue;
use crate::hardware::{kwh_to_amp_periods, Battery, BatteryKind, PilotModel};
use crate::mpc::{MpcAlgorithm, MpcObjective, MpcOptions, ObjectiveTerm, SolveOptions};
use crate::network::{
    auto_network, AssignmentMode, AutoNetworkOptions, Network, NetworkSpec, Phasing,
};
use crate::signals::{Tariff, TimeSeriesSignal};

use super::gmm::MixtureConfig;
use super::sessions::{IngestOptions, SessionRecord};

/// Station list for auto-built sites: either a count (named
/// `evse-01`, `evse-02`, ...) or explicit ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StationsSpec {
    Count(u32),
    Names(Vec<String>),
}

impl StationsSpec {
    pub fn names(&self) -> Vec<String> {
        match self {
            StationsSpec::Count(n) => (1..=*n).map(|i| format!("evse-{i:02}")).collect(),
            StationsSpec::Names(names) => names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvseConfig {
    #[serde(default = "default_model")]
    pub model: PilotModel,
    #[serde(default = "default_max_rate")]
    pub max_rate_a: f64,
}

fn default_model() -> PilotModel {
    PilotModel::Continuous
}

fn default_max_rate() -> f64 {
    32.0
}

impl Default for EvseConfig {
    fn default() -> Self {
        EvseConfig {
            model: default_model(),
            max_rate_a: default_max_rate(),
        }
    }
}

/// Auto-built site parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoConfig {
    pub stations: StationsSpec,
    pub transformer_kw: f64,
    pub phasing: Phasing,
    /// Port voltage; defaults to 208 V (single phase) or 120 V
    /// line-to-neutral (three phase).
    #[serde(default)]
    pub voltage: Option<f64>,
    #[serde(default = "default_assignment")]
    pub assignment: AssignmentMode,
    #[serde(default)]
    pub early_departure: bool,
    /// Keep only the aggregate transformer cap (no per-phase lines).
    #[serde(default)]
    pub aggregate_only: bool,
    #[serde(default)]
    pub evse: EvseConfig,
}

fn default_assignment() -> AssignmentMode {
    AssignmentMode::Deterministic
}

impl AutoConfig {
    pub fn build(&self) -> Result<Network> {
        let mut options = AutoNetworkOptions::new(self.phasing);
        if let Some(voltage) = self.voltage {
            options.voltage = voltage;
        }
        options.evse_model = self.evse.model.clone();
        options.evse_max_rate = self.evse.max_rate_a;
        options.assignment = self.assignment;
        options.early_departure = self.early_departure;
        options.aggregate_only = self.aggregate_only;
        auto_network(&self.stations.names(), self.transformer_kw, &options)
    }
}

/// Where the network comes from: an auto-built site or a description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkConfig {
    Auto(AutoConfig),
    File(String),
}

/// Where events come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventsConfig {
    /// JSON array of session records.
    SessionsFile(String),
    /// JSON-lines event list (replay format).
    EventsFile(String),
    /// Gaussian-mixture workload generator.
    Gmm(MixtureConfig),
    /// Session records embedded in the scenario document.
    Inline(Vec<SessionRecord>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TariffConfig {
    /// `flat` or `tou_demand`.
    Builtin(String),
    File(String),
}

impl TariffConfig {
    pub fn load(&self, base: &Path) -> Result<Tariff> {
        match self {
            TariffConfig::Builtin(name) => match name.as_str() {
                "flat" => Ok(Tariff::flat(0.1)),
                "tou_demand" => Ok(Tariff::tou_demand()),
                other => Err(Error::Scenario(format!("unknown builtin tariff `{other}`"))),
            },
            TariffConfig::File(path) => {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                Tariff::from_json(&text)
            }
        }
    }
}

/// Battery defaults applied to every generated session. When
/// `capacity_kwh` is absent the pack is sized to the session's request
/// (initial charge zero), so delivery stops exactly at the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    #[serde(default = "default_battery_kind")]
    pub kind: String,
    #[serde(default = "default_max_rate")]
    pub max_rate_a: f64,
    #[serde(default)]
    pub capacity_kwh: Option<f64>,
    #[serde(default = "default_threshold")]
    pub two_stage_threshold: f64,
}

fn default_battery_kind() -> String {
    "ideal".into()
}

fn default_threshold() -> f64 {
    0.8
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            kind: default_battery_kind(),
            max_rate_a: default_max_rate(),
            capacity_kwh: None,
            two_stage_threshold: default_threshold(),
        }
    }
}

impl BatteryConfig {
    pub fn kind(&self) -> Result<BatteryKind> {
        match self.kind.as_str() {
            "ideal" => Ok(BatteryKind::Ideal),
            "two_stage" => Ok(BatteryKind::TwoStage {
                threshold: self.two_stage_threshold,
            }),
            other => Err(Error::Scenario(format!("unknown battery kind `{other}`"))),
        }
    }

    pub fn build(&self, requested_amp_periods: f64, config: &SimConfig) -> Result<Battery> {
        let kind = self.kind()?;
        let capacity = match self.capacity_kwh {
            Some(kwh) => kwh_to_amp_periods(kwh, config.voltage, config.period_minutes)?,
            None => requested_amp_periods.max(1.0),
        };
        Ok(Battery::with_headroom_for(
            kind,
            capacity,
            requested_amp_periods,
            self.max_rate_a,
        ))
    }
}

/// Algorithm selection: a baseline name (`uncontrolled`, `round_robin`,
/// `fcfs`, `lcfs`, `edf`, `lrpt`, `llf`) or `mpc` with its options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub name: String,
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default)]
    pub terms: Option<Vec<ObjectiveTerm>>,
    #[serde(default)]
    pub sides: Option<usize>,
    #[serde(default)]
    pub horizon_cap: Option<u32>,
    #[serde(default)]
    pub equal_share_epsilon: Option<f64>,
}

impl AlgorithmConfig {
    pub fn named(name: &str) -> Self {
        AlgorithmConfig {
            name: name.into(),
            objective: None,
            terms: None,
            sides: None,
            horizon_cap: None,
            equal_share_epsilon: None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn SchedulingAlgorithm + Send>> {
        if self.name != "mpc" {
            return baseline_by_name(&self.name)
                .ok_or_else(|| Error::Scenario(format!("unknown algorithm `{}`", self.name)));
        }
        let objective = match (&self.terms, self.objective.as_deref()) {
            (Some(terms), _) => MpcObjective::Custom { terms: terms.clone() },
            (None, Some("quick_charge") | None) => MpcObjective::QuickCharge,
            (None, Some("cost_minimizing")) => MpcObjective::CostMinimizing,
            (None, Some("load_flattening")) => MpcObjective::LoadFlattening,
            (None, Some(other)) => {
                return Err(Error::Scenario(format!("unknown MPC objective `{other}`")))
            }
        };
        let mut options = MpcOptions {
            objective,
            equal_share_epsilon: self.equal_share_epsilon,
            ..MpcOptions::default()
        };
        if let Some(sides) = self.sides {
            options.sides = sides;
        }
        if let Some(cap) = self.horizon_cap {
            options.horizon_cap = cap;
        }
        options.solve = SolveOptions::default();
        Ok(Box::new(MpcAlgorithm::new(options)))
    }
}

/// The top-level scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub period_minutes: f64,
    pub start: chrono::NaiveDateTime,
    #[serde(default)]
    pub horizon_periods: Option<u32>,
    #[serde(default = "default_voltage")]
    pub voltage: f64,
    #[serde(default)]
    pub recompute_period: Option<u32>,
    pub network: NetworkConfig,
    pub events: EventsConfig,
    #[serde(default)]
    pub tariff: Option<TariffConfig>,
    #[serde(default)]
    pub external_load_csv: Option<String>,
    #[serde(default)]
    pub solar_csv: Option<String>,
    #[serde(default)]
    pub battery: BatteryConfig,
    #[serde(default)]
    pub estimate_noise_periods: Option<f64>,
    pub algorithm: AlgorithmConfig,
}

fn default_voltage() -> f64 {
    208.0
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut config = SimConfig::new(self.period_minutes, self.start);
        config.horizon = self.horizon_periods;
        config.voltage = self.voltage;
        config.recompute_period = self.recompute_period;
        config
    }

    pub fn build_network(&self, base: &Path) -> Result<Network> {
        match &self.network {
            NetworkConfig::Auto(auto) => auto.build(),
            NetworkConfig::File(path) => {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                let spec: NetworkSpec = serde_json::from_str(&text)?;
                spec.build()
            }
        }
    }

    /// Materializes a fresh event queue. Sessions are stateful, so every
    /// run gets its own copy; identical seeds give identical queues.
    pub fn build_events(&self, base: &Path) -> Result<(EventQueue, Vec<String>)> {
        let sim = self.sim_config();
        let ingest = IngestOptions {
            battery: self.battery.clone(),
            estimate_noise_periods: self.estimate_noise_periods,
            seed: self.seed,
        };
        match &self.events {
            EventsConfig::SessionsFile(path) => {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                let records: Vec<SessionRecord> = serde_json::from_str(&text)?;
                super::sessions::sessions_to_events(&records, &sim, &ingest)
            }
            EventsConfig::Inline(records) => {
                super::sessions::sessions_to_events(records, &sim, &ingest)
            }
            EventsConfig::EventsFile(path) => {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                Ok((EventQueue::from_jsonl(&text)?, Vec::new()))
            }
            EventsConfig::Gmm(spec) => {
                let queue = super::gmm::sample_events(spec, &sim, &self.battery, self.seed)?;
                Ok((queue, Vec::new()))
            }
        }
    }

    pub fn build_signals(&self, base: &Path) -> Result<SignalSet> {
        let mut signals = SignalSet::default();
        if let Some(tariff) = &self.tariff {
            let tariff = tariff.load(base)?;
            tariff.validate()?;
            signals.tariff = Some(tariff);
        }
        for (source, slot) in [
            (&self.external_load_csv, &mut signals.external_load),
            (&self.solar_csv, &mut signals.solar),
        ] {
            if let Some(path) = source {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                *slot = Some(TimeSeriesSignal::from_csv(&text, self.period_minutes)?);
            }
        }
        Ok(signals)
    }

    /// Builds the full simulation. `base` resolves relative file
    /// references (usually the config file's directory).
    pub fn build_simulation(&self, base: &Path) -> Result<Simulation> {
        let network = self.build_network(base)?;
        let (events, _warnings) = self.build_events(base)?;
        let signals = self.build_signals(base)?;
        let algorithm = self.algorithm.build()?;
        Simulation::new(self.sim_config(), network, events, algorithm, signals)
    }

    /// Parses and cross-checks everything without running: network
    /// invariants, tariff coverage, referenced files, event construction.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.build_network(base)?;
        self.build_signals(base)?;
        self.build_events(base)?;
        self.algorithm.build()?;
        if self.period_minutes <= 0.0 {
            return Err(Error::Scenario("period_minutes must be positive".into()));
        }
        Ok(())
    }

    /// Runs the scenario to completion.
    pub fn run(&self, base: &Path) -> Result<SimRecord> {
        self.build_simulation(base)?.run()
    }
}

/// Base directory for resolving a config's relative paths.
pub fn config_base(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
