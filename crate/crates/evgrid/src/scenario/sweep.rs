//! Capacity sweeps: one simulation per (algorithm, transformer capacity)
//! over a fixed workload, with an optional hindsight benchmark per
//! capacity.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventKind;
use crate::hardware::{amp_periods_to_kwh, SessionEv};
use crate::mpc::{offline_optimal, SolveOptions, OFFLINE_SIDES};
use crate::scenario::config::{AlgorithmConfig, NetworkConfig, ScenarioConfig};
use crate::scenario::metrics::{compute_metrics, MetricsReport};

/// Sweep document: a base scenario (its `network.auto.transformer_kw` is
/// overridden per run), the algorithms to compare, and the capacity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenario: ScenarioConfig,
    pub algorithms: Vec<AlgorithmConfig>,
    pub capacities_kw: Vec<f64>,
    /// Adds an `offline-optimal` row per capacity (needs pre-assigned
    /// stations, i.e. a deterministic workload).
    #[serde(default = "default_true")]
    pub include_offline: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<SweepConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub capacity_kw: f64,
    pub metrics: MetricsReport,
}

fn scenario_for(config: &SweepConfig, algorithm: &AlgorithmConfig, capacity: f64) -> Result<ScenarioConfig> {
    let mut scenario = config.scenario.clone();
    match &mut scenario.network {
        NetworkConfig::Auto(auto) => auto.transformer_kw = capacity,
        NetworkConfig::File(_) => {
            return Err(Error::Scenario(
                "capacity sweeps need an auto network to size".into(),
            ))
        }
    }
    scenario.algorithm = algorithm.clone();
    Ok(scenario)
}

fn sessions_from_events(scenario: &ScenarioConfig, base: &Path) -> Result<Vec<SessionEv>> {
    let (queue, _) = scenario.build_events(base)?;
    Ok(queue
        .sorted_events()
        .into_iter()
        .filter_map(|event| match event.kind {
            EventKind::Plugin { session } => Some(*session),
            _ => None,
        })
        .collect())
}

/// Runs the full sweep. Rows come back sorted by (capacity, algorithm)
/// regardless of worker scheduling, so repeated runs produce identical
/// tables.
pub fn capacity_sweep(config: &SweepConfig, base: &Path) -> Result<Vec<SweepRow>> {
    let mut tasks: Vec<(String, f64, ScenarioConfig)> = Vec::new();
    for capacity in &config.capacities_kw {
        for algorithm in &config.algorithms {
            let scenario = scenario_for(config, algorithm, *capacity)?;
            tasks.push((algorithm.name.clone(), *capacity, scenario));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Scenario(format!("worker pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(name, capacity, scenario)| {
                let record = scenario.run(base)?;
                let tariff = scenario
                    .build_signals(base)?
                    .tariff;
                let mut metrics = compute_metrics(&record, tariff.as_ref())?;
                metrics.algorithm = Some(name.clone());
                metrics.capacity_kw = Some(*capacity);
                Ok(SweepRow {
                    algorithm: name.clone(),
                    capacity_kw: *capacity,
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    if config.include_offline {
        for capacity in &config.capacities_kw {
            let scenario = scenario_for(config, &config.algorithms[0], *capacity)?;
            let network = scenario.build_network(base)?;
            let sessions = sessions_from_events(&scenario, base)?;
            let bench = offline_optimal(&sessions, &network, OFFLINE_SIDES, &SolveOptions::default())?;
            let deliverable: f64 = sessions.iter().map(|s| s.remaining_demand()).sum();
            let demand_met = (deliverable > 0.0)
                .then(|| (bench.delivered_amp_periods / deliverable).min(1.0));
            let metrics = MetricsReport {
                algorithm: Some("offline-optimal".into()),
                capacity_kw: Some(*capacity),
                demand_met,
                swaps: 0,
                peak_kw: 0.0,
                violation_count: 0,
                max_overload_amps: 0.0,
                delivered_kwh: amp_periods_to_kwh(
                    bench.delivered_amp_periods,
                    scenario.voltage,
                    scenario.period_minutes,
                ),
                requested_kwh: amp_periods_to_kwh(
                    deliverable,
                    scenario.voltage,
                    scenario.period_minutes,
                ),
                energy_cost: None,
                demand_cost: None,
                total_cost: None,
                cost_per_kwh: None,
            };
            rows.push(SweepRow {
                algorithm: "offline-optimal".into(),
                capacity_kw: *capacity,
                metrics,
            });
        }
    }

    rows.sort_by(|a, b| {
        a.capacity_kw
            .total_cmp(&b.capacity_kw)
            .then_with(|| a.algorithm.cmp(&b.algorithm))
    });
    Ok(rows)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Renders sweep rows as CSV, one row per (capacity, algorithm).
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "algorithm,capacity_kw,demand_met,delivered_kwh,requested_kwh,swaps,peak_kw,\
         violation_count,max_overload_amps,energy_cost,demand_cost,total_cost,cost_per_kwh\n",
    );
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.algorithm,
            row.capacity_kw,
            fmt_opt(m.demand_met),
            m.delivered_kwh,
            m.requested_kwh,
            m.swaps,
            m.peak_kw,
            m.violation_count,
            m.max_overload_amps,
            fmt_opt(m.energy_cost),
            fmt_opt(m.demand_cost),
            fmt_opt(m.total_cost),
            fmt_opt(m.cost_per_kwh),
        ));
    }
    out
}
