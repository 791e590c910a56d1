//! Run metrics: demand met, swaps, peaks, constraint violations, and cost.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::SimRecord;
use crate::error::Result;
use crate::hardware::amp_periods_to_kwh;
use crate::network::Network;
use crate::signals::{billing_cost, Tariff};

/// Slack above a limit before a period counts as a violation.
pub const VIOLATION_TOLERANCE_AMPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub algorithm: Option<String>,
    pub capacity_kw: Option<f64>,
    /// Fraction of (deliverable) requested energy served; absent when the
    /// run had no sessions.
    pub demand_met: Option<f64>,
    pub swaps: u64,
    pub peak_kw: f64,
    pub violation_count: u64,
    pub max_overload_amps: f64,
    pub delivered_kwh: f64,
    pub requested_kwh: f64,
    pub energy_cost: Option<f64>,
    pub demand_cost: Option<f64>,
    pub total_cost: Option<f64>,
    pub cost_per_kwh: Option<f64>,
}

/// Computes the standard report for a completed run. Requests are capped
/// at what each battery could absorb, so demand-met stays in `[0, 1]`;
/// violations count (period, constraint) pairs where the recorded current
/// magnitude exceeds its limit.
pub fn compute_metrics(record: &SimRecord, tariff: Option<&Tariff>) -> Result<MetricsReport> {
    let mut deliverable = 0.0;
    let mut served = 0.0;
    for session in &record.sessions {
        deliverable += session.deliverable_amp_periods;
        served += session
            .delivered_amp_periods
            .min(session.deliverable_amp_periods);
    }
    let demand_met = if record.sessions.is_empty() || deliverable <= 0.0 {
        None
    } else {
        Some(served / deliverable)
    };
    let peak_kw = record.aggregate_kw.iter().cloned().fold(0.0, f64::max);

    let mut violation_count = 0;
    let mut max_overload: f64 = 0.0;
    for info in &record.constraints {
        if let Some(series) = record.constraint_current.get(&info.id) {
            for magnitude in series {
                let overload = magnitude - info.limit;
                if overload > VIOLATION_TOLERANCE_AMPS {
                    violation_count += 1;
                    max_overload = max_overload.max(overload);
                }
            }
        }
    }

    let hours_per_period = record.config.period_minutes / 60.0;
    let delivered_kwh: f64 = record.aggregate_kw.iter().map(|kw| kw * hours_per_period).sum();
    let requested_kwh = amp_periods_to_kwh(
        deliverable,
        record.config.voltage,
        record.config.period_minutes,
    );

    let bill = tariff.map(|t| billing_cost(record, t)).transpose()?;
    Ok(MetricsReport {
        algorithm: None,
        capacity_kw: None,
        demand_met,
        swaps: record.swaps,
        peak_kw,
        violation_count,
        max_overload_amps: max_overload,
        delivered_kwh,
        requested_kwh,
        energy_cost: bill.as_ref().map(|b| b.energy_cost),
        demand_cost: bill.as_ref().map(|b| b.demand_cost),
        total_cost: bill.as_ref().map(|b| b.total_cost),
        cost_per_kwh: bill.and_then(|b| b.cost_per_kwh),
    })
}

/// Re-checks a record's actual currents against a (possibly different)
/// constraint set, e.g. auditing a run scheduled on a blind network against
/// the full three-phase model. Returns the violation count and the worst
/// overload in amps.
pub fn audit_against_network(record: &SimRecord, network: &Network) -> Result<(u64, f64)> {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    let periods = record.periods as usize;
    for t in 0..periods {
        let rates: BTreeMap<String, f64> = record
            .actual
            .iter()
            .map(|(station, series)| (station.clone(), series[t]))
            .collect();
        for constraint in network.constraints() {
            let magnitude = network.constraint_current(constraint, &rates);
            let overload = magnitude - constraint.limit;
            if overload > VIOLATION_TOLERANCE_AMPS {
                count += 1;
                worst = worst.max(overload);
            }
        }
    }
    Ok((count, worst))
}
