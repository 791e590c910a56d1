//! Baseline online scheduling algorithms behind one `schedule(view)`
//! interface.
//!
//! All of them are pure functions of the [`AlgoView`]: they see active
//! sessions (estimated departures only), the constraint model, and pilot
//! envelopes, and return per-station rate columns. Every algorithm except
//! `Uncontrolled` returns schedules that pass the true phasor feasibility
//! check.

use std::collections::{BTreeMap, VecDeque};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{AlgoView, ScheduleDiagnostics, SessionView};
use crate::error::{Error, Result};
use crate::network::{Network, FEASIBILITY_TOLERANCE_AMPS, RATE_SEARCH_TOLERANCE_AMPS};

/// Per-station pilot-current columns produced by one schedule call. Each
/// column is valid for one period starting at the call time; the engine
/// holds the final column until the next recompute.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub rates: BTreeMap<String, Vec<f64>>,
}

impl Schedule {
    pub fn empty() -> Schedule {
        Schedule::default()
    }

    pub fn single_column(rates: BTreeMap<String, f64>) -> Schedule {
        Schedule {
            rates: rates.into_iter().map(|(k, v)| (k, vec![v])).collect(),
        }
    }

    /// First-column rate vector, for feasibility checks.
    pub fn first_column(&self) -> BTreeMap<String, f64> {
        self.rates
            .iter()
            .map(|(k, v)| (k.clone(), v.first().copied().unwrap_or(0.0)))
            .collect()
    }
}

/// An online scheduling algorithm. Implementations must derive everything
/// from the view; in particular the actual departure time of a session is
/// not visible and must not matter.
pub trait SchedulingAlgorithm {
    fn name(&self) -> String;
    fn schedule(&mut self, view: &AlgoView) -> Result<Schedule>;
    /// Drained by the engine after each call; predictive algorithms report
    /// solver statistics here.
    fn take_diagnostics(&mut self) -> Option<ScheduleDiagnostics> {
        None
    }
}

/// Every active EV charges at its EVSE's maximum rate. Infrastructure
/// constraints are deliberately ignored; this is the no-management baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uncontrolled;

impl SchedulingAlgorithm for Uncontrolled {
    fn name(&self) -> String {
        "uncontrolled".into()
    }

    fn schedule(&mut self, view: &AlgoView) -> Result<Schedule> {
        let mut rates = BTreeMap::new();
        for session in &view.sessions {
            let max = view.network().evse(&session.station_id)?.max_rate;
            rates.insert(session.station_id.clone(), max);
        }
        Ok(Schedule::single_column(rates))
    }
}

/// Shares capacity by repeatedly granting one pilot increment to the head of
/// a queue of active EVs (1 A for continuous units, the next admissible set
/// point otherwise). An EV whose increment would break feasibility or its
/// own bounds is frozen; the loop ends when every EV is frozen.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundRobin;

impl SchedulingAlgorithm for RoundRobin {
    fn name(&self) -> String {
        "round_robin".into()
    }

    fn schedule(&mut self, view: &AlgoView) -> Result<Schedule> {
        let network = view.network();
        let mut order: Vec<&SessionView> = view.sessions.iter().collect();
        order.sort_by(|a, b| {
            (a.arrival, &a.station_id).cmp(&(b.arrival, &b.station_id))
        });
        let mut queue: VecDeque<&SessionView> = order.into_iter().collect();
        let mut rates: BTreeMap<String, f64> = queue
            .iter()
            .map(|s| (s.station_id.clone(), 0.0))
            .collect();
        while let Some(session) = queue.pop_front() {
            let evse = network.evse(&session.station_id)?;
            let cap = evse.max_rate.min(session.charger_max_rate);
            let current = rates[&session.station_id];
            let Some(next) = evse.model.step_up(current, cap) else {
                continue;
            };
            rates.insert(session.station_id.clone(), next);
            if network.is_feasible(&rates, FEASIBILITY_TOLERANCE_AMPS)? {
                queue.push_back(session);
            } else {
                rates.insert(session.station_id.clone(), current);
            }
        }
        Ok(Schedule::single_column(rates))
    }
}

/// Ordering metric for the one-pass sorted algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    /// First come, first served: arrival ascending.
    Fcfs,
    /// Last come, first served: arrival descending.
    Lcfs,
    /// Earliest (estimated) deadline first.
    Edf,
    /// Longest remaining processing time first: remaining demand over the
    /// effective service rate, descending.
    Lrpt,
    /// Least laxity first.
    Llf,
}

impl FromStr for SortKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<SortKey> {
        match s {
            "fcfs" => Ok(SortKey::Fcfs),
            "lcfs" => Ok(SortKey::Lcfs),
            "edf" => Ok(SortKey::Edf),
            "lrpt" => Ok(SortKey::Lrpt),
            "llf" => Ok(SortKey::Llf),
            other => Err(Error::Scenario(format!("unknown sort key `{other}`"))),
        }
    }
}

/// Slack before a session can no longer be served in full: periods to the
/// estimated deadline minus the periods needed at the effective maximum
/// rate. Negative laxity marks an infeasible session, which stays
/// schedulable.
pub fn laxity(session: &SessionView, effective_max: f64, now: u32) -> f64 {
    let to_deadline = session.departure_estimated as f64 - now as f64;
    if effective_max <= 0.0 {
        return f64::NEG_INFINITY;
    }
    to_deadline - session.remaining_amp_periods / effective_max
}

/// One-pass deadline scheduling: sort the active sessions by the metric,
/// then hand each its maximum feasible rate given all earlier assignments,
/// quantize through the EVSE pilot models, and repair any quantization
/// damage.
#[derive(Debug, Clone, Copy)]
pub struct SortedAlgorithm {
    pub key: SortKey,
}

impl SortedAlgorithm {
    pub fn new(key: SortKey) -> Self {
        SortedAlgorithm { key }
    }

    fn sorted_sessions<'v>(&self, view: &'v AlgoView) -> Vec<&'v SessionView> {
        let mut sessions: Vec<&SessionView> = view.sessions.iter().collect();
        match self.key {
            SortKey::Fcfs => {
                sessions.sort_by(|a, b| (a.arrival, &a.station_id).cmp(&(b.arrival, &b.station_id)))
            }
            SortKey::Lcfs => sessions.sort_by(|a, b| {
                (b.arrival, &a.station_id).cmp(&(a.arrival, &b.station_id))
            }),
            SortKey::Edf => sessions.sort_by(|a, b| {
                (a.departure_estimated, &a.station_id).cmp(&(b.departure_estimated, &b.station_id))
            }),
            SortKey::Lrpt => sessions.sort_by(|a, b| {
                let ta = a.remaining_amp_periods / effective(a, view).max(1e-12);
                let tb = b.remaining_amp_periods / effective(b, view).max(1e-12);
                tb.total_cmp(&ta).then_with(|| a.station_id.cmp(&b.station_id))
            }),
            SortKey::Llf => sessions.sort_by(|a, b| {
                let la = laxity(a, effective(a, view), view.now);
                let lb = laxity(b, effective(b, view), view.now);
                la.total_cmp(&lb).then_with(|| a.station_id.cmp(&b.station_id))
            }),
        }
        sessions
    }
}

fn effective(session: &SessionView, view: &AlgoView) -> f64 {
    view.effective_max(session)
}

impl SchedulingAlgorithm for SortedAlgorithm {
    fn name(&self) -> String {
        match self.key {
            SortKey::Fcfs => "fcfs",
            SortKey::Lcfs => "lcfs",
            SortKey::Edf => "edf",
            SortKey::Lrpt => "lrpt",
            SortKey::Llf => "llf",
        }
        .into()
    }

    fn schedule(&mut self, view: &AlgoView) -> Result<Schedule> {
        let network = view.network();
        let sessions = self.sorted_sessions(view);
        let mut assigned: BTreeMap<String, f64> = BTreeMap::new();
        let mut order: Vec<String> = Vec::with_capacity(sessions.len());
        for session in sessions {
            let upper = effective(session, view);
            let rate = network.max_feasible_rate(
                &session.station_id,
                &assigned,
                upper,
                RATE_SEARCH_TOLERANCE_AMPS,
            )?;
            assigned.insert(session.station_id.clone(), rate);
            order.push(session.station_id.clone());
        }
        let (rates, _warnings) = quantize_and_repair(network, &order, &assigned)?;
        Ok(Schedule::single_column(rates))
    }
}

/// Snaps every rate through its EVSE pilot model, then restores phasor
/// feasibility if the snapping broke it (possible because magnitude
/// constraints are not monotone per coordinate). The repair walks the
/// stations in reverse processing order, stepping each down through its
/// admissible values while the vector stays infeasible.
pub(crate) fn quantize_and_repair(
    network: &Network,
    order: &[String],
    raw: &BTreeMap<String, f64>,
) -> Result<(BTreeMap<String, f64>, Vec<String>)> {
    let mut rates: BTreeMap<String, f64> = BTreeMap::new();
    for (station, rate) in raw {
        rates.insert(station.clone(), network.evse(station)?.clamp_pilot(*rate));
    }
    let mut warnings = Vec::new();
    if !network.is_feasible(&rates, FEASIBILITY_TOLERANCE_AMPS)? {
        for station in order.iter().rev() {
            let mut current = rates[station];
            while !network.is_feasible(&rates, FEASIBILITY_TOLERANCE_AMPS)? && current > 0.0 {
                current = network.evse(station)?.model.step_down(current);
                rates.insert(station.clone(), current);
            }
            if network.is_feasible(&rates, FEASIBILITY_TOLERANCE_AMPS)? {
                break;
            }
        }
        if !network.is_feasible(&rates, FEASIBILITY_TOLERANCE_AMPS)? {
            // a full pass can always reach the all-zero vector, but guard
            // the invariant anyway
            if let Some(last) = order.last() {
                rates.insert(last.clone(), 0.0);
            }
        }
        warnings.push("quantization repair reduced scheduled rates".to_string());
    }
    Ok((rates, warnings))
}

/// Baseline algorithm lookup by config name.
pub fn baseline_by_name(name: &str) -> Option<Box<dyn SchedulingAlgorithm + Send>> {
    match name {
        "uncontrolled" => Some(Box::new(Uncontrolled)),
        "round_robin" | "rr" => Some(Box::new(RoundRobin)),
        key => SortKey::from_str(key)
            .ok()
            .map(|k| Box::new(SortedAlgorithm::new(k)) as Box<dyn SchedulingAlgorithm + Send>),
    }
}
