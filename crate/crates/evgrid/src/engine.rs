//! The simulation engine: pops due events, re-runs the scheduling algorithm
//! after any event, pushes pilots through EVSE quantization into batteries,
//! and records time series.
//!
//! Each step covers one period. Due events apply first (unplugs, then
//! plugins, then recompute markers); if anything happened the algorithm is
//! asked for a fresh schedule. Otherwise the engine keeps consuming the last
//! schedule, one column per period, holding its final column once exhausted,
//! the way hardware holds a pilot until told otherwise. The run ends when
//! the event queue is exhausted (or a configured horizon is reached).

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::algorithms::SchedulingAlgorithm;
use crate::error::{Error, Result};
use crate::events::{Event, EventKind, EventQueue};
use crate::hardware::SessionEv;
use crate::network::Network;
use crate::signals::{Tariff, TimeSeriesSignal};

/// Simulation-wide timing and defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub period_minutes: f64,
    /// Facility-local wall-clock time of period 0. Calendar math (weekday,
    /// season, billing month) uses this zone-naive local time.
    pub start: NaiveDateTime,
    /// Optional hard stop in periods; otherwise the run lasts until the
    /// event queue drains.
    pub horizon: Option<u32>,
    /// Default voltage for unit conversions when sessions are created.
    pub voltage: f64,
    /// Optional fixed recompute cadence for predictive algorithms, on top
    /// of the event-triggered recomputes.
    pub recompute_period: Option<u32>,
}

impl SimConfig {
    pub fn new(period_minutes: f64, start: NaiveDateTime) -> Self {
        assert!(period_minutes > 0.0, "period length must be positive");
        SimConfig {
            period_minutes,
            start,
            horizon: None,
            voltage: 208.0,
            recompute_period: None,
        }
    }

    pub fn datetime_at(&self, period: u32) -> NaiveDateTime {
        let seconds = (period as f64 * self.period_minutes * 60.0).round() as i64;
        self.start + chrono::Duration::seconds(seconds)
    }
}

/// External signals attached to a run.
#[derive(Debug, Clone, Default)]
pub struct SignalSet {
    pub tariff: Option<Tariff>,
    pub external_load: Option<TimeSeriesSignal>,
    pub solar: Option<TimeSeriesSignal>,
}

/// What the scheduling algorithm is allowed to see: the clock, active
/// sessions with *estimated* departures, the constraint model, pilot
/// envelopes, signal lookups, and remaining demands. Actual departures and
/// future events are not exposed.
pub struct AlgoView<'a> {
    pub now: u32,
    pub period_minutes: f64,
    pub sessions: Vec<SessionView>,
    /// Peak facility draw of the current billing month, before this period.
    pub peak_so_far_kw: f64,
    start: NaiveDateTime,
    network: &'a Network,
    tariff: Option<&'a Tariff>,
    external_load: Option<(&'a TimeSeriesSignal, i64)>,
    solar: Option<(&'a TimeSeriesSignal, i64)>,
}

/// One active session as visible to algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionView {
    pub session_id: String,
    pub station_id: String,
    pub arrival: u32,
    pub departure_estimated: u32,
    pub remaining_amp_periods: f64,
    /// On-board charger limit in amps.
    pub charger_max_rate: f64,
}

impl<'a> AlgoView<'a> {
    /// Builds a view outside a running simulation, e.g. to drive an
    /// algorithm interactively. Signals and the running peak default to
    /// empty and can be attached with the `with_*` builders.
    pub fn standalone(
        now: u32,
        period_minutes: f64,
        start: NaiveDateTime,
        sessions: Vec<SessionView>,
        network: &'a Network,
    ) -> AlgoView<'a> {
        AlgoView {
            now,
            period_minutes,
            sessions,
            peak_so_far_kw: 0.0,
            start,
            network,
            tariff: None,
            external_load: None,
            solar: None,
        }
    }

    pub fn with_tariff(mut self, tariff: &'a Tariff) -> Self {
        self.tariff = Some(tariff);
        self
    }

    pub fn with_external_load(mut self, signal: &'a TimeSeriesSignal, offset: i64) -> Self {
        self.external_load = Some((signal, offset));
        self
    }

    pub fn with_solar(mut self, signal: &'a TimeSeriesSignal, offset: i64) -> Self {
        self.solar = Some((signal, offset));
        self
    }

    pub fn with_peak_so_far(mut self, kw: f64) -> Self {
        self.peak_so_far_kw = kw;
        self
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn datetime_at(&self, period: u32) -> NaiveDateTime {
        let seconds = (period as f64 * self.period_minutes * 60.0).round() as i64;
        self.start + chrono::Duration::seconds(seconds)
    }

    /// Energy price at an absolute period, when a tariff is attached.
    pub fn price_at(&self, period: u32) -> Option<f64> {
        self.tariff?.price_at(self.datetime_at(period)).ok()
    }

    pub fn has_tariff(&self) -> bool {
        self.tariff.is_some()
    }

    pub fn external_load_kw(&self, period: u32) -> f64 {
        match self.external_load {
            Some((signal, offset)) => signal.value_at(period as i64 + offset),
            None => 0.0,
        }
    }

    pub fn solar_kw(&self, period: u32) -> f64 {
        match self.solar {
            Some((signal, offset)) => signal.value_at(period as i64 + offset),
            None => 0.0,
        }
    }

    /// Service-rate bound for a session: the smaller of the EVSE limit and
    /// the on-board charger limit.
    pub fn effective_max(&self, session: &SessionView) -> f64 {
        match self.network.evse(&session.station_id) {
            Ok(evse) => evse.max_rate.min(session.charger_max_rate),
            Err(_) => 0.0,
        }
    }
}

/// One entry in the per-session delivery ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLedger {
    pub session_id: String,
    pub station_id: Option<String>,
    pub arrival: u32,
    pub departure: u32,
    pub departure_estimated: u32,
    pub requested_amp_periods: f64,
    /// Request capped by what the battery could absorb.
    pub deliverable_amp_periods: f64,
    pub delivered_amp_periods: f64,
    pub demand_met: bool,
    pub outcome: SessionOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    /// Unplugged by an event (scheduled or early departure).
    Departed,
    /// Left the waiting queue at its departure time without ever charging.
    DepartedUnserved,
    /// Still plugged in when the run ended.
    OpenAtEnd,
    /// Still waiting when the run ended.
    QueuedAtEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub period: u32,
    pub kind: String,
    pub session_id: Option<String>,
}

/// Solver/algorithm diagnostics for one schedule call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDiagnostics {
    pub period: u32,
    pub iterations: usize,
    pub converged: bool,
    pub max_row_violation: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub period_minutes: f64,
    pub start: NaiveDateTime,
    pub voltage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub station_id: String,
    pub voltage: f64,
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintInfo {
    pub id: String,
    pub limit: f64,
}

/// Everything a completed run produced: per-EVSE pilot and actual series,
/// per-constraint current magnitudes, aggregate power, the event log, and
/// the session ledger. All series share one time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub config: RecordMeta,
    pub stations: Vec<StationInfo>,
    pub constraints: Vec<ConstraintInfo>,
    pub periods: u32,
    pub pilot: BTreeMap<String, Vec<f64>>,
    pub actual: BTreeMap<String, Vec<f64>>,
    pub constraint_current: BTreeMap<String, Vec<f64>>,
    pub aggregate_kw: Vec<f64>,
    pub sessions: Vec<SessionLedger>,
    pub events: Vec<LoggedEvent>,
    pub warnings: Vec<String>,
    pub swaps: u64,
    pub solver_diagnostics: Vec<ScheduleDiagnostics>,
}

impl SimRecord {
    /// A record carrying only an aggregate power profile; handy for pricing
    /// what-if load shapes without running a simulation.
    pub fn from_aggregate_profile(
        start: NaiveDateTime,
        period_minutes: f64,
        aggregate_kw: Vec<f64>,
    ) -> SimRecord {
        SimRecord {
            config: RecordMeta {
                period_minutes,
                start,
                voltage: 208.0,
            },
            stations: Vec::new(),
            constraints: Vec::new(),
            periods: aggregate_kw.len() as u32,
            pilot: BTreeMap::new(),
            actual: BTreeMap::new(),
            constraint_current: BTreeMap::new(),
            aggregate_kw,
            sessions: Vec::new(),
            events: Vec::new(),
            warnings: Vec::new(),
            swaps: 0,
            solver_diagnostics: Vec::new(),
        }
    }

    pub fn datetime_at(&self, period: u32) -> NaiveDateTime {
        let seconds = (period as f64 * self.config.period_minutes * 60.0).round() as i64;
        self.config.start + chrono::Duration::seconds(seconds)
    }

    pub fn total_delivered_amp_periods(&self) -> f64 {
        self.sessions.iter().map(|s| s.delivered_amp_periods).sum()
    }

    /// One row per period: pilots, actuals, constraint currents, aggregate
    /// power.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["period".to_string(), "datetime".to_string()];
        header.extend(self.pilot.keys().map(|s| format!("pilot_{s}")));
        header.extend(self.actual.keys().map(|s| format!("actual_{s}")));
        header.extend(self.constraint_current.keys().map(|c| format!("current_{c}")));
        header.push("aggregate_kw".to_string());
        let mut out = header.join(",");
        out.push('\n');
        for t in 0..self.periods as usize {
            let mut row = vec![t.to_string(), self.datetime_at(t as u32).to_string()];
            row.extend(self.pilot.values().map(|v| v[t].to_string()));
            row.extend(self.actual.values().map(|v| v[t].to_string()));
            row.extend(self.constraint_current.values().map(|v| v[t].to_string()));
            row.push(self.aggregate_kw[t].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SimRecord> {
        Ok(serde_json::from_str(text)?)
    }
}

fn make_view<'a>(
    network: &'a Network,
    signals: &'a SignalSet,
    external_offset: i64,
    solar_offset: i64,
    config: &SimConfig,
    peak_month_kw: f64,
    now: u32,
) -> AlgoView<'a> {
    let sessions = network
        .plugged_sessions()
        .filter(|ev| !ev.is_done())
        .map(|ev| SessionView {
            session_id: ev.session_id.clone(),
            station_id: ev.station_id.clone().unwrap_or_default(),
            arrival: ev.arrival,
            departure_estimated: ev.departure_estimated,
            remaining_amp_periods: ev.remaining_demand(),
            charger_max_rate: ev.battery.max_rate,
        })
        .collect();
    let mut view = AlgoView::standalone(now, config.period_minutes, config.start, sessions, network)
        .with_peak_so_far(peak_month_kw);
    if let Some(tariff) = &signals.tariff {
        view = view.with_tariff(tariff);
    }
    if let Some(signal) = &signals.external_load {
        view = view.with_external_load(signal, external_offset);
    }
    if let Some(signal) = &signals.solar {
        view = view.with_solar(signal, solar_offset);
    }
    view
}

#[derive(Debug, Clone)]
struct ActiveSchedule {
    rates: BTreeMap<String, Vec<f64>>,
    start: u32,
}

impl ActiveSchedule {
    /// Column for `now`, reusing the last column once exhausted.
    fn rate_for(&self, station: &str, now: u32) -> f64 {
        match self.rates.get(station) {
            Some(columns) if !columns.is_empty() => {
                let offset = (now.saturating_sub(self.start)) as usize;
                columns[offset.min(columns.len() - 1)]
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
pub enum StepStatus {
    Continued,
    Finished,
}

/// A single in-flight simulation. One instance is strictly single-threaded;
/// sweeps run one simulation per worker.
pub struct Simulation {
    config: SimConfig,
    network: Network,
    queue: EventQueue,
    algorithm: Box<dyn SchedulingAlgorithm>,
    signals: SignalSet,
    external_offset: i64,
    solar_offset: i64,
    now: u32,
    active_schedule: Option<ActiveSchedule>,
    peak_month_kw: f64,
    current_month: Option<(i32, u32)>,
    pilot_series: BTreeMap<String, Vec<f64>>,
    actual_series: BTreeMap<String, Vec<f64>>,
    constraint_series: BTreeMap<String, Vec<f64>>,
    aggregate_kw: Vec<f64>,
    ledger: Vec<SessionLedger>,
    event_log: Vec<LoggedEvent>,
    warnings: Vec<String>,
    diagnostics: Vec<ScheduleDiagnostics>,
}

impl Simulation {
    pub fn new(
        config: SimConfig,
        network: Network,
        mut queue: EventQueue,
        algorithm: Box<dyn SchedulingAlgorithm>,
        signals: SignalSet,
    ) -> Result<Simulation> {
        let external_offset = match &signals.external_load {
            Some(signal) => signal.align(config.start, config.period_minutes)?,
            None => 0,
        };
        let solar_offset = match &signals.solar {
            Some(signal) => signal.align(config.start, config.period_minutes)?,
            None => 0,
        };
        if let Some(period) = config.recompute_period {
            if period == 0 {
                return Err(Error::Scenario("recompute_period must be positive".into()));
            }
            queue.enqueue(Event::recompute(0));
        }
        let pilot_series = network
            .evses()
            .map(|e| (e.station_id.clone(), Vec::new()))
            .collect();
        let actual_series = network
            .evses()
            .map(|e| (e.station_id.clone(), Vec::new()))
            .collect();
        let constraint_series = network
            .constraints()
            .iter()
            .map(|c| (c.id.clone(), Vec::new()))
            .collect();
        Ok(Simulation {
            config,
            network,
            queue,
            algorithm,
            signals,
            external_offset,
            solar_offset,
            now: 0,
            active_schedule: None,
            peak_month_kw: 0.0,
            current_month: None,
            pilot_series,
            actual_series,
            constraint_series,
            aggregate_kw: Vec::new(),
            ledger: Vec::new(),
            event_log: Vec::new(),
            warnings: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn now(&self) -> u32 {
        self.now
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    fn horizon_reached(&self) -> bool {
        self.config.horizon.is_some_and(|h| self.now >= h)
    }

    fn finished(&self) -> bool {
        self.queue.is_empty() || self.horizon_reached()
    }

    /// Advances one period. Returns `Finished` after the final period.
    pub fn step(&mut self) -> Result<StepStatus> {
        if self.finished() {
            return Ok(StepStatus::Finished);
        }
        let now = self.now;

        // Sessions that finished charging during the previous period hand
        // their EVSE to the queue head via a synthesized unplug.
        for session_id in self.network.early_departure_candidates() {
            self.queue.enqueue(Event::unplug(now, session_id));
        }

        let due = self.queue.pop_due(now);
        let mut must_schedule = false;
        for event in due {
            must_schedule |= self.apply_event(event, now)?;
        }
        if must_schedule {
            self.run_algorithm(now)?;
        }
        self.advance_hardware(now)?;
        self.now = now + 1;
        Ok(if self.finished() {
            StepStatus::Finished
        } else {
            StepStatus::Continued
        })
    }

    /// Runs to completion and returns the record.
    pub fn run(mut self) -> Result<SimRecord> {
        while self.step()? == StepStatus::Continued {}
        Ok(self.finish())
    }

    fn log_event(&mut self, period: u32, kind: &str, session_id: Option<String>) {
        self.event_log.push(LoggedEvent {
            period,
            kind: kind.to_string(),
            session_id,
        });
    }

    /// Applies one event; returns whether the algorithm must run.
    fn apply_event(&mut self, event: Event, now: u32) -> Result<bool> {
        match event.kind {
            EventKind::Plugin { session } => {
                let id = session.session_id.clone();
                match self.network.plugin(*session)? {
                    crate::network::PluginOutcome::Assigned(_) => {
                        self.log_event(now, "plugin", Some(id));
                    }
                    crate::network::PluginOutcome::Queued => {
                        self.log_event(now, "plugin-queued", Some(id));
                    }
                }
                Ok(true)
            }
            EventKind::Unplug { session_id } => {
                let outcome = self.network.unplug(&session_id, now);
                match outcome.departed {
                    Some(ev) => {
                        let outcome_kind = if outcome.left_queue {
                            SessionOutcome::DepartedUnserved
                        } else {
                            SessionOutcome::Departed
                        };
                        self.close_session(ev, now, outcome_kind);
                        self.log_event(now, "unplug", Some(session_id));
                        if let Some(station) = outcome.swapped_in {
                            let head = self.network.session_at(&station).map(|s| s.session_id.clone());
                            self.log_event(now, "swap-in", head);
                        }
                        Ok(true)
                    }
                    None => {
                        // Already departed (e.g. an early-departure swap beat
                        // the scheduled unplug). Harmless.
                        self.log_event(now, "unplug-noop", Some(session_id));
                        Ok(false)
                    }
                }
            }
            EventKind::Recompute => {
                self.log_event(now, "recompute", None);
                if let Some(period) = self.config.recompute_period {
                    if self.queue.has_pending_work() {
                        self.queue.enqueue(Event::recompute(now + period));
                    }
                }
                Ok(true)
            }
        }
    }

    fn close_session(&mut self, ev: SessionEv, departure: u32, outcome: SessionOutcome) {
        let deliverable = ev
            .requested_amp_periods
            .min(ev.battery.capacity - ev.battery.initial_charge());
        let demand_met = ev.is_done();
        self.ledger.push(SessionLedger {
            session_id: ev.session_id,
            station_id: ev.station_id,
            arrival: ev.arrival,
            departure,
            departure_estimated: ev.departure_estimated,
            requested_amp_periods: ev.requested_amp_periods,
            deliverable_amp_periods: deliverable,
            delivered_amp_periods: ev.delivered_amp_periods,
            demand_met,
            outcome,
        });
    }

    fn run_algorithm(&mut self, now: u32) -> Result<()> {
        let view = make_view(
            &self.network,
            &self.signals,
            self.external_offset,
            self.solar_offset,
            &self.config,
            self.peak_month_kw,
            now,
        );
        let schedule = self
            .algorithm
            .schedule(&view)
            .map_err(|e| Error::Algorithm {
                name: self.algorithm.name(),
                period: now,
                detail: e.to_string(),
            })?;
        drop(view);
        let mut rates = BTreeMap::new();
        for (station, columns) in schedule.rates {
            if self.network.evse(&station).is_err() {
                self.warnings.push(format!(
                    "period {now}: schedule names unknown station `{station}`, ignored"
                ));
                continue;
            }
            if columns.iter().any(|r| *r < 0.0) {
                self.warnings.push(format!(
                    "period {now}: negative rate for `{station}` clamped to 0"
                ));
            }
            rates.insert(
                station,
                columns.into_iter().map(|r| r.max(0.0)).collect(),
            );
        }
        self.active_schedule = Some(ActiveSchedule { rates, start: now });
        if let Some(mut diag) = self.algorithm.take_diagnostics() {
            diag.period = now;
            self.diagnostics.push(diag);
        }
        Ok(())
    }

    /// Clamps scheduled rates through each EVSE, steps every plugged
    /// battery, and appends one row to every series.
    fn advance_hardware(&mut self, now: u32) -> Result<()> {
        let month = {
            let dt = self.config.datetime_at(now);
            (dt.year(), dt.month())
        };
        if self.current_month != Some(month) {
            // demand-charge peaks reset at billing-month boundaries
            self.current_month = Some(month);
            self.peak_month_kw = 0.0;
        }

        let mut pilots: BTreeMap<String, f64> = BTreeMap::new();
        let mut actuals: BTreeMap<String, f64> = BTreeMap::new();
        for evse in self.network.evses() {
            pilots.insert(evse.station_id.clone(), 0.0);
            actuals.insert(evse.station_id.clone(), 0.0);
        }

        // occupied stations in deterministic order
        let stations: Vec<String> = self
            .network
            .plugged_sessions()
            .filter_map(|ev| ev.station_id.clone())
            .collect();
        for station in stations {
            let requested = self
                .active_schedule
                .as_ref()
                .map(|s| s.rate_for(&station, now))
                .unwrap_or(0.0);
            let pilot = self.network.evse(&station)?.clamp_pilot(requested);
            pilots.insert(station.clone(), pilot);
            let session = self
                .network
                .plugged_sessions_mut()
                .find(|ev| ev.station_id.as_deref() == Some(station.as_str()))
                .expect("occupied station lost its session");
            let actual = session.battery.step(pilot)?;
            session.delivered_amp_periods += actual;
            actuals.insert(station, actual);
        }

        let mut aggregate_kw = 0.0;
        for evse in self.network.evses() {
            aggregate_kw += evse.voltage * actuals[&evse.station_id] / 1000.0;
        }
        for constraint in self.network.constraints() {
            let magnitude = self.network.constraint_current(constraint, &actuals);
            self.constraint_series
                .get_mut(&constraint.id)
                .expect("constraint series missing")
                .push(magnitude);
        }
        for (station, series) in self.pilot_series.iter_mut() {
            series.push(pilots[station]);
        }
        for (station, series) in self.actual_series.iter_mut() {
            series.push(actuals[station]);
        }
        self.aggregate_kw.push(aggregate_kw);
        self.peak_month_kw = self.peak_month_kw.max(aggregate_kw);
        Ok(())
    }

    fn finish(mut self) -> SimRecord {
        let end = self.now;
        for ev in self.network.drain_sessions() {
            let outcome = if ev.station_id.is_some() {
                SessionOutcome::OpenAtEnd
            } else {
                SessionOutcome::QueuedAtEnd
            };
            self.close_session(ev, end, outcome);
        }
        SimRecord {
            config: RecordMeta {
                period_minutes: self.config.period_minutes,
                start: self.config.start,
                voltage: self.config.voltage,
            },
            stations: self
                .network
                .evses()
                .map(|e| StationInfo {
                    station_id: e.station_id.clone(),
                    voltage: e.voltage,
                    phase_deg: e.phase_deg,
                })
                .collect(),
            constraints: self
                .network
                .constraints()
                .iter()
                .map(|c| ConstraintInfo {
                    id: c.id.clone(),
                    limit: c.limit,
                })
                .collect(),
            periods: end,
            pilot: self.pilot_series,
            actual: self.actual_series,
            constraint_current: self.constraint_series,
            aggregate_kw: self.aggregate_kw,
            sessions: self.ledger,
            events: self.event_log,
            warnings: self.warnings,
            swaps: self.network.swap_count(),
            solver_diagnostics: self.diagnostics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Schedule;
    use crate::hardware::Battery;
    use crate::network::{AssignmentMode, EvseNode};
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use std::cell::Cell;
    use std::rc::Rc;

    fn start() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 6, 3)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    fn simple_network(n: usize) -> Network {
        let evses = (0..n)
            .map(|i| EvseNode::continuous(format!("evse-{:02}", i + 1), 0.0, 208.0, 32.0))
            .collect();
        Network::new(evses, Vec::new(), AssignmentMode::Deterministic, false).unwrap()
    }

    fn session(id: &str, station: &str, arrival: u32, departure: u32, demand: f64) -> SessionEv {
        SessionEv {
            session_id: id.into(),
            station_id: Some(station.into()),
            arrival,
            departure_actual: departure,
            departure_estimated: departure,
            requested_amp_periods: demand,
            delivered_amp_periods: 0.0,
            battery: Battery::ideal(demand, 0.0, 32.0),
        }
    }

    /// Pilots every active session at its EVSE max; one column.
    struct MaxAll;
    impl SchedulingAlgorithm for MaxAll {
        fn name(&self) -> String {
            "max-all".into()
        }
        fn schedule(&mut self, view: &AlgoView) -> Result<Schedule> {
            let rates = view
                .sessions
                .iter()
                .map(|s| {
                    let max = view.network().evse(&s.station_id).unwrap().max_rate;
                    (s.station_id.clone(), vec![max])
                })
                .collect();
            Ok(Schedule { rates })
        }
    }

    struct CountingMax {
        calls: Rc<Cell<usize>>,
    }
    impl SchedulingAlgorithm for CountingMax {
        fn name(&self) -> String {
            "counting".into()
        }
        fn schedule(&mut self, view: &AlgoView) -> Result<Schedule> {
            self.calls.set(self.calls.get() + 1);
            MaxAll.schedule(view)
        }
    }

    #[test]
    fn zero_events_zero_periods() {
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(1),
            EventQueue::new(),
            Box::new(MaxAll),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        assert_eq!(record.periods, 0);
        assert!(record.aggregate_kw.is_empty());
        assert!(record.sessions.is_empty());
    }

    #[test]
    fn single_ev_uncongested_delivers_request() {
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 10, 70.0)));
        queue.enqueue(Event::unplug(10, "s1"));
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(1),
            queue,
            Box::new(MaxAll),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        // the unplug at period 10 is the last executed event
        assert_eq!(record.periods, 11);
        let ledger = &record.sessions[0];
        assert_relative_eq!(ledger.delivered_amp_periods, 70.0, max_relative = 1e-12);
        assert!(ledger.demand_met);
        // conservation against the actual series
        let series_total: f64 = record.actual["evse-01"].iter().sum();
        assert_relative_eq!(series_total, 70.0, max_relative = 1e-12);
    }

    #[test]
    fn pilots_carry_over_between_events() {
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 6, 1000.0)));
        queue.enqueue(Event::unplug(6, "s1"));
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(1),
            queue,
            Box::new(MaxAll),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        // schedule computed once at t=0, then carried: pilot stays 32
        for t in 0..6 {
            assert_relative_eq!(record.pilot["evse-01"][t], 32.0);
        }
    }

    #[test]
    fn same_period_unplug_and_plugin_schedule_once() {
        let calls = Rc::new(Cell::new(0));
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 5, 1000.0)));
        queue.enqueue(Event::unplug(5, "s1"));
        queue.enqueue(Event::plugin(5, session("s2", "evse-01", 5, 8, 1000.0)));
        queue.enqueue(Event::unplug(8, "s2"));
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(1),
            queue,
            Box::new(CountingMax { calls: calls.clone() }),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        // t=0 (plugin), t=5 (unplug+plugin handled together), t=8 (unplug)
        assert_eq!(calls.get(), 3);
        assert_eq!(record.sessions.len(), 2);
        // s2 occupies the EVSE from period 5 with a fresh schedule
        assert_relative_eq!(record.pilot["evse-01"][5], 32.0);
    }

    #[test]
    fn recompute_cadence_rearms_while_work_remains() {
        let calls = Rc::new(Cell::new(0));
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 6, 1000.0)));
        queue.enqueue(Event::unplug(6, "s1"));
        let mut config = SimConfig::new(5.0, start());
        config.recompute_period = Some(2);
        let sim = Simulation::new(
            config,
            simple_network(1),
            queue,
            Box::new(CountingMax { calls: calls.clone() }),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        // recomputes at 0,2,4,6 plus the plugin/unplug fold into those pops
        assert_eq!(calls.get(), 4);
        assert!(record.periods >= 6);
    }

    #[test]
    fn actual_never_exceeds_pilot() {
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 12, 50.0)));
        queue.enqueue(Event::unplug(12, "s1"));
        queue.enqueue(Event::plugin(2, session("s2", "evse-02", 2, 9, 300.0)));
        queue.enqueue(Event::unplug(9, "s2"));
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(2),
            queue,
            Box::new(MaxAll),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        for station in ["evse-01", "evse-02"] {
            for t in 0..record.periods as usize {
                assert!(record.actual[station][t] <= record.pilot[station][t] + 1e-12);
            }
        }
    }

    #[test]
    fn horizon_caps_the_run() {
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 100, 10_000.0)));
        queue.enqueue(Event::unplug(100, "s1"));
        let mut config = SimConfig::new(5.0, start());
        config.horizon = Some(10);
        let sim = Simulation::new(
            config,
            simple_network(1),
            queue,
            Box::new(MaxAll),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        assert_eq!(record.periods, 10);
        assert_eq!(record.sessions[0].outcome, SessionOutcome::OpenAtEnd);
    }

    #[test]
    fn unknown_station_in_schedule_is_ignored_with_warning() {
        struct Rogue;
        impl SchedulingAlgorithm for Rogue {
            fn name(&self) -> String {
                "rogue".into()
            }
            fn schedule(&mut self, _view: &AlgoView) -> Result<Schedule> {
                let mut rates = BTreeMap::new();
                rates.insert("nope".to_string(), vec![32.0]);
                Ok(Schedule { rates })
            }
        }
        let mut queue = EventQueue::new();
        queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 3, 10.0)));
        queue.enqueue(Event::unplug(3, "s1"));
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(1),
            queue,
            Box::new(Rogue),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        assert!(record.warnings.iter().any(|w| w.contains("nope")));
        assert_relative_eq!(record.pilot["evse-01"][0], 0.0);
    }

    #[test]
    fn replay_is_bit_identical() {
        let build = || {
            let mut queue = EventQueue::new();
            queue.enqueue(Event::plugin(0, session("s1", "evse-01", 0, 10, 64.0)));
            queue.enqueue(Event::unplug(10, "s1"));
            queue.enqueue(Event::plugin(3, session("s2", "evse-02", 3, 12, 90.0)));
            queue.enqueue(Event::unplug(12, "s2"));
            Simulation::new(
                SimConfig::new(5.0, start()),
                simple_network(2),
                queue,
                Box::new(MaxAll),
                SignalSet::default(),
            )
            .unwrap()
        };
        let a = build().run().unwrap().to_json().unwrap();
        let b = build().run().unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_multiset_is_conserved_in_the_log() {
        let mut queue = EventQueue::new();
        for i in 0..5 {
            queue.enqueue(Event::plugin(
                i,
                session(&format!("s{i}"), &format!("evse-{:02}", i + 1), i, i + 5, 10.0),
            ));
            queue.enqueue(Event::unplug(i + 5, format!("s{i}")));
        }
        let sim = Simulation::new(
            SimConfig::new(5.0, start()),
            simple_network(5),
            queue,
            Box::new(MaxAll),
            SignalSet::default(),
        )
        .unwrap();
        let record = sim.run().unwrap();
        let plugins = record.events.iter().filter(|e| e.kind == "plugin").count();
        let unplugs = record.events.iter().filter(|e| e.kind == "unplug").count();
        assert_eq!(plugins, 5);
        assert_eq!(unplugs, 5);
    }
}
