//! Electrical infrastructure: EVSEs, current-magnitude constraints, and
//! EV-to-EVSE assignment.
//!
//! Charging facilities are radial networks, so it is enough to limit the
//! current magnitude through each bottleneck component. Each constraint sums
//! the charging currents as phasors, weighting EVSE `i` by a coefficient and
//! rotating it by the EVSE's connection phase angle; the magnitude of that
//! sum must stay below the constraint's limit. Phase angles are fixed per
//! EVSE and voltages are nominal.
//!
//! Note that magnitude constraints are positively homogeneous but *not*
//! monotone per coordinate: lowering one EVSE's current can raise a line
//! current elsewhere in an unbalanced system. Feasibility checks therefore
//! always evaluate the full rate vector.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{PilotModel, SessionEv};

/// Default slack when comparing a constraint current against its limit.
pub const FEASIBILITY_TOLERANCE_AMPS: f64 = 1e-6;

/// Default bisection tolerance for [`Network::max_feasible_rate`], below
/// hardware pilot resolution.
pub const RATE_SEARCH_TOLERANCE_AMPS: f64 = 0.01;

/// One charging port and its electrical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvseNode {
    pub station_id: String,
    /// Connection phase angle in degrees.
    pub phase_deg: f64,
    /// Nominal voltage at the port in volts.
    pub voltage: f64,
    pub model: PilotModel,
    pub max_rate: f64,
    #[serde(default)]
    pub min_rate: f64,
}

impl EvseNode {
    pub fn continuous(station_id: impl Into<String>, phase_deg: f64, voltage: f64, max_rate: f64) -> Self {
        EvseNode {
            station_id: station_id.into(),
            phase_deg,
            voltage,
            model: PilotModel::Continuous,
            max_rate,
            min_rate: 0.0,
        }
    }

    /// Snaps a requested pilot to this EVSE's admissible set.
    pub fn clamp_pilot(&self, requested: f64) -> f64 {
        self.model.clamp(requested, self.max_rate)
    }

    fn validate(&self) -> Result<()> {
        if self.max_rate < self.min_rate || self.min_rate < 0.0 {
            return Err(Error::Network(format!(
                "EVSE `{}` needs max_rate >= min_rate >= 0",
                self.station_id
            )));
        }
        self.model.validate()
    }
}

/// A limit on the current through one bottleneck component.
///
/// `coefficients` maps station ids to dimensionless weights obtained from
/// circuit analysis. When `phase_aware` is true the constraint current is the
/// magnitude of the phasor sum of the weighted EVSE currents; when false it
/// is the plain arithmetic sum, which is how the aggregate transformer cap of
/// an auto-built site is expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentConstraint {
    pub id: String,
    pub coefficients: BTreeMap<String, f64>,
    /// Limit on the current magnitude in amps; non-negative.
    pub limit: f64,
    #[serde(default = "default_true")]
    pub phase_aware: bool,
}

fn default_true() -> bool {
    true
}

/// How arriving EVs are matched to EVSEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Every session names its EVSE up front.
    Deterministic,
    /// Arrivals take the lowest-indexed open EVSE and queue when none is
    /// free; a departing EV hands its spot to the queue head.
    Stochastic,
}

/// Result of plugging a session into the network.
#[derive(Debug, Clone, PartialEq)]
pub enum PluginOutcome {
    Assigned(String),
    Queued,
}

/// Result of an unplug: the departed session (if it was plugged or waiting)
/// and the station that received the queue head, when a swap happened.
#[derive(Debug, Default)]
pub struct UnplugOutcome {
    pub departed: Option<SessionEv>,
    pub left_queue: bool,
    pub swapped_in: Option<String>,
}

/// The facility model: EVSE registry, current constraints, and occupancy.
#[derive(Debug, Clone)]
pub struct Network {
    evses: BTreeMap<String, EvseNode>,
    constraints: Vec<CurrentConstraint>,
    assignment: AssignmentMode,
    early_departure: bool,
    plugged: BTreeMap<String, SessionEv>,
    waiting: VecDeque<SessionEv>,
    swap_count: u64,
}

impl Network {
    pub fn new(
        evses: Vec<EvseNode>,
        constraints: Vec<CurrentConstraint>,
        assignment: AssignmentMode,
        early_departure: bool,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for evse in evses {
            evse.validate()?;
            if map.insert(evse.station_id.clone(), evse).is_some() {
                return Err(Error::Network("duplicate station id".into()));
            }
        }
        for constraint in &constraints {
            if constraint.limit < 0.0 {
                return Err(Error::Network(format!(
                    "constraint `{}` has a negative limit",
                    constraint.id
                )));
            }
            for station in constraint.coefficients.keys() {
                if !map.contains_key(station) {
                    return Err(Error::UnknownEvse(station.clone()));
                }
            }
        }
        Ok(Network {
            evses: map,
            constraints,
            assignment,
            early_departure,
            plugged: BTreeMap::new(),
            waiting: VecDeque::new(),
            swap_count: 0,
        })
    }

    pub fn evses(&self) -> impl Iterator<Item = &EvseNode> {
        self.evses.values()
    }

    pub fn evse(&self, station_id: &str) -> Result<&EvseNode> {
        self.evses
            .get(station_id)
            .ok_or_else(|| Error::UnknownEvse(station_id.to_string()))
    }

    pub fn constraints(&self) -> &[CurrentConstraint] {
        &self.constraints
    }

    /// Drops every constraint the predicate rejects. Used to build
    /// deliberately blind variants of a site (e.g. aggregate-cap only).
    pub fn retain_constraints(&mut self, keep: impl FnMut(&CurrentConstraint) -> bool) {
        self.constraints.retain(keep);
    }

    pub fn assignment(&self) -> AssignmentMode {
        self.assignment
    }

    pub fn early_departure(&self) -> bool {
        self.early_departure
    }

    pub fn swap_count(&self) -> u64 {
        self.swap_count
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn plugged_sessions(&self) -> impl Iterator<Item = &SessionEv> {
        self.plugged.values()
    }

    pub fn plugged_sessions_mut(&mut self) -> impl Iterator<Item = &mut SessionEv> {
        self.plugged.values_mut()
    }

    pub fn session_at(&self, station_id: &str) -> Option<&SessionEv> {
        self.plugged.get(station_id)
    }

    pub fn has_active_sessions(&self) -> bool {
        !self.plugged.is_empty()
    }

    fn check_rates(&self, rates: &BTreeMap<String, f64>) -> Result<()> {
        for (station, rate) in rates {
            if !self.evses.contains_key(station) {
                return Err(Error::UnknownEvse(station.clone()));
            }
            if *rate < 0.0 {
                return Err(Error::NegativeRate {
                    station: station.clone(),
                    rate: *rate,
                });
            }
        }
        Ok(())
    }

    /// Current magnitude through one constraint for the given rate vector.
    /// Stations absent from `rates` contribute zero.
    pub fn constraint_current(
        &self,
        constraint: &CurrentConstraint,
        rates: &BTreeMap<String, f64>,
    ) -> f64 {
        if constraint.phase_aware {
            let mut re = 0.0;
            let mut im = 0.0;
            for (station, coeff) in &constraint.coefficients {
                let Some(rate) = rates.get(station) else {
                    continue;
                };
                let phase = self.evses[station].phase_deg.to_radians();
                re += coeff * rate * phase.cos();
                im += coeff * rate * phase.sin();
            }
            re.hypot(im)
        } else {
            constraint
                .coefficients
                .iter()
                .filter_map(|(station, coeff)| rates.get(station).map(|r| coeff * r))
                .sum()
        }
    }

    /// Evaluates every constraint current for the given rate vector.
    pub fn constraint_currents(
        &self,
        rates: &BTreeMap<String, f64>,
    ) -> Result<BTreeMap<String, f64>> {
        self.check_rates(rates)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| (c.id.clone(), self.constraint_current(c, rates)))
            .collect())
    }

    /// True when every constraint current stays within its limit (plus
    /// `tolerance`) and every rate lies inside its EVSE's `[0, max_rate]`
    /// envelope.
    pub fn is_feasible(&self, rates: &BTreeMap<String, f64>, tolerance: f64) -> Result<bool> {
        self.check_rates(rates)?;
        for (station, rate) in rates {
            if *rate > self.evses[station].max_rate + tolerance {
                return Ok(false);
            }
        }
        for constraint in &self.constraints {
            if self.constraint_current(constraint, rates) > constraint.limit + tolerance {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Largest rate in `[0, upper_bound]` for `station_id` that keeps
    /// `fixed_rates` plus that rate feasible, found by bisection. The
    /// per-coordinate feasible set is a convex interval containing zero, so
    /// bisection on the feasibility predicate is valid.
    pub fn max_feasible_rate(
        &self,
        station_id: &str,
        fixed_rates: &BTreeMap<String, f64>,
        upper_bound: f64,
        tol: f64,
    ) -> Result<f64> {
        self.evse(station_id)?;
        if !self.is_feasible(fixed_rates, FEASIBILITY_TOLERANCE_AMPS)? {
            return Err(Error::InfeasibleFixedRates {
                station: station_id.to_string(),
            });
        }
        let mut trial = fixed_rates.clone();
        let feasible_at = |r: f64, trial: &mut BTreeMap<String, f64>| -> Result<bool> {
            trial.insert(station_id.to_string(), r);
            self.is_feasible(trial, FEASIBILITY_TOLERANCE_AMPS)
        };
        if feasible_at(upper_bound, &mut trial)? {
            return Ok(upper_bound);
        }
        let mut lo = 0.0;
        let mut hi = upper_bound;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if feasible_at(mid, &mut trial)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    /// Plugs a session in. Deterministic networks require the session's
    /// `station_id` and reject double occupancy; stochastic networks assign
    /// the lowest station id that is free, or queue the session when the
    /// site is full.
    pub fn plugin(&mut self, mut ev: SessionEv) -> Result<PluginOutcome> {
        match self.assignment {
            AssignmentMode::Deterministic => {
                let station = ev
                    .station_id
                    .clone()
                    .ok_or_else(|| Error::MissingStation(ev.session_id.clone()))?;
                self.evse(&station)?;
                if let Some(occupant) = self.plugged.get(&station) {
                    return Err(Error::EvseOccupied {
                        station,
                        occupant: occupant.session_id.clone(),
                    });
                }
                self.plugged.insert(station.clone(), ev);
                Ok(PluginOutcome::Assigned(station))
            }
            AssignmentMode::Stochastic => {
                let open = self
                    .evses
                    .keys()
                    .find(|id| !self.plugged.contains_key(*id))
                    .cloned();
                match open {
                    Some(station) => {
                        ev.station_id = Some(station.clone());
                        self.plugged.insert(station.clone(), ev);
                        Ok(PluginOutcome::Assigned(station))
                    }
                    None => {
                        self.waiting.push_back(ev);
                        Ok(PluginOutcome::Queued)
                    }
                }
            }
        }
    }

    /// Removes a session by id. If it was plugged and the waiting queue is
    /// non-empty, the queue head takes over the freed EVSE: its arrival is
    /// re-stamped to `now` (departure untouched) and the swap counter
    /// increments. A session still in the waiting queue at its departure
    /// simply leaves unserved. Unknown ids produce an empty outcome.
    pub fn unplug(&mut self, session_id: &str, now: u32) -> UnplugOutcome {
        let station = self
            .plugged
            .iter()
            .find(|(_, ev)| ev.session_id == session_id)
            .map(|(station, _)| station.clone());
        if let Some(station) = station {
            let departed = self.plugged.remove(&station);
            let mut swapped_in = None;
            if let Some(mut head) = self.waiting.pop_front() {
                head.arrival = now;
                head.station_id = Some(station.clone());
                self.plugged.insert(station.clone(), head);
                self.swap_count += 1;
                swapped_in = Some(station);
            }
            return UnplugOutcome {
                departed,
                left_queue: false,
                swapped_in,
            };
        }
        if let Some(pos) = self
            .waiting
            .iter()
            .position(|ev| ev.session_id == session_id)
        {
            let departed = self.waiting.remove(pos);
            return UnplugOutcome {
                departed,
                left_queue: true,
                swapped_in: None,
            };
        }
        UnplugOutcome::default()
    }

    /// Session ids that finished charging and should hand their spot to a
    /// waiting EV. Non-empty only for stochastic networks with the
    /// early-departure option while the queue is non-empty.
    pub fn early_departure_candidates(&self) -> Vec<String> {
        if !self.early_departure || self.waiting.is_empty() {
            return Vec::new();
        }
        self.plugged
            .values()
            .filter(|ev| ev.is_done())
            .map(|ev| ev.session_id.clone())
            .collect()
    }

    /// Drains every remaining session (plugged first, then waiting) when a
    /// run ends with sessions still in the system.
    pub fn drain_sessions(&mut self) -> Vec<SessionEv> {
        let mut out: Vec<SessionEv> = Vec::new();
        let stations: Vec<String> = self.plugged.keys().cloned().collect();
        for station in stations {
            if let Some(ev) = self.plugged.remove(&station) {
                out.push(ev);
            }
        }
        out.extend(self.waiting.drain(..));
        out
    }
}

/// Phasing of an auto-built site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phasing {
    Single,
    Three,
}

/// Default line-to-line voltage for single-phase auto-built sites.
pub const DEFAULT_SINGLE_PHASE_VOLTS: f64 = 208.0;
/// Default line-to-neutral voltage for three-phase auto-built sites.
pub const DEFAULT_LINE_TO_NEUTRAL_VOLTS: f64 = 120.0;

/// Options for [`auto_network`].
#[derive(Debug, Clone)]
pub struct AutoNetworkOptions {
    pub phasing: Phasing,
    /// Port voltage: line-to-line for single phase, line-to-neutral for
    /// three phase.
    pub voltage: f64,
    pub evse_model: PilotModel,
    pub evse_max_rate: f64,
    pub assignment: AssignmentMode,
    pub early_departure: bool,
    /// Keep only the aggregate transformer cap, dropping per-phase line
    /// constraints. Models a scheduler blind to unbalance.
    pub aggregate_only: bool,
}

impl AutoNetworkOptions {
    pub fn new(phasing: Phasing) -> Self {
        let voltage = match phasing {
            Phasing::Single => DEFAULT_SINGLE_PHASE_VOLTS,
            Phasing::Three => DEFAULT_LINE_TO_NEUTRAL_VOLTS,
        };
        AutoNetworkOptions {
            phasing,
            voltage,
            evse_model: PilotModel::Continuous,
            evse_max_rate: 32.0,
            assignment: AssignmentMode::Deterministic,
            early_departure: false,
            aggregate_only: false,
        }
    }
}

/// Builds a simple site limited only by its transformer.
///
/// Single phase: every EVSE at 0 degrees and one constraint with limit
/// `cap_kw * 1000 / voltage`. Three phase: EVSEs are assigned round-robin to
/// phases 0, -120, +120 degrees in the order given; each phase gets a line
/// constraint with limit `cap_kw * 1000 / (3 * voltage)` and the transformer
/// itself is an aggregate (arithmetic, phase-blind) cap of
/// `cap_kw * 1000 / voltage` equivalent amps.
pub fn auto_network(
    station_ids: &[String],
    transformer_cap_kw: f64,
    options: &AutoNetworkOptions,
) -> Result<Network> {
    if transformer_cap_kw <= 0.0 {
        return Err(Error::NonpositiveCapacity(transformer_cap_kw));
    }
    if station_ids.is_empty() {
        return Err(Error::Network("auto network needs at least one station".into()));
    }
    let phase_cycle = [0.0, -120.0, 120.0];
    let mut evses = Vec::with_capacity(station_ids.len());
    let mut constraints = Vec::new();
    match options.phasing {
        Phasing::Single => {
            let mut coefficients = BTreeMap::new();
            for id in station_ids {
                evses.push(EvseNode {
                    station_id: id.clone(),
                    phase_deg: 0.0,
                    voltage: options.voltage,
                    model: options.evse_model.clone(),
                    max_rate: options.evse_max_rate,
                    min_rate: 0.0,
                });
                coefficients.insert(id.clone(), 1.0);
            }
            constraints.push(CurrentConstraint {
                id: "transformer".into(),
                coefficients,
                limit: transformer_cap_kw * 1000.0 / options.voltage,
                phase_aware: true,
            });
        }
        Phasing::Three => {
            let mut per_phase: [BTreeMap<String, f64>; 3] = Default::default();
            let mut aggregate = BTreeMap::new();
            for (i, id) in station_ids.iter().enumerate() {
                let slot = i % 3;
                evses.push(EvseNode {
                    station_id: id.clone(),
                    phase_deg: phase_cycle[slot],
                    voltage: options.voltage,
                    model: options.evse_model.clone(),
                    max_rate: options.evse_max_rate,
                    min_rate: 0.0,
                });
                per_phase[slot].insert(id.clone(), 1.0);
                aggregate.insert(id.clone(), 1.0);
            }
            if !options.aggregate_only {
                for (slot, name) in ["phase-a", "phase-b", "phase-c"].iter().enumerate() {
                    if per_phase[slot].is_empty() {
                        continue;
                    }
                    constraints.push(CurrentConstraint {
                        id: (*name).into(),
                        coefficients: per_phase[slot].clone(),
                        limit: transformer_cap_kw * 1000.0 / (3.0 * options.voltage),
                        phase_aware: true,
                    });
                }
            }
            // Power cap expressed in amps at the port voltage; arithmetic sum
            // because power adds across phases regardless of angle.
            constraints.push(CurrentConstraint {
                id: "transformer".into(),
                coefficients: aggregate,
                limit: transformer_cap_kw * 1000.0 / options.voltage,
                phase_aware: false,
            });
        }
    }
    Network::new(evses, constraints, options.assignment, options.early_departure)
}

/// Serialized form of a network description file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub evses: Vec<EvseNode>,
    pub constraints: Vec<CurrentConstraint>,
    #[serde(default = "default_assignment")]
    pub assignment: AssignmentMode,
    #[serde(default)]
    pub early_departure: bool,
}

fn default_assignment() -> AssignmentMode {
    AssignmentMode::Deterministic
}

impl NetworkSpec {
    pub fn build(self) -> Result<Network> {
        Network::new(
            self.evses,
            self.constraints,
            self.assignment,
            self.early_departure,
        )
    }

    pub fn from_network(network: &Network) -> Self {
        NetworkSpec {
            evses: network.evses().cloned().collect(),
            constraints: network.constraints().to_vec(),
            assignment: network.assignment(),
            early_departure: network.early_departure(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::Battery;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rates(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn pair_network(phase_b: f64, limit: f64) -> Network {
        let evses = vec![
            EvseNode::continuous("a", 0.0, 208.0, 32.0),
            EvseNode::continuous("b", phase_b, 208.0, 32.0),
        ];
        let constraints = vec![CurrentConstraint {
            id: "line".into(),
            coefficients: rates(&[("a", 1.0), ("b", 1.0)]),
            limit,
            phase_aware: true,
        }];
        Network::new(evses, constraints, AssignmentMode::Deterministic, false).unwrap()
    }

    #[test]
    fn two_phase_pair_cancels_to_single_magnitude() {
        let net = pair_network(-120.0, 100.0);
        let currents = net.constraint_currents(&rates(&[("a", 16.0), ("b", 16.0)])).unwrap();
        assert_relative_eq!(currents["line"], 16.0, max_relative = 1e-12);
        let currents = net.constraint_currents(&rates(&[("a", 16.0), ("b", 0.0)])).unwrap();
        assert_relative_eq!(currents["line"], 16.0, max_relative = 1e-12);
    }

    #[test]
    fn balanced_three_phase_cancels() {
        let evses = vec![
            EvseNode::continuous("a", 0.0, 208.0, 32.0),
            EvseNode::continuous("b", -120.0, 208.0, 32.0),
            EvseNode::continuous("c", 120.0, 208.0, 32.0),
        ];
        let constraints = vec![CurrentConstraint {
            id: "feeder".into(),
            coefficients: rates(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]),
            limit: 100.0,
            phase_aware: true,
        }];
        let net = Network::new(evses, constraints, AssignmentMode::Deterministic, false).unwrap();
        let currents = net
            .constraint_currents(&rates(&[("a", 10.0), ("b", 10.0), ("c", 10.0)]))
            .unwrap();
        assert!(currents["feeder"].abs() < 1e-9);
    }

    #[test]
    fn rejects_unknown_station_and_negative_rate() {
        let net = pair_network(-120.0, 16.0);
        assert!(matches!(
            net.constraint_currents(&rates(&[("zz", 1.0)])),
            Err(Error::UnknownEvse(_))
        ));
        assert!(matches!(
            net.constraint_currents(&rates(&[("a", -1.0)])),
            Err(Error::NegativeRate { .. })
        ));
    }

    #[test]
    fn feasibility_examples() {
        let net = pair_network(-120.0, 16.0);
        assert!(net.is_feasible(&rates(&[("a", 16.0), ("b", 16.0)]), 1e-6).unwrap());
        assert!(!net.is_feasible(&rates(&[("a", 16.1), ("b", 16.1)]), 1e-6).unwrap());

        let single = pair_network(0.0, 16.0);
        assert!(!single.is_feasible(&rates(&[("a", 9.0), ("b", 8.0)]), 1e-6).unwrap());
    }

    #[test]
    fn envelope_is_part_of_feasibility() {
        let net = pair_network(-120.0, 100.0);
        // within the line limit but beyond the EVSE's 32 A envelope
        assert!(!net.is_feasible(&rates(&[("a", 40.0)]), 1e-6).unwrap());
    }

    #[test]
    fn max_feasible_rate_examples() {
        let evses = vec![EvseNode::continuous("a", 0.0, 208.0, 32.0)];
        let constraints = vec![CurrentConstraint {
            id: "line".into(),
            coefficients: rates(&[("a", 1.0)]),
            limit: 32.0,
            phase_aware: true,
        }];
        let net = Network::new(evses, constraints, AssignmentMode::Deterministic, false).unwrap();
        let r = net.max_feasible_rate("a", &BTreeMap::new(), 32.0, 0.01).unwrap();
        assert_relative_eq!(r, 32.0);

        let single = pair_network(0.0, 16.0);
        let r = single
            .max_feasible_rate("b", &rates(&[("a", 16.0)]), 32.0, 0.01)
            .unwrap();
        assert_relative_eq!(r, 0.0);

        // |16 + b * e^(-j120)| <= 16 solves to b <= 16
        let pair = pair_network(-120.0, 16.0);
        let r = pair
            .max_feasible_rate("b", &rates(&[("a", 16.0)]), 32.0, 0.01)
            .unwrap();
        assert!((r - 16.0).abs() <= 0.01 + 1e-9, "got {r}");
    }

    #[test]
    fn max_feasible_rate_matches_brute_force_scan() {
        let pair = pair_network(-120.0, 16.0);
        let fixed = rates(&[("a", 16.0)]);
        let bisect = pair.max_feasible_rate("b", &fixed, 32.0, 0.01).unwrap();
        let mut best = 0.0;
        let mut r = 0.0;
        while r <= 32.0 {
            let mut trial = fixed.clone();
            trial.insert("b".into(), r);
            if pair.is_feasible(&trial, 1e-6).unwrap() {
                best = r;
            }
            r += 0.001;
        }
        assert!((bisect - best).abs() <= 0.011, "bisect {bisect} vs scan {best}");
    }

    #[test]
    fn max_feasible_rate_rejects_infeasible_fixed() {
        let single = pair_network(0.0, 16.0);
        let err = single.max_feasible_rate("b", &rates(&[("a", 17.0)]), 32.0, 0.01);
        assert!(matches!(err, Err(Error::InfeasibleFixedRates { .. })));
    }

    #[test]
    fn auto_single_phase_limit() {
        let ids = vec!["s1".to_string()];
        let net = auto_network(&ids, 6.656, &AutoNetworkOptions::new(Phasing::Single)).unwrap();
        assert_relative_eq!(net.constraints()[0].limit, 32.0, max_relative = 1e-12);
    }

    #[test]
    fn auto_three_phase_round_robin() {
        let ids: Vec<String> = (1..=3).map(|i| format!("s{i}")).collect();
        let net = auto_network(&ids, 20.0, &AutoNetworkOptions::new(Phasing::Three)).unwrap();
        let phases: Vec<f64> = ["s1", "s2", "s3"]
            .iter()
            .map(|id| net.evse(id).unwrap().phase_deg)
            .collect();
        assert_eq!(phases, vec![0.0, -120.0, 120.0]);
    }

    #[test]
    fn auto_three_phase_six_stations_two_per_line() {
        let ids: Vec<String> = (1..=6).map(|i| format!("s{i}")).collect();
        let net = auto_network(&ids, 20.0, &AutoNetworkOptions::new(Phasing::Three)).unwrap();
        for name in ["phase-a", "phase-b", "phase-c"] {
            let row = net.constraints().iter().find(|c| c.id == name).unwrap();
            assert_eq!(row.coefficients.len(), 2, "{name}");
            assert!(row.phase_aware);
        }
        let agg = net.constraints().iter().find(|c| c.id == "transformer").unwrap();
        assert_eq!(agg.coefficients.len(), 6);
        assert!(!agg.phase_aware);
    }

    #[test]
    fn auto_rejects_nonpositive_cap() {
        let ids = vec!["s1".to_string()];
        assert!(matches!(
            auto_network(&ids, 0.0, &AutoNetworkOptions::new(Phasing::Single)),
            Err(Error::NonpositiveCapacity(_))
        ));
    }

    fn session(id: &str, station: Option<&str>) -> SessionEv {
        SessionEv {
            session_id: id.into(),
            station_id: station.map(|s| s.to_string()),
            arrival: 0,
            departure_actual: 100,
            departure_estimated: 100,
            requested_amp_periods: 64.0,
            delivered_amp_periods: 0.0,
            battery: Battery::ideal(64.0, 0.0, 32.0),
        }
    }

    fn stochastic_pair() -> Network {
        let evses = vec![
            EvseNode::continuous("a", 0.0, 208.0, 32.0),
            EvseNode::continuous("b", 0.0, 208.0, 32.0),
        ];
        Network::new(evses, Vec::new(), AssignmentMode::Stochastic, false).unwrap()
    }

    #[test]
    fn stochastic_assign_takes_lowest_open() {
        let mut net = stochastic_pair();
        let out = net.plugin(session("e1", None)).unwrap();
        assert_eq!(out, PluginOutcome::Assigned("a".into()));
        assert_eq!(net.swap_count(), 0);
        let out = net.plugin(session("e2", None)).unwrap();
        assert_eq!(out, PluginOutcome::Assigned("b".into()));
    }

    #[test]
    fn stochastic_queue_head_swaps_in_on_unplug() {
        let mut net = stochastic_pair();
        net.plugin(session("e1", None)).unwrap();
        net.plugin(session("e2", None)).unwrap();
        assert_eq!(net.plugin(session("e3", None)).unwrap(), PluginOutcome::Queued);
        assert_eq!(net.waiting_len(), 1);

        let out = net.unplug("e1", 7);
        assert_eq!(out.departed.unwrap().session_id, "e1");
        assert_eq!(out.swapped_in.as_deref(), Some("a"));
        assert_eq!(net.swap_count(), 1);
        let swapped = net.session_at("a").unwrap();
        assert_eq!(swapped.session_id, "e3");
        assert_eq!(swapped.arrival, 7, "arrival re-stamped at assignment");
        assert_eq!(swapped.departure_actual, 100, "departure unchanged");
    }

    #[test]
    fn unplug_removes_waiting_session() {
        let mut net = stochastic_pair();
        net.plugin(session("e1", None)).unwrap();
        net.plugin(session("e2", None)).unwrap();
        net.plugin(session("e3", None)).unwrap();
        let out = net.unplug("e3", 9);
        assert!(out.left_queue);
        assert_eq!(out.departed.unwrap().session_id, "e3");
        assert_eq!(net.waiting_len(), 0);
        assert_eq!(net.swap_count(), 0, "queue departures are not swaps");
    }

    #[test]
    fn deterministic_rejects_double_occupancy() {
        let evses = vec![EvseNode::continuous("a", 0.0, 208.0, 32.0)];
        let mut net = Network::new(evses, Vec::new(), AssignmentMode::Deterministic, false).unwrap();
        net.plugin(session("e1", Some("a"))).unwrap();
        assert!(matches!(
            net.plugin(session("e2", Some("a"))),
            Err(Error::EvseOccupied { .. })
        ));
    }

    #[test]
    fn reducing_one_rate_can_raise_a_constraint_current() {
        // Known non-monotonicity: on a 0/-120 pair, |16 + 4 e^(-j120)| is
        // about 14.4 A and rises toward 16 A as the second rate drops to 0.
        let net = pair_network(-120.0, 100.0);
        let high = net.constraint_currents(&rates(&[("a", 16.0), ("b", 4.0)])).unwrap()["line"];
        let low = net.constraint_currents(&rates(&[("a", 16.0), ("b", 0.0)])).unwrap()["line"];
        assert_relative_eq!(high, 208.0f64.sqrt(), max_relative = 1e-12);
        assert!(low > high);
    }

    proptest! {
        #[test]
        fn constraint_currents_positively_homogeneous(
            ra in 0.0f64..32.0,
            rb in 0.0f64..32.0,
            scale in 0.0f64..2.0,
        ) {
            let net = pair_network(-120.0, 1000.0);
            let base = net.constraint_currents(&rates(&[("a", ra), ("b", rb)])).unwrap();
            let scaled = net
                .constraint_currents(&rates(&[("a", scale * ra), ("b", scale * rb)]))
                .unwrap();
            prop_assert!((scaled["line"] - scale * base["line"]).abs() <= 1e-9 * (1.0 + base["line"]));
        }

        #[test]
        fn scaling_down_preserves_magnitude_feasibility(
            ra in 0.0f64..32.0,
            rb in 0.0f64..32.0,
            shrink in 0.0f64..1.0,
        ) {
            let net = pair_network(-120.0, 16.0);
            let full = rates(&[("a", ra), ("b", rb)]);
            if net.is_feasible(&full, 1e-6).unwrap() {
                let scaled = rates(&[("a", shrink * ra), ("b", shrink * rb)]);
                prop_assert!(net.is_feasible(&scaled, 1e-6).unwrap());
            }
        }
    }
}
