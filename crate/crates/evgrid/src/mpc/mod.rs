//! Model-predictive scheduling: a receding-horizon convex program over the
//! active sessions with the magnitude constraints replaced by a polyhedral
//! inner approximation, solved by the built-in first-order method. The same
//! machinery doubles as an offline benchmark computed with perfect
//! hindsight.

mod solver;

pub use solver::{solve, ConvexProgram, QuadGroup, Solution, SolveOptions, SparseRow};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algorithms::{quantize_and_repair, Schedule, SchedulingAlgorithm};
use crate::engine::{AlgoView, ScheduleDiagnostics};
use crate::error::{Error, Result};
use crate::hardware::SessionEv;
use crate::network::{CurrentConstraint, Network};

/// Default polygon side count for the online controller. Twelve sides keep
/// the returned rates safe at a capacity sacrifice of `1 - cos(pi/12)`,
/// about 3.4 percent.
pub const DEFAULT_SIDES: usize = 12;

/// Finer polygon for offline benchmarks, where the approximation loss must
/// stay well under the comparison tolerance.
pub const OFFLINE_SIDES: usize = 96;

/// One linear surrogate row over station rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedRow {
    pub coefficients: BTreeMap<String, f64>,
    pub rhs: f64,
}

/// Replaces `|sum_i A_i r_i e^(j phi_i)| <= R` with `sides` half-planes
/// `Re(z e^(-j theta_k)) <= R cos(pi/sides)`, `theta_k = 2 pi k / sides`.
///
/// This is an inner (safe) approximation: any rate vector satisfying every
/// row satisfies the true magnitude constraint, because some `theta_k` lies
/// within `pi/sides` of the phase of `z`. Phase-blind constraints pass
/// through as a single exact row.
pub fn linearize_magnitude(
    network: &Network,
    constraint: &CurrentConstraint,
    sides: usize,
) -> Result<Vec<LinearizedRow>> {
    if !constraint.phase_aware {
        return Ok(vec![LinearizedRow {
            coefficients: constraint.coefficients.clone(),
            rhs: constraint.limit,
        }]);
    }
    if sides < 3 {
        return Err(Error::TooFewSides(sides));
    }
    let rhs = constraint.limit * (std::f64::consts::PI / sides as f64).cos();
    let mut rows = Vec::with_capacity(sides);
    for k in 0..sides {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
        let mut coefficients = BTreeMap::new();
        for (station, weight) in &constraint.coefficients {
            let phi = network.evse(station)?.phase_deg.to_radians();
            coefficients.insert(station.clone(), weight * (phi - theta).cos());
        }
        rows.push(LinearizedRow { coefficients, rhs });
    }
    Ok(rows)
}

/// Objective contributions, maximized as a weighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveTerm {
    /// `sum_t w_t sum_i r[i][t]` with linearly decaying weights
    /// `w_t = (H - t) / H`, prioritizing early delivery.
    QuickCharge { weight: f64 },
    /// Flat reward per amp-period delivered. Pairs with cost terms so that
    /// serving demand stays worthwhile; also the offline benchmark
    /// objective.
    TotalEnergy { weight: f64 },
    /// Negated energy cost `-sum_t price(t) * kWh_t`; needs a tariff.
    EnergyCost { weight: f64 },
    /// Negated demand-charge increment `-rate * max(0, peak - peak_so_far)`
    /// via an auxiliary peak variable.
    DemandCharge { rate_per_kw: f64 },
    /// Negated squared total load `-sum_t (load_t - solar_t + P_t)^2`.
    LoadFlatten { weight: f64 },
    /// `-epsilon * sum r^2`, spreading rates across sessions.
    EqualShare { epsilon: f64 },
}

/// Surrogate rows used when assembling programs. Constraints whose
/// participating EVSEs share one phase angle reduce exactly to
/// `|sum A_i r_i| <= R` (two signed rows), so only genuinely mixed-phase
/// constraints pay the polygon's `cos(pi/sides)` capacity sacrifice.
fn surrogate_rows(
    network: &Network,
    constraint: &CurrentConstraint,
    sides: usize,
) -> Result<Vec<LinearizedRow>> {
    if constraint.phase_aware && !constraint.coefficients.is_empty() {
        let mut angles = constraint
            .coefficients
            .keys()
            .map(|station| network.evse(station).map(|e| e.phase_deg));
        let first = angles.next().unwrap()?;
        let mut uniform = true;
        for angle in angles {
            if (angle? - first).abs() > 1e-9 {
                uniform = false;
                break;
            }
        }
        if uniform {
            let negated = constraint
                .coefficients
                .iter()
                .map(|(k, v)| (k.clone(), -v))
                .collect();
            return Ok(vec![
                LinearizedRow {
                    coefficients: constraint.coefficients.clone(),
                    rhs: constraint.limit,
                },
                LinearizedRow {
                    coefficients: negated,
                    rhs: constraint.limit,
                },
            ]);
        }
    }
    linearize_magnitude(network, constraint, sides)
}

/// Assembles the receding-horizon program for the current view: box bounds
/// per (session, period), per-session energy caps, linearized network rows
/// per period, and the requested objective terms.
pub fn build_program(
    view: &AlgoView,
    horizon: u32,
    terms: &[ObjectiveTerm],
    sides: usize,
) -> Result<ConvexProgram> {
    if horizon == 0 {
        return Err(Error::Scenario("MPC horizon must be at least 1".into()));
    }
    let network = view.network();
    let h = horizon as usize;
    let sessions = &view.sessions;
    let rate_vars = sessions.len() * h;

    let mut upper = vec![0.0; rate_vars];
    let mut station_to_var_base: BTreeMap<String, usize> = BTreeMap::new();
    let mut volts_per_session = Vec::with_capacity(sessions.len());
    for (i, session) in sessions.iter().enumerate() {
        let effective = view.effective_max(session);
        let window = session.departure_estimated.saturating_sub(view.now).min(horizon) as usize;
        for t in 0..h {
            upper[i * h + t] = if t < window { effective } else { 0.0 };
        }
        station_to_var_base.insert(session.station_id.clone(), i);
        volts_per_session.push(network.evse(&session.station_id)?.voltage);
    }

    let mut rows = Vec::new();
    for (session_idx, session) in sessions.iter().enumerate() {
        rows.push(SparseRow {
            coeffs: (0..h).map(|t| (session_idx * h + t, 1.0)).collect(),
            rhs: session.remaining_amp_periods,
        });
    }
    for constraint in network.constraints() {
        let surrogate = surrogate_rows(network, constraint, sides)?;
        for row in &surrogate {
            // instantiate per period over the sessions present on the row's
            // stations
            let participating: Vec<(usize, f64)> = row
                .coefficients
                .iter()
                .filter_map(|(station, coeff)| {
                    station_to_var_base.get(station).map(|i| (*i, *coeff))
                })
                .collect();
            if participating.is_empty() {
                continue;
            }
            for t in 0..h {
                let coeffs: Vec<(usize, f64)> = participating
                    .iter()
                    .map(|(i, coeff)| (i * h + t, *coeff))
                    .collect();
                rows.push(SparseRow {
                    coeffs,
                    rhs: row.rhs,
                });
            }
        }
    }

    let kwh_factor: Vec<f64> = volts_per_session
        .iter()
        .map(|v| v * view.period_minutes / 60.0 / 1000.0)
        .collect();
    let kw_factor: Vec<f64> = volts_per_session.iter().map(|v| v / 1000.0).collect();

    let mut num_vars = rate_vars;
    let mut linear = vec![0.0; rate_vars];
    let mut quad_diag = vec![0.0; rate_vars];
    let mut quad_groups = Vec::new();
    let mut aux_peak: Option<usize> = None;

    for term in terms {
        match term {
            ObjectiveTerm::QuickCharge { weight } => {
                for i in 0..sessions.len() {
                    for t in 0..h {
                        linear[i * h + t] += weight * (h - t) as f64 / h as f64;
                    }
                }
            }
            ObjectiveTerm::TotalEnergy { weight } => {
                for value in linear.iter_mut().take(rate_vars) {
                    *value += weight;
                }
            }
            ObjectiveTerm::EnergyCost { weight } => {
                if !view.has_tariff() {
                    return Err(Error::ObjectiveTerm(
                        "energy_cost",
                        "no tariff attached to the simulation".into(),
                    ));
                }
                for t in 0..h {
                    let price = view.price_at(view.now + t as u32).ok_or_else(|| {
                        Error::ObjectiveTerm(
                            "energy_cost",
                            format!("tariff does not cover period {}", view.now + t as u32),
                        )
                    })?;
                    for i in 0..sessions.len() {
                        linear[i * h + t] -= weight * price * kwh_factor[i];
                    }
                }
            }
            ObjectiveTerm::DemandCharge { rate_per_kw } => {
                let peak_var = *aux_peak.get_or_insert_with(|| {
                    let idx = num_vars;
                    num_vars += 1;
                    linear.push(0.0);
                    quad_diag.push(0.0);
                    idx
                });
                linear[peak_var] -= rate_per_kw;
                for t in 0..h {
                    let mut coeffs: Vec<(usize, f64)> = (0..sessions.len())
                        .map(|i| (i * h + t, kw_factor[i]))
                        .collect();
                    coeffs.push((peak_var, -1.0));
                    rows.push(SparseRow {
                        coeffs,
                        rhs: view.peak_so_far_kw,
                    });
                }
            }
            ObjectiveTerm::LoadFlatten { weight } => {
                let scale = weight.sqrt();
                for t in 0..h {
                    let offset =
                        view.external_load_kw(view.now + t as u32) - view.solar_kw(view.now + t as u32);
                    let coeffs: Vec<(usize, f64)> = (0..sessions.len())
                        .map(|i| (i * h + t, scale * kw_factor[i]))
                        .collect();
                    quad_groups.push(QuadGroup {
                        offset: scale * offset,
                        coeffs,
                    });
                }
            }
            ObjectiveTerm::EqualShare { epsilon } => {
                if *epsilon <= 0.0 {
                    return Err(Error::ObjectiveTerm(
                        "equal_share",
                        "epsilon must be positive".into(),
                    ));
                }
                for value in quad_diag.iter_mut().take(rate_vars) {
                    *value += epsilon;
                }
            }
        }
    }

    let mut upper_full = vec![0.0; num_vars];
    upper_full[..rate_vars].copy_from_slice(&upper);
    if let Some(peak_var) = aux_peak {
        upper_full[peak_var] = f64::INFINITY;
    }

    Ok(ConvexProgram {
        num_vars,
        lower: vec![0.0; num_vars],
        upper: upper_full,
        rows,
        linear,
        quad_diag,
        quad_groups,
        rate_vars,
        horizon,
        stations: sessions.iter().map(|s| s.station_id.clone()).collect(),
    })
}

/// Objective presets. The cost and flattening presets pair their shaping
/// term with a delivery reward sized so that serving demand always improves
/// the objective; otherwise a pure cost term is maximized by delivering
/// nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum MpcObjective {
    QuickCharge,
    CostMinimizing,
    LoadFlattening,
    Custom { terms: Vec<ObjectiveTerm> },
}

impl MpcObjective {
    fn resolve(&self, view: &AlgoView, horizon: u32) -> Result<Vec<ObjectiveTerm>> {
        match self {
            MpcObjective::QuickCharge => Ok(vec![ObjectiveTerm::QuickCharge { weight: 1.0 }]),
            MpcObjective::CostMinimizing => {
                let mut price_max: f64 = 0.0;
                for t in 0..horizon {
                    let price = view.price_at(view.now + t).ok_or_else(|| {
                        Error::ObjectiveTerm("energy_cost", "no tariff attached".into())
                    })?;
                    price_max = price_max.max(price);
                }
                let kwh_factor_max = view
                    .sessions
                    .iter()
                    .filter_map(|s| view.network().evse(&s.station_id).ok())
                    .map(|e| e.voltage * view.period_minutes / 60.0 / 1000.0)
                    .fold(0.0, f64::max);
                // Delivering must beat every price by a decisive margin;
                // the reward level does not change which periods are
                // cheapest, only how sharply "deliver" wins over "don't".
                Ok(vec![
                    ObjectiveTerm::TotalEnergy {
                        weight: kwh_factor_max * (2.0 * price_max + 0.05) + 1e-3,
                    },
                    ObjectiveTerm::EnergyCost { weight: 1.0 },
                ])
            }
            MpcObjective::LoadFlattening => {
                let mut background: f64 = 0.0;
                for t in 0..horizon {
                    let net =
                        view.external_load_kw(view.now + t) - view.solar_kw(view.now + t);
                    background = background.max(net.abs());
                }
                let mut kw_possible = 0.0;
                let mut kw_factor_max: f64 = 0.0;
                for session in &view.sessions {
                    if let Ok(evse) = view.network().evse(&session.station_id) {
                        let factor = evse.voltage / 1000.0;
                        kw_possible += factor * view.effective_max(session);
                        kw_factor_max = kw_factor_max.max(factor);
                    }
                }
                let envelope = background + kw_possible;
                Ok(vec![
                    ObjectiveTerm::TotalEnergy {
                        weight: 2.0 * envelope * kw_factor_max + 1e-3,
                    },
                    ObjectiveTerm::LoadFlatten { weight: 1.0 },
                ])
            }
            MpcObjective::Custom { terms } => Ok(terms.clone()),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            MpcObjective::QuickCharge => "quick_charge",
            MpcObjective::CostMinimizing => "cost_minimizing",
            MpcObjective::LoadFlattening => "load_flattening",
            MpcObjective::Custom { .. } => "custom",
        }
    }
}

/// Configuration for the online MPC scheduler.
#[derive(Debug, Clone)]
pub struct MpcOptions {
    pub objective: MpcObjective,
    /// Extra equal-share regularization added on top of the objective.
    pub equal_share_epsilon: Option<f64>,
    pub sides: usize,
    /// Upper bound on the optimization horizon in periods.
    pub horizon_cap: u32,
    pub solve: SolveOptions,
}

impl Default for MpcOptions {
    fn default() -> Self {
        MpcOptions {
            objective: MpcObjective::QuickCharge,
            equal_share_epsilon: None,
            sides: DEFAULT_SIDES,
            horizon_cap: 288,
            solve: SolveOptions::default(),
        }
    }
}

/// Receding-horizon controller. Each call optimizes out to the latest
/// estimated departure (capped), quantizes every column through the EVSE
/// pilot models with the shared repair pass, and returns the full matrix;
/// the engine consumes one column per period until the next recompute.
pub struct MpcAlgorithm {
    options: MpcOptions,
    diagnostics: Option<ScheduleDiagnostics>,
}

impl MpcAlgorithm {
    pub fn new(options: MpcOptions) -> Self {
        MpcAlgorithm {
            options,
            diagnostics: None,
        }
    }

    pub fn quick_charge() -> Self {
        MpcAlgorithm::new(MpcOptions::default())
    }

    pub fn cost_minimizing() -> Self {
        MpcAlgorithm::new(MpcOptions {
            objective: MpcObjective::CostMinimizing,
            ..MpcOptions::default()
        })
    }

    pub fn load_flattening() -> Self {
        MpcAlgorithm::new(MpcOptions {
            objective: MpcObjective::LoadFlattening,
            ..MpcOptions::default()
        })
    }
}

impl SchedulingAlgorithm for MpcAlgorithm {
    fn name(&self) -> String {
        format!("mpc-{}", self.options.objective.label())
    }

    fn schedule(&mut self, view: &AlgoView) -> Result<Schedule> {
        if view.sessions.is_empty() {
            return Ok(Schedule::empty());
        }
        let window_max = view
            .sessions
            .iter()
            .map(|s| s.departure_estimated.saturating_sub(view.now))
            .max()
            .unwrap_or(0);
        let horizon = window_max.clamp(1, self.options.horizon_cap);
        let mut terms = self.options.objective.resolve(view, horizon)?;
        if let Some(epsilon) = self.options.equal_share_epsilon {
            terms.push(ObjectiveTerm::EqualShare { epsilon });
        }
        let program = build_program(view, horizon, &terms, self.options.sides)?;
        let solution = solve(&program, &self.options.solve)?;

        let h = horizon as usize;
        let order: Vec<String> = program.stations.clone();
        let mut columns: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); h];
        for (i, station) in program.stations.iter().enumerate() {
            for (t, column) in columns.iter_mut().enumerate() {
                column.insert(station.clone(), solution.values[i * h + t].max(0.0));
            }
        }
        let mut rates: BTreeMap<String, Vec<f64>> = program
            .stations
            .iter()
            .map(|s| (s.clone(), Vec::with_capacity(h)))
            .collect();
        for column in columns {
            let (repaired, _) = quantize_and_repair(view.network(), &order, &column)?;
            for (station, value) in repaired {
                rates.get_mut(&station).expect("station missing").push(value);
            }
        }
        self.diagnostics = Some(ScheduleDiagnostics {
            period: view.now,
            iterations: solution.iterations,
            converged: solution.converged,
            max_row_violation: solution.max_row_violation,
            objective: solution.objective,
        });
        Ok(Schedule { rates })
    }

    fn take_diagnostics(&mut self) -> Option<ScheduleDiagnostics> {
        self.diagnostics.take()
    }
}

/// Result of the hindsight benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineBenchmark {
    pub delivered_amp_periods: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub horizon: u32,
    pub per_session: BTreeMap<String, f64>,
}

/// Solves one program over the whole run with the *actual* arrivals,
/// departures, and demands, maximizing total delivered energy. The result
/// upper-bounds what any constraint-respecting online algorithm can
/// deliver. Rates are continuous (no pilot quantization), which keeps the
/// bound valid.
pub fn offline_optimal(
    sessions: &[SessionEv],
    network: &Network,
    sides: usize,
    opts: &SolveOptions,
) -> Result<OfflineBenchmark> {
    if sessions.is_empty() {
        return Ok(OfflineBenchmark {
            delivered_amp_periods: 0.0,
            objective: 0.0,
            converged: true,
            iterations: 0,
            horizon: 0,
            per_session: BTreeMap::new(),
        });
    }
    let horizon = sessions
        .iter()
        .map(|s| s.departure_actual)
        .max()
        .unwrap_or(0);
    if horizon == 0 {
        return Err(Error::Scenario("sessions must depart after period 0".into()));
    }
    let h = horizon as usize;
    let n = sessions.len() * h;
    let mut upper = vec![0.0; n];
    let mut station_sessions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, session) in sessions.iter().enumerate() {
        let station = session.station_id.clone().ok_or_else(|| {
            Error::Scenario(format!(
                "offline benchmark needs a station for session `{}`",
                session.session_id
            ))
        })?;
        let evse = network.evse(&station)?;
        let effective = evse.max_rate.min(session.battery.max_rate);
        for t in session.arrival..session.departure_actual.min(horizon) {
            upper[i * h + t as usize] = effective;
        }
        station_sessions.entry(station).or_default().push(i);
    }

    let mut rows = Vec::new();
    for (i, session) in sessions.iter().enumerate() {
        rows.push(SparseRow {
            coeffs: (0..h).map(|t| (i * h + t, 1.0)).collect(),
            rhs: session.remaining_demand(),
        });
    }
    for constraint in network.constraints() {
        for row in surrogate_rows(network, constraint, sides)? {
            let participating: Vec<(usize, f64)> = row
                .coefficients
                .iter()
                .flat_map(|(station, coeff)| {
                    station_sessions
                        .get(station)
                        .into_iter()
                        .flatten()
                        .map(move |i| (*i, *coeff))
                })
                .collect();
            if participating.is_empty() {
                continue;
            }
            for t in 0..h {
                rows.push(SparseRow {
                    coeffs: participating
                        .iter()
                        .map(|(i, coeff)| (i * h + t, *coeff))
                        .collect(),
                    rhs: row.rhs,
                });
            }
        }
    }

    let program = ConvexProgram {
        num_vars: n,
        lower: vec![0.0; n],
        upper,
        rows,
        linear: vec![1.0; n],
        quad_diag: vec![0.0; n],
        quad_groups: Vec::new(),
        rate_vars: n,
        horizon,
        stations: sessions
            .iter()
            .map(|s| s.station_id.clone().unwrap_or_default())
            .collect(),
    };
    let solution = solve(&program, opts)?;
    let mut per_session = BTreeMap::new();
    for (i, session) in sessions.iter().enumerate() {
        let delivered: f64 = (0..h).map(|t| solution.values[i * h + t]).sum();
        per_session.insert(session.session_id.clone(), delivered);
    }
    Ok(OfflineBenchmark {
        delivered_amp_periods: solution.values.iter().sum(),
        objective: solution.objective,
        converged: solution.converged,
        iterations: solution.iterations,
        horizon,
        per_session,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{AlgoView, SessionView};
    use crate::hardware::Battery;
    use crate::network::{AssignmentMode, EvseNode};
    use crate::signals::{PriceBand, Season, Tariff, TimeSeriesSignal};
    use approx::assert_relative_eq;
    use chrono::{NaiveDate, NaiveDateTime};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn start() -> NaiveDateTime {
        // a Monday, so weekday tariff bands apply
        NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    fn unconstrained(stations: &[(&str, f64)]) -> Network {
        let evses = stations
            .iter()
            .map(|(id, volts)| EvseNode::continuous(*id, 0.0, *volts, 32.0))
            .collect();
        Network::new(evses, Vec::new(), AssignmentMode::Deterministic, false).unwrap()
    }

    fn single_row(stations: &[&str], limit: f64, voltage: f64) -> Network {
        let evses = stations
            .iter()
            .map(|id| EvseNode::continuous(*id, 0.0, voltage, 32.0))
            .collect();
        let constraints = vec![CurrentConstraint {
            id: "line".into(),
            coefficients: stations.iter().map(|s| (s.to_string(), 1.0)).collect(),
            limit,
            phase_aware: true,
        }];
        Network::new(evses, constraints, AssignmentMode::Deterministic, false).unwrap()
    }

    fn three_phase_feeder(limit: f64) -> Network {
        let evses = vec![
            EvseNode::continuous("a", 0.0, 208.0, 32.0),
            EvseNode::continuous("b", -120.0, 208.0, 32.0),
            EvseNode::continuous("c", 120.0, 208.0, 32.0),
        ];
        let constraints = vec![CurrentConstraint {
            id: "feeder".into(),
            coefficients: ["a", "b", "c"].iter().map(|s| (s.to_string(), 1.0)).collect(),
            limit,
            phase_aware: true,
        }];
        Network::new(evses, constraints, AssignmentMode::Deterministic, false).unwrap()
    }

    fn sview(station: &str, departure: u32, remaining: f64) -> SessionView {
        SessionView {
            session_id: format!("s-{station}"),
            station_id: station.into(),
            arrival: 0,
            departure_estimated: departure,
            remaining_amp_periods: remaining,
            charger_max_rate: 32.0,
        }
    }

    fn hourly_tariff(bands: &[(&str, &str, f64)]) -> Tariff {
        let tariff = Tariff {
            name: "test".into(),
            demand_charge_per_kw: 0.0,
            seasons: vec![Season {
                start: "01-01".into(),
                end: "12-31".into(),
                weekdays: true,
                weekends: true,
                bands: bands
                    .iter()
                    .map(|(s, e, p)| PriceBand {
                        start: s.to_string(),
                        end: e.to_string(),
                        price_per_kwh: *p,
                    })
                    .collect(),
            }],
        };
        tariff.validate().unwrap();
        tariff
    }

    #[test]
    fn linearize_polygon_scaling() {
        let net = unconstrained(&[("a", 208.0)]);
        let constraint = CurrentConstraint {
            id: "c".into(),
            coefficients: [("a".to_string(), 1.0)].into_iter().collect(),
            limit: 32.0,
            phase_aware: true,
        };
        let rows = linearize_magnitude(&net, &constraint, 4).unwrap();
        // binding row at theta = 0 gives r <= 32 cos(pi/4)
        let binding = rows
            .iter()
            .map(|r| r.rhs / r.coefficients["a"])
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(binding, 22.627416997969522, max_relative = 1e-12);

        let rows = linearize_magnitude(&net, &constraint, 12).unwrap();
        let binding = rows
            .iter()
            .map(|r| r.rhs / r.coefficients["a"])
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(binding, 30.909626441250186, max_relative = 1e-12);

        assert!(matches!(
            linearize_magnitude(&net, &constraint, 2),
            Err(Error::TooFewSides(2))
        ));
    }

    #[test]
    fn polygon_rows_are_an_inner_approximation() {
        let net = three_phase_feeder(16.0);
        let constraint = net.constraints()[0].clone();
        let phases = [0.0f64, -120.0, 120.0];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sides in [4usize, 8, 12] {
            let rows = linearize_magnitude(&net, &constraint, sides).unwrap();
            let mut hits = 0;
            for _ in 0..10_000 {
                let r: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..40.0)).collect();
                let all_rows_ok = rows.iter().all(|row| {
                    let lhs: f64 = ["a", "b", "c"]
                        .iter()
                        .zip(&r)
                        .map(|(s, rate)| row.coefficients[*s] * rate)
                        .sum();
                    lhs <= row.rhs + 1e-12
                });
                if all_rows_ok {
                    hits += 1;
                    // independent check through complex arithmetic
                    let z: Complex64 = phases
                        .iter()
                        .zip(&r)
                        .map(|(phi, rate)| {
                            Complex64::from_polar(*rate, phi.to_radians())
                        })
                        .sum();
                    assert!(
                        z.norm() <= 16.0 + 1e-9,
                        "sides={sides} rates={r:?} |z|={}",
                        z.norm()
                    );
                }
            }
            assert!(hits > 0, "sampler never landed inside the polygon");
        }
    }

    #[test]
    fn cost_minimizing_picks_the_cheap_period() {
        let net = unconstrained(&[("a", 1000.0)]);
        let tariff = hourly_tariff(&[("00:00", "01:00", 1.0), ("01:00", "24:00", 2.0)]);
        let view = AlgoView::standalone(0, 60.0, start(), vec![sview("a", 2, 10.0)], &net)
            .with_tariff(&tariff);
        let terms = MpcObjective::CostMinimizing.resolve(&view, 2).unwrap();
        let program = build_program(&view, 2, &terms, DEFAULT_SIDES).unwrap();
        let solution = solve(&program, &SolveOptions::default()).unwrap();
        assert!(solution.converged);
        assert_relative_eq!(solution.values[0], 10.0, epsilon = 0.01);
        assert_relative_eq!(solution.values[1], 0.0, epsilon = 0.01);

        // 1 A-grid oracle over the same program
        let mut best = f64::NEG_INFINITY;
        for x0 in 0..=32 {
            for x1 in 0..=32 {
                if x0 + x1 > 10 {
                    continue;
                }
                best = best.max(program.objective(&[x0 as f64, x1 as f64]));
            }
        }
        assert!(
            solution.objective >= best - 0.01 * best.abs().max(1.0),
            "solver {} vs oracle {best}",
            solution.objective
        );
    }

    #[test]
    fn load_flattening_fills_the_valley() {
        let net = unconstrained(&[("a", 1000.0)]);
        let load = TimeSeriesSignal {
            start: start(),
            period_minutes: 60.0,
            values_kw: vec![0.0, 10.0],
        };
        let view = AlgoView::standalone(0, 60.0, start(), vec![sview("a", 2, 10.0)], &net)
            .with_external_load(&load, 0);
        let terms = MpcObjective::LoadFlattening.resolve(&view, 2).unwrap();
        let program = build_program(&view, 2, &terms, DEFAULT_SIDES).unwrap();
        let solution = solve(&program, &SolveOptions::default()).unwrap();
        assert!(solution.converged);
        // all 10 A go to the empty hour: totals become (10, 10) kW
        assert_relative_eq!(solution.values[0], 10.0, epsilon = 0.02);
        assert_relative_eq!(solution.values[1], 0.0, epsilon = 0.02);
    }

    #[test]
    fn congested_quick_charge_shares_the_line() {
        let net = single_row(&["a", "b"], 16.0, 208.0);
        let sessions = vec![sview("a", 2, 32.0), sview("b", 2, 32.0)];
        let view = AlgoView::standalone(0, 5.0, start(), sessions, &net);
        let program = build_program(
            &view,
            2,
            &[ObjectiveTerm::QuickCharge { weight: 1.0 }],
            DEFAULT_SIDES,
        )
        .unwrap();
        let solution = solve(&program, &SolveOptions::default()).unwrap();
        assert!(solution.converged);
        let s0 = solution.values[0] + solution.values[2];
        let s1 = solution.values[1] + solution.values[3];
        assert_relative_eq!(s0, 16.0, epsilon = 0.05);
        assert_relative_eq!(s1, 16.0, epsilon = 0.05);
        let total: f64 = solution.values.iter().sum();
        assert_relative_eq!(total, 32.0, epsilon = 0.1);
    }

    #[test]
    fn empty_session_set_builds_a_trivial_program() {
        let net = unconstrained(&[("a", 208.0)]);
        let view = AlgoView::standalone(0, 5.0, start(), vec![], &net);
        let program = build_program(
            &view,
            3,
            &[ObjectiveTerm::QuickCharge { weight: 1.0 }],
            DEFAULT_SIDES,
        )
        .unwrap();
        assert_eq!(program.num_vars, 0);
        let solution = solve(&program, &SolveOptions::default()).unwrap();
        assert_eq!(solution.objective, 0.0);
    }

    #[test]
    fn demand_charge_flattens_delivery() {
        let net = unconstrained(&[("a", 1000.0)]);
        let mut session = sview("a", 2, 20.0);
        session.charger_max_rate = 16.0;
        let view = AlgoView::standalone(0, 60.0, start(), vec![session], &net);
        let terms = [
            ObjectiveTerm::TotalEnergy { weight: 1.0 },
            ObjectiveTerm::DemandCharge { rate_per_kw: 0.6 },
        ];
        let program = build_program(&view, 2, &terms, DEFAULT_SIDES).unwrap();
        let solution = solve(&program, &SolveOptions::default()).unwrap();
        assert!(solution.converged);
        assert_relative_eq!(solution.values[0], 10.0, epsilon = 0.05);
        assert_relative_eq!(solution.values[1], 10.0, epsilon = 0.05);
    }

    #[test]
    fn demand_charge_free_below_running_peak() {
        let net = unconstrained(&[("a", 1000.0)]);
        let mut session = sview("a", 2, 20.0);
        session.charger_max_rate = 16.0;
        let view = AlgoView::standalone(0, 60.0, start(), vec![session], &net)
            .with_peak_so_far(12.0);
        let terms = [
            ObjectiveTerm::TotalEnergy { weight: 1.0 },
            ObjectiveTerm::DemandCharge { rate_per_kw: 0.6 },
        ];
        let program = build_program(&view, 2, &terms, DEFAULT_SIDES).unwrap();
        let solution = solve(&program, &SolveOptions::default()).unwrap();
        assert!(solution.converged);
        let total = solution.values[0] + solution.values[1];
        assert_relative_eq!(total, 20.0, epsilon = 0.05);
        assert!(solution.values[0] <= 12.01 && solution.values[1] <= 12.01);
        assert_relative_eq!(solution.objective, 20.0, epsilon = 0.05);
    }

    #[test]
    fn finer_polygon_never_hurts_the_objective() {
        let net = three_phase_feeder(16.0);
        let sessions = vec![sview("a", 2, 64.0), sview("b", 2, 64.0), sview("c", 2, 64.0)];
        let view = AlgoView::standalone(0, 5.0, start(), sessions, &net);
        let terms = [ObjectiveTerm::QuickCharge { weight: 1.0 }];
        let coarse = solve(
            &build_program(&view, 2, &terms, 4).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let fine = solve(
            &build_program(&view, 2, &terms, 12).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(
            fine.objective >= coarse.objective - 1e-3,
            "fine {} coarse {}",
            fine.objective,
            coarse.objective
        );
    }

    #[test]
    fn objective_scaling_leaves_rates_unchanged() {
        let net = three_phase_feeder(16.0);
        let sessions = vec![sview("a", 2, 64.0), sview("b", 2, 30.0), sview("c", 2, 10.0)];
        let view = AlgoView::standalone(0, 5.0, start(), sessions, &net);
        let solve_with = |scale: f64| {
            let terms = [
                ObjectiveTerm::QuickCharge { weight: scale },
                ObjectiveTerm::EqualShare { epsilon: 1e-3 * scale },
            ];
            let program = build_program(&view, 2, &terms, 12).unwrap();
            solve(&program, &SolveOptions::default()).unwrap()
        };
        let base = solve_with(1.0);
        let scaled = solve_with(5.0);
        assert!(base.converged && scaled.converged);
        for (a, b) in base.values.iter().zip(&scaled.values) {
            assert_relative_eq!(a, b, epsilon = 2e-2);
        }
    }

    #[test]
    fn mpc_schedule_no_actives_is_empty() {
        let net = unconstrained(&[("a", 208.0)]);
        let view = AlgoView::standalone(0, 5.0, start(), vec![], &net);
        let schedule = MpcAlgorithm::quick_charge().schedule(&view).unwrap();
        assert!(schedule.rates.is_empty());
    }

    #[test]
    fn mpc_schedule_uncongested_runs_at_effective_max() {
        let net = unconstrained(&[("a", 208.0)]);
        let view = AlgoView::standalone(0, 5.0, start(), vec![sview("a", 3, 64.0)], &net);
        let mut algo = MpcAlgorithm::quick_charge();
        let schedule = algo.schedule(&view).unwrap();
        let column = &schedule.rates["a"];
        assert_eq!(column.len(), 3);
        assert_relative_eq!(column[0], 32.0, epsilon = 0.02);
        assert_relative_eq!(column[1], 32.0, epsilon = 0.02);
        assert_relative_eq!(column[2], 0.0, epsilon = 0.02);
        let diag = algo.take_diagnostics().unwrap();
        assert!(diag.converged);
    }

    #[test]
    fn mpc_avoids_on_peak_when_demand_fits_off_peak() {
        let net = unconstrained(&[("a", 1000.0)]);
        let tariff = hourly_tariff(&[("00:00", "02:00", 0.1), ("02:00", "24:00", 0.3)]);
        let mut session = sview("a", 4, 20.0);
        session.charger_max_rate = 16.0;
        let view = AlgoView::standalone(0, 60.0, start(), vec![session], &net)
            .with_tariff(&tariff);
        let mut algo = MpcAlgorithm::cost_minimizing();
        let schedule = algo.schedule(&view).unwrap();
        let column = &schedule.rates["a"];
        assert_eq!(column.len(), 4);
        assert!(column[2] <= 0.02 && column[3] <= 0.02, "{column:?}");
        let total: f64 = column.iter().sum();
        assert_relative_eq!(total, 20.0, epsilon = 0.05);

        // no cheaper full-delivery schedule exists on a 1 A grid
        let price = [0.1, 0.1, 0.3, 0.3];
        let cost =
            |x: &[f64]| -> f64 { x.iter().zip(price).map(|(r, p)| r * p).sum() };
        let mut best = f64::INFINITY;
        for x0 in 0..=16u32 {
            for x1 in 0..=16u32 {
                for x2 in 0..=16u32 {
                    for x3 in 0..=16u32 {
                        if x0 + x1 + x2 + x3 == 20 {
                            let grid = [x0 as f64, x1 as f64, x2 as f64, x3 as f64];
                            best = best.min(cost(&grid));
                        }
                    }
                }
            }
        }
        assert!(cost(column) <= best + 0.01, "{} vs {}", cost(column), best);
    }

    #[test]
    fn mpc_columns_pass_true_feasibility() {
        let net = three_phase_feeder(16.0);
        let sessions = vec![sview("a", 3, 90.0), sview("b", 2, 64.0), sview("c", 4, 10.0)];
        let view = AlgoView::standalone(0, 5.0, start(), sessions, &net);
        let mut algo = MpcAlgorithm::quick_charge();
        let schedule = algo.schedule(&view).unwrap();
        let horizon = schedule.rates.values().next().unwrap().len();
        for t in 0..horizon {
            let column: std::collections::BTreeMap<String, f64> = schedule
                .rates
                .iter()
                .map(|(s, v)| (s.clone(), v[t]))
                .collect();
            assert!(net.is_feasible(&column, 1e-6).unwrap(), "column {t}: {column:?}");
        }
    }

    fn offline_session(
        id: &str,
        station: &str,
        arrival: u32,
        departure: u32,
        demand: f64,
    ) -> SessionEv {
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

    #[test]
    fn offline_zero_sessions_is_zero() {
        let net = unconstrained(&[("a", 208.0)]);
        let bench = offline_optimal(&[], &net, OFFLINE_SIDES, &SolveOptions::default()).unwrap();
        assert_eq!(bench.delivered_amp_periods, 0.0);
    }

    #[test]
    fn offline_single_ev_matches_uncontrolled_delivery() {
        let net = unconstrained(&[("a", 208.0)]);
        let sessions = vec![offline_session("s1", "a", 0, 10, 70.0)];
        let bench =
            offline_optimal(&sessions, &net, OFFLINE_SIDES, &SolveOptions::default()).unwrap();
        assert!(bench.converged);
        // an unconstrained EVSE delivers exactly the capped request
        assert_relative_eq!(bench.delivered_amp_periods, 70.0, epsilon = 0.01);
        assert_relative_eq!(bench.per_session["s1"], 70.0, epsilon = 0.01);
    }

    #[test]
    fn offline_respects_shared_line() {
        let net = single_row(&["a", "b"], 16.0, 208.0);
        let sessions = vec![
            offline_session("s1", "a", 0, 4, 200.0),
            offline_session("s2", "b", 0, 4, 200.0),
        ];
        let bench =
            offline_optimal(&sessions, &net, OFFLINE_SIDES, &SolveOptions::default()).unwrap();
        // 4 periods at a shared 16 A line
        assert_relative_eq!(bench.delivered_amp_periods, 64.0, epsilon = 0.2);
    }
}
