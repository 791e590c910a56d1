//! Charging hardware models: EVSE pilot quantization, battery dynamics, and
//! per-session bookkeeping.
//!
//! Rates are in amps and energy in amp-periods: one amp sustained for one
//! simulation period delivers one amp-period. [`kwh_to_amp_periods`] converts
//! between that unit and kWh given a nominal voltage and period length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// J1772 forbids pilot signals strictly between 0 and 6 A.
pub const DEADBAND_MIN_AMPS: f64 = 6.0;

/// Remaining demand below this is treated as met.
pub const DEMAND_EPSILON: f64 = 1e-9;

/// Pilot-signal granularity offered by an EVSE.
///
/// Continuous units accept any rate up to their maximum. Deadband units are
/// continuous but exclude the J1772-forbidden band `(0, 6)` A. Finite-set
/// units only accept the listed set points, which models most commercial
/// level-2 hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PilotModel {
    Continuous,
    Deadband,
    FiniteSet { values_a: Vec<f64> },
}

impl PilotModel {
    pub fn validate(&self) -> Result<()> {
        if let PilotModel::FiniteSet { values_a } = self {
            if values_a.iter().any(|v| *v < 0.0) {
                return Err(Error::Network(
                    "finite-set pilot values must be non-negative".into(),
                ));
            }
            if values_a.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Network(
                    "finite-set pilot values must be sorted ascending".into(),
                ));
            }
        }
        Ok(())
    }

    /// Snaps a requested rate to the nearest admissible pilot at or below it.
    ///
    /// Continuous: clamp to `max_rate`. Deadband: anything below 6 A becomes
    /// 0, else clamp. Finite-set: the largest listed value that does not
    /// exceed both the request and `max_rate`, or 0 if none qualifies.
    pub fn clamp(&self, requested: f64, max_rate: f64) -> f64 {
        debug_assert!(requested >= 0.0, "pilot requests must be non-negative");
        match self {
            PilotModel::Continuous => requested.min(max_rate),
            PilotModel::Deadband => {
                let upper = requested.min(max_rate);
                if upper < DEADBAND_MIN_AMPS {
                    0.0
                } else {
                    upper
                }
            }
            PilotModel::FiniteSet { values_a } => values_a
                .iter()
                .copied()
                .filter(|v| *v <= requested && *v <= max_rate)
                .fold(0.0, f64::max),
        }
    }

    /// Smallest admissible pilot strictly above `current`, if one exists.
    /// This is the round-robin increment: 1 A for continuous units, 0 to 6 A
    /// then 1 A steps for deadband units, the next listed value otherwise.
    pub fn step_up(&self, current: f64, max_rate: f64) -> Option<f64> {
        match self {
            PilotModel::Continuous => {
                let next = (current + 1.0).min(max_rate);
                (next > current).then_some(next)
            }
            PilotModel::Deadband => {
                let next = if current < DEADBAND_MIN_AMPS {
                    DEADBAND_MIN_AMPS.min(max_rate)
                } else {
                    (current + 1.0).min(max_rate)
                };
                (next > current && next >= DEADBAND_MIN_AMPS).then_some(next)
            }
            PilotModel::FiniteSet { values_a } => values_a
                .iter()
                .copied()
                .find(|v| *v > current && *v <= max_rate),
        }
    }

    /// Largest admissible pilot strictly below `current` (0 when none).
    /// Used by the post-quantization repair loop.
    pub fn step_down(&self, current: f64) -> f64 {
        match self {
            PilotModel::Continuous => (current - 1.0).max(0.0),
            PilotModel::Deadband => {
                let next = current - 1.0;
                if next < DEADBAND_MIN_AMPS {
                    0.0
                } else {
                    next
                }
            }
            PilotModel::FiniteSet { values_a } => values_a
                .iter()
                .copied()
                .filter(|v| *v < current)
                .fold(0.0, f64::max),
        }
    }
}

/// Battery model kind. `TwoStage` approximates the piecewise-linear
/// lithium-ion charge curve: constant-current bulk charging up to the
/// threshold state of charge, then a linearly declining absorption tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatteryKind {
    Ideal,
    TwoStage { threshold: f64 },
}

/// A vehicle battery together with its on-board charger limit.
///
/// `capacity` and `charge` are in amp-periods; `max_rate` is the on-board
/// charger's current limit in amps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub kind: BatteryKind,
    pub capacity: f64,
    charge: f64,
    initial_charge: f64,
    pub max_rate: f64,
}

impl Battery {
    pub fn ideal(capacity: f64, initial_charge: f64, max_rate: f64) -> Self {
        Battery::new(BatteryKind::Ideal, capacity, initial_charge, max_rate)
    }

    pub fn two_stage(capacity: f64, initial_charge: f64, max_rate: f64, threshold: f64) -> Self {
        Battery::new(
            BatteryKind::TwoStage { threshold },
            capacity,
            initial_charge,
            max_rate,
        )
    }

    pub fn new(kind: BatteryKind, capacity: f64, initial_charge: f64, max_rate: f64) -> Self {
        assert!(capacity > 0.0, "battery capacity must be positive");
        assert!(max_rate > 0.0, "battery max rate must be positive");
        let charge = initial_charge.clamp(0.0, capacity);
        if let BatteryKind::TwoStage { threshold } = kind {
            assert!(
                threshold > 0.0 && threshold < 1.0,
                "two-stage threshold must lie in (0, 1)"
            );
        }
        Battery {
            kind,
            capacity,
            charge,
            initial_charge: charge,
            max_rate,
        }
    }

    /// Capacity-based default: the battery starts with exactly enough
    /// headroom to absorb `requested` amp-periods (or its full capacity if
    /// the request exceeds it).
    pub fn with_headroom_for(kind: BatteryKind, capacity: f64, requested: f64, max_rate: f64) -> Self {
        let initial = capacity - requested.min(capacity);
        Battery::new(kind, capacity, initial, max_rate)
    }

    pub fn charge(&self) -> f64 {
        self.charge
    }

    pub fn initial_charge(&self) -> f64 {
        self.initial_charge
    }

    /// State of charge in `[0, 1]`.
    pub fn soc(&self) -> f64 {
        self.charge / self.capacity
    }

    /// Unfilled capacity in amp-periods.
    pub fn headroom(&self) -> f64 {
        (self.capacity - self.charge).max(0.0)
    }

    /// Advances the battery by one period under the given pilot and returns
    /// the actual charging current drawn.
    ///
    /// Ideal batteries draw `min(pilot, max_rate, headroom)`. Two-stage
    /// batteries do the same during bulk charging (state of charge at or
    /// below the threshold); past it the draw declines linearly with state
    /// of charge: `(1 - soc) * max_rate / (1 - threshold)`, still capped by
    /// the pilot and the remaining headroom.
    pub fn step(&mut self, pilot: f64) -> Result<f64> {
        if pilot < 0.0 {
            return Err(Error::NegativePilot(pilot));
        }
        let headroom = self.headroom();
        let actual = match self.kind {
            BatteryKind::Ideal => pilot.min(self.max_rate).min(headroom),
            BatteryKind::TwoStage { threshold } => {
                if self.soc() <= threshold {
                    pilot.min(self.max_rate).min(headroom)
                } else {
                    let tail = (1.0 - self.soc()) * self.max_rate / (1.0 - threshold);
                    tail.min(pilot).min(headroom)
                }
            }
        };
        self.charge = (self.charge + actual).min(self.capacity);
        Ok(actual)
    }
}

/// One charging session: an EV plugged in (or waiting) between an arrival
/// and a departure, with an energy request and an attached battery.
///
/// `station_id` is `None` until a stochastic network assigns the session to
/// an EVSE; deterministic scenarios must set it up front. The estimated
/// departure is what scheduling algorithms see; the actual departure drives
/// the unplug event and stays hidden from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEv {
    pub session_id: String,
    pub station_id: Option<String>,
    pub arrival: u32,
    pub departure_actual: u32,
    pub departure_estimated: u32,
    pub requested_amp_periods: f64,
    pub delivered_amp_periods: f64,
    pub battery: Battery,
}

impl SessionEv {
    /// Energy still owed to this session in amp-periods.
    ///
    /// The request is capped by what the battery could ever absorb
    /// (`capacity - initial charge`), so an over-ask against a small battery
    /// does not count as unmet demand.
    pub fn remaining_demand(&self) -> f64 {
        let deliverable = self
            .requested_amp_periods
            .min(self.battery.capacity - self.battery.initial_charge());
        (deliverable - self.delivered_amp_periods).max(0.0)
    }

    pub fn is_done(&self) -> bool {
        self.remaining_demand() <= DEMAND_EPSILON
    }
}

/// Converts energy in kWh to amp-periods at a nominal voltage.
pub fn kwh_to_amp_periods(energy_kwh: f64, voltage: f64, period_minutes: f64) -> Result<f64> {
    for (name, value) in [
        ("energy_kwh", energy_kwh),
        ("voltage", voltage),
        ("period_minutes", period_minutes),
    ] {
        if value <= 0.0 {
            return Err(Error::NonpositiveArgument { name, value });
        }
    }
    Ok(energy_kwh * 1000.0 * 60.0 / (voltage * period_minutes))
}

/// Inverse of [`kwh_to_amp_periods`].
pub fn amp_periods_to_kwh(amp_periods: f64, voltage: f64, period_minutes: f64) -> f64 {
    amp_periods * voltage * period_minutes / (1000.0 * 60.0)
}
