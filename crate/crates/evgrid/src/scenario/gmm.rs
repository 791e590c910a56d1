//! Synthetic workload generation by sampling a Gaussian mixture over
//! (arrival hour, sojourn hours, energy kWh).

use chrono::{Datelike, Duration};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::SimConfig;
use crate::error::{Error, Result};
use crate::events::{Event, EventQueue};
use crate::hardware::{kwh_to_amp_periods, SessionEv};

use super::config::BatteryConfig;

const MAX_REDRAWS: usize = 100;

/// One mixture component over (arrival hour, sojourn hours, energy kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    /// Covariance of the three coordinates; must be positive semidefinite.
    pub cov: [[f64; 3]; 3],
}

/// Daily arrival-count model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalsPerDay {
    Fixed(u32),
    Poisson(f64),
}

fn weekdays_only() -> [bool; 7] {
    [true, true, true, true, true, false, false]
}

/// A generative workload model: mixture components, an arrivals-per-day
/// distribution, a weekday mask (Monday first), and the number of days to
/// generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub components: Vec<MixtureComponent>,
    pub arrivals_per_day: ArrivalsPerDay,
    #[serde(default = "weekdays_only")]
    pub weekday_mask: [bool; 7],
    pub days: u32,
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Scenario("mixture needs at least one component".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Scenario(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        for (i, component) in self.components.iter().enumerate() {
            if component.weight < 0.0 {
                return Err(Error::Scenario(format!("component {i} has negative weight")));
            }
            cholesky3(&component.cov).map_err(|e| {
                Error::Scenario(format!("component {i} covariance: {e}"))
            })?;
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor of a 3x3 positive-semidefinite matrix,
/// tolerating singular (including all-zero) covariances.
fn cholesky3(cov: &[[f64; 3]; 3]) -> std::result::Result<[[f64; 3]; 3], String> {
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut sum = cov[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum < -1e-9 {
                    return Err("matrix is not positive semidefinite".into());
                }
                l[i][j] = sum.max(0.0).sqrt();
            } else {
                l[i][j] = if l[j][j] > 1e-12 { sum / l[j][j] } else { 0.0 };
            }
        }
    }
    Ok(l)
}

fn sample_component(
    component: &MixtureComponent,
    factor: &[[f64; 3]; 3],
    rng: &mut ChaCha8Rng,
) -> [f64; 3] {
    let z: [f64; 3] = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    let mut out = component.mean;
    for i in 0..3 {
        for (k, zk) in z.iter().enumerate() {
            out[i] += factor[i][k] * zk;
        }
    }
    out
}

/// Samples plugin/unplug pairs for `spec.days` days starting at the
/// simulation start date. Draws with non-positive sojourn or energy are
/// redrawn (bounded); arrival hours clamp into `[0, 24)`. Fully
/// reproducible from the seed.
pub fn sample_events(
    spec: &MixtureConfig,
    config: &SimConfig,
    battery: &BatteryConfig,
    seed: u64,
) -> Result<EventQueue> {
    spec.validate()?;
    let factors: Vec<[[f64; 3]; 3]> = spec
        .components
        .iter()
        .map(|c| cholesky3(&c.cov).expect("validated above"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queue = EventQueue::new();
    let periods_per_hour = 60.0 / config.period_minutes;
    for day in 0..spec.days {
        let date = config.start.date() + Duration::days(day as i64);
        let weekday_index = date.weekday().num_days_from_monday() as usize;
        if !spec.weekday_mask[weekday_index] {
            continue;
        }
        let arrivals = match spec.arrivals_per_day {
            ArrivalsPerDay::Fixed(n) => n,
            ArrivalsPerDay::Poisson(lambda) => {
                let poisson = Poisson::new(lambda)
                    .map_err(|_| Error::Scenario("Poisson rate must be positive".into()))?;
                poisson.sample(&mut rng) as u32
            }
        };
        for k in 0..arrivals {
            let mut draw = None;
            for _ in 0..MAX_REDRAWS {
                let pick: f64 = rng.gen_range(0.0..1.0);
                let mut acc = 0.0;
                let mut chosen = spec.components.len() - 1;
                for (i, component) in spec.components.iter().enumerate() {
                    acc += component.weight;
                    if pick < acc {
                        chosen = i;
                        break;
                    }
                }
                let sample = sample_component(&spec.components[chosen], &factors[chosen], &mut rng);
                if sample[1] > 0.0 && sample[2] > 0.0 {
                    draw = Some(sample);
                    break;
                }
            }
            let [arrival_hours, sojourn_hours, energy_kwh] =
                draw.ok_or(Error::RejectionBudget(MAX_REDRAWS))?;
            let arrival_hours = arrival_hours.clamp(0.0, 24.0 - 1e-9);
            let day_offset_hours = day as f64 * 24.0;
            let arrival =
                ((day_offset_hours + arrival_hours) * periods_per_hour).floor() as u32;
            let departure = ((day_offset_hours + arrival_hours + sojourn_hours)
                * periods_per_hour)
                .ceil() as u32;
            if departure <= arrival {
                warn!("sampled session collapsed to zero periods, dropping");
                continue;
            }
            let requested =
                kwh_to_amp_periods(energy_kwh, config.voltage, config.period_minutes)?;
            let session_id = format!("gmm-d{day:03}-{k:03}");
            let session = SessionEv {
                session_id: session_id.clone(),
                station_id: None,
                arrival,
                departure_actual: departure,
                departure_estimated: departure,
                requested_amp_periods: requested,
                delivered_amp_periods: 0.0,
                battery: battery.build(requested, config)?,
            };
            queue.enqueue(Event::plugin(arrival, session));
            queue.enqueue(Event::unplug(departure, session_id));
        }
    }
    Ok(queue)
}
