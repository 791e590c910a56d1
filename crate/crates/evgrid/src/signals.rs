//! Tariff schedules, external load and generation series, and cost
//! accounting.

use chrono::{Datelike, NaiveDateTime, Timelike};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::engine::SimRecord;
use crate::error::{Error, Result};

/// A price band within a day: `[start_minute, end_minute)` of the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBand {
    /// Start of the band as "HH:MM".
    pub start: String,
    /// End of the band as "HH:MM"; "24:00" closes the day.
    pub end: String,
    pub price_per_kwh: f64,
}

impl PriceBand {
    fn minutes(&self) -> Result<(u32, u32)> {
        Ok((parse_minute(&self.start)?, parse_minute(&self.end)?))
    }
}

fn parse_minute(text: &str) -> Result<u32> {
    let bad = || Error::Scenario(format!("bad time of day `{text}`, expected HH:MM"));
    let (h, m) = text.split_once(':').ok_or_else(bad)?;
    let hours: u32 = h.parse().map_err(|_| bad())?;
    let minutes: u32 = m.parse().map_err(|_| bad())?;
    if hours > 24 || minutes > 59 || (hours == 24 && minutes != 0) {
        return Err(bad());
    }
    Ok(hours * 60 + minutes)
}

fn parse_month_day(text: &str) -> Result<(u32, u32)> {
    let bad = || Error::Scenario(format!("bad month-day `{text}`, expected MM-DD"));
    let (m, d) = text.split_once('-').ok_or_else(bad)?;
    let month: u32 = m.parse().map_err(|_| bad())?;
    let day: u32 = d.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return Err(bad());
    }
    Ok((month, day))
}

/// A season: a month-day range (inclusive, may wrap the year end), flags for
/// the day classes it covers, and the intra-day price bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Season {
    /// First month-day of the season as "MM-DD".
    pub start: String,
    /// Last month-day of the season, inclusive.
    pub end: String,
    #[serde(default = "default_true")]
    pub weekdays: bool,
    #[serde(default = "default_true")]
    pub weekends: bool,
    pub bands: Vec<PriceBand>,
}

fn default_true() -> bool {
    true
}

impl Season {
    fn covers_date(&self, month: u32, day: u32) -> Result<bool> {
        let (sm, sd) = parse_month_day(&self.start)?;
        let (em, ed) = parse_month_day(&self.end)?;
        let key = (month, day);
        let start = (sm, sd);
        let end = (em, ed);
        Ok(if start <= end {
            key >= start && key <= end
        } else {
            // wraps the year end, e.g. 10-01 .. 05-31
            key >= start || key <= end
        })
    }

    fn covers_class(&self, weekend: bool) -> bool {
        if weekend {
            self.weekends
        } else {
            self.weekdays
        }
    }
}

/// Seasonal time-of-use tariff with an optional monthly demand charge.
///
/// Validation guarantees that every instant of the year maps to exactly one
/// price: each season's bands must partition the day, and for each calendar
/// date and day class exactly one season must apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub name: String,
    #[serde(default)]
    pub demand_charge_per_kw: f64,
    pub seasons: Vec<Season>,
}

impl Tariff {
    /// Flat price at every instant, no demand charge.
    pub fn flat(price_per_kwh: f64) -> Tariff {
        Tariff {
            name: "flat".into(),
            demand_charge_per_kw: 0.0,
            seasons: vec![Season {
                start: "01-01".into(),
                end: "12-31".into(),
                weekdays: true,
                weekends: true,
                bands: vec![PriceBand {
                    start: "00:00".into(),
                    end: "24:00".into(),
                    price_per_kwh,
                }],
            }],
        }
    }

    /// A two-band summer/winter TOU schedule with a demand charge, shaped
    /// like typical commercial EV rates (on-peak noon to 18:00 on weekdays).
    /// The prices are placeholders, not a published rate sheet.
    pub fn tou_demand() -> Tariff {
        let day = |on_peak: f64, off_peak: f64| {
            vec![
                PriceBand {
                    start: "00:00".into(),
                    end: "12:00".into(),
                    price_per_kwh: off_peak,
                },
                PriceBand {
                    start: "12:00".into(),
                    end: "18:00".into(),
                    price_per_kwh: on_peak,
                },
                PriceBand {
                    start: "18:00".into(),
                    end: "24:00".into(),
                    price_per_kwh: off_peak,
                },
            ]
        };
        let flat_day = |price: f64| {
            vec![PriceBand {
                start: "00:00".into(),
                end: "24:00".into(),
                price_per_kwh: price,
            }]
        };
        Tariff {
            name: "tou_demand".into(),
            demand_charge_per_kw: 12.0,
            seasons: vec![
                Season {
                    start: "06-01".into(),
                    end: "09-30".into(),
                    weekdays: true,
                    weekends: false,
                    bands: day(0.30, 0.10),
                },
                Season {
                    start: "06-01".into(),
                    end: "09-30".into(),
                    weekdays: false,
                    weekends: true,
                    bands: flat_day(0.10),
                },
                Season {
                    start: "10-01".into(),
                    end: "05-31".into(),
                    weekdays: true,
                    weekends: false,
                    bands: day(0.20, 0.08),
                },
                Season {
                    start: "10-01".into(),
                    end: "05-31".into(),
                    weekdays: false,
                    weekends: true,
                    bands: flat_day(0.08),
                },
            ],
        }
    }

    /// Rejects overlapping or missing coverage, checking every month-day and
    /// day class against the season list and every season's bands against
    /// the full day.
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Error::TariffCoverage {
            name: self.name.clone(),
            detail,
        };
        if self.seasons.is_empty() {
            return Err(fail("no seasons defined".into()));
        }
        for (i, season) in self.seasons.iter().enumerate() {
            let mut bands: Vec<(u32, u32, f64)> = Vec::new();
            for band in &season.bands {
                let (s, e) = band.minutes()?;
                if band.price_per_kwh < 0.0 {
                    return Err(fail(format!("negative price in season {i}")));
                }
                if s >= e {
                    return Err(fail(format!("empty band {}..{} in season {i}", band.start, band.end)));
                }
                bands.push((s, e, band.price_per_kwh));
            }
            bands.sort_by_key(|b| b.0);
            let mut cursor = 0;
            for (s, e, _) in &bands {
                if *s != cursor {
                    return Err(fail(format!(
                        "season {i} bands leave a gap or overlap at minute {cursor}"
                    )));
                }
                cursor = *e;
            }
            if cursor != 24 * 60 {
                return Err(fail(format!("season {i} bands stop at minute {cursor}")));
            }
        }
        // use a leap year so 02-29 is exercised
        let days_in_month = [31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
        for (month, days) in days_in_month.iter().enumerate() {
            for day in 1..=*days {
                for weekend in [false, true] {
                    let hits = self
                        .seasons
                        .iter()
                        .filter_map(|s| {
                            s.covers_date(month as u32 + 1, day)
                                .map(|d| d && s.covers_class(weekend))
                                .ok()
                        })
                        .filter(|hit| *hit)
                        .count();
                    if hits != 1 {
                        return Err(fail(format!(
                            "{:02}-{:02} ({}) is covered by {hits} seasons",
                            month + 1,
                            day,
                            if weekend { "weekend" } else { "weekday" },
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Price in $/kWh at an instant.
    pub fn price_at(&self, instant: NaiveDateTime) -> Result<f64> {
        let weekend = matches!(
            instant.weekday(),
            chrono::Weekday::Sat | chrono::Weekday::Sun
        );
        let minute = instant.hour() * 60 + instant.minute();
        for season in &self.seasons {
            if !season.covers_date(instant.month(), instant.day())? || !season.covers_class(weekend)
            {
                continue;
            }
            for band in &season.bands {
                let (s, e) = band.minutes()?;
                if minute >= s && minute < e {
                    return Ok(band.price_per_kwh);
                }
            }
        }
        Err(Error::UncoveredInstant {
            name: self.name.clone(),
            instant: instant.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Tariff> {
        let tariff: Tariff = serde_json::from_str(text)?;
        tariff.validate()?;
        Ok(tariff)
    }
}

/// A uniformly spaced power series in kW (external load, solar generation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSignal {
    pub start: NaiveDateTime,
    pub period_minutes: f64,
    pub values_kw: Vec<f64>,
}

impl TimeSeriesSignal {
    /// Value at a (possibly negative) period index relative to the signal's
    /// own start. Out-of-range indexes read as zero with a warning.
    pub fn value_at(&self, index: i64) -> f64 {
        if index < 0 || index as usize >= self.values_kw.len() {
            warn!(
                "signal index {index} outside 0..{}, reading 0 kW",
                self.values_kw.len()
            );
            return 0.0;
        }
        self.values_kw[index as usize]
    }

    /// Parses a `timestamp,kw` CSV with a single header line.
    pub fn from_csv(text: &str, period_minutes: f64) -> Result<TimeSeriesSignal> {
        let mut start = None;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Scenario(format!("signal csv line {}: {what}", lineno + 1));
            let mut parts = line.splitn(2, ',');
            let stamp = parts.next().ok_or_else(|| bad("missing timestamp"))?.trim();
            let kw: f64 = parts
                .next()
                .ok_or_else(|| bad("missing kW value"))?
                .trim()
                .parse()
                .map_err(|_| bad("bad kW value"))?;
            let stamp = NaiveDateTime::parse_from_str(stamp, "%Y-%m-%dT%H:%M:%S")
                .or_else(|_| NaiveDateTime::parse_from_str(stamp, "%Y-%m-%d %H:%M:%S"))
                .map_err(|_| bad("bad timestamp"))?;
            if start.is_none() {
                start = Some(stamp);
            }
            values.push(kw);
        }
        Ok(TimeSeriesSignal {
            start: start.ok_or_else(|| Error::Scenario("signal csv has no rows".into()))?,
            period_minutes,
            values_kw: values,
        })
    }

    /// Offset (in periods) of a simulation start relative to this signal,
    /// verifying the period lengths match.
    pub fn align(&self, sim_start: NaiveDateTime, sim_period_minutes: f64) -> Result<i64> {
        if (self.period_minutes - sim_period_minutes).abs() > 1e-9 {
            return Err(Error::PeriodMismatch {
                signal_minutes: self.period_minutes,
                sim_minutes: sim_period_minutes,
            });
        }
        let delta_seconds = (sim_start - self.start).num_seconds() as f64;
        Ok((delta_seconds / (self.period_minutes * 60.0)).round() as i64)
    }
}

/// Cost breakdown for a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BillingBreakdown {
    pub energy_cost: f64,
    pub demand_cost: f64,
    pub total_cost: f64,
    pub energy_kwh: f64,
    /// Absent when no energy was delivered.
    pub cost_per_kwh: Option<f64>,
}

/// Prices a run against a tariff: energy cost sums `price(t) * kWh_t` per
/// period; the demand charge applies to the peak kW of each calendar month
/// touched by the record.
pub fn billing_cost(record: &SimRecord, tariff: &Tariff) -> Result<BillingBreakdown> {
    let hours_per_period = record.config.period_minutes / 60.0;
    let mut energy_cost = 0.0;
    let mut energy_kwh = 0.0;
    let mut month_peaks: Vec<((i32, u32), f64)> = Vec::new();
    for (t, kw) in record.aggregate_kw.iter().enumerate() {
        let instant = record.datetime_at(t as u32);
        let kwh = kw * hours_per_period;
        energy_cost += tariff.price_at(instant)? * kwh;
        energy_kwh += kwh;
        let month = (instant.year(), instant.month());
        match month_peaks.last_mut() {
            Some((m, peak)) if *m == month => *peak = peak.max(*kw),
            _ => month_peaks.push((month, *kw)),
        }
    }
    let demand_cost: f64 = month_peaks
        .iter()
        .map(|(_, peak)| tariff.demand_charge_per_kw * peak)
        .sum();
    let total_cost = energy_cost + demand_cost;
    Ok(BillingBreakdown {
        energy_cost,
        demand_cost,
        total_cost,
        energy_kwh,
        cost_per_kwh: (energy_kwh > 0.0).then_some(total_cost / energy_kwh),
    })
}
