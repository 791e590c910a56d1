//! Grid-facing exports: per-period load profiles suitable as inputs to
//! external distribution-system simulators.

use std::collections::BTreeMap;

use crate::engine::SimRecord;

/// Renders the run's aggregate power draw as CSV, optionally split per
/// phase angle. Phase columns are grouped by each station's connection
/// angle (sorted ascending) and sum to the total column.
pub fn export_load_profile(record: &SimRecord, phases: bool) -> String {
    let mut angle_stations: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
    if phases {
        for station in &record.stations {
            // key angles at milli-degree resolution for stable grouping
            let key = (station.phase_deg * 1000.0).round() as i64;
            angle_stations
                .entry(key)
                .or_default()
                .push(&station.station_id);
        }
    }
    let mut header = vec!["period".to_string(), "datetime".to_string(), "total_kw".to_string()];
    for key in angle_stations.keys() {
        header.push(format!("kw_phase_{}", *key as f64 / 1000.0));
    }
    let mut out = header.join(",");
    out.push('\n');

    let voltage_of: BTreeMap<&str, f64> = record
        .stations
        .iter()
        .map(|s| (s.station_id.as_str(), s.voltage))
        .collect();
    for t in 0..record.periods as usize {
        let mut row = vec![
            t.to_string(),
            record.datetime_at(t as u32).to_string(),
            record.aggregate_kw[t].to_string(),
        ];
        for stations in angle_stations.values() {
            let kw: f64 = stations
                .iter()
                .map(|id| voltage_of[*id] * record.actual[*id][t] / 1000.0)
                .sum();
            row.push(kw.to_string());
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
