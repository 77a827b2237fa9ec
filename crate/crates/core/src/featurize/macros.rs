use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// A monitoring station outside the study area.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroStation {
    pub id: String,
    /// Distance from the study-area centroid.
    pub distance_km: f64,
    /// Compass bearing from the centroid, degrees clockwise from north.
    pub bearing_deg: f64,
}

/// Largest per-station shift, hours.
pub const MAX_STATION_SHIFT: u32 = 12;

/// Transport delay of a station: `clamp(round(d / v̄), 1, 12)` hours.
pub fn station_shift(distance_km: f64, mean_wind_kmh: f64) -> u32 {
    let raw = distance_km / mean_wind_kmh;
    if !raw.is_finite() {
        return MAX_STATION_SHIFT;
    }
    raw.round().clamp(1.0, f64::from(MAX_STATION_SHIFT)) as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroConfig {
    pub stations: Vec<MacroStation>,
    /// Shifts applied to every station.
    pub global_shifts: Vec<u32>,
    /// Distance-derived shift per station, aligned with `stations`.
    pub station_shifts: Vec<u32>,
}

impl MacroConfig {
    pub fn new(
        stations: Vec<MacroStation>,
        global_shifts: Vec<u32>,
        mean_wind_kmh: f64,
    ) -> Result<Self> {
        if global_shifts.contains(&0) {
            return Err(Error::Config("macro shifts must be >= 1 hour".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &stations {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate macro station `{}`", s.id)));
            }
        }
        let station_shifts = stations
            .iter()
            .map(|s| station_shift(s.distance_km, mean_wind_kmh))
            .collect();
        Ok(MacroConfig {
            stations,
            global_shifts,
            station_shifts,
        })
    }

    /// Sorted union of the global shifts and the station's own shift.
    pub fn shifts_for(&self, station: usize) -> Vec<u32> {
        let mut set: BTreeSet<u32> = self.global_shifts.iter().copied().collect();
        set.insert(self.station_shifts[station]);
        set.into_iter().collect()
    }

    pub fn max_shift(&self) -> u32 {
        (0..self.stations.len())
            .flat_map(|i| self.shifts_for(i))
            .max()
            .unwrap_or(0)
    }

    /// `(station index, shift)` per column, in column order.
    pub fn columns(&self) -> Vec<(usize, u32)> {
        (0..self.stations.len())
            .flat_map(|i| self.shifts_for(i).into_iter().map(move |s| (i, s)))
            .collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns()
            .into_iter()
            .map(|(i, s)| macro_column_name(&self.stations[i].id, s))
            .collect()
    }
}

pub fn macro_column_name(station: &str, shift: u32) -> String {
    format!("macro_{station}_{shift}")
}

/// Station id encoded in a macro column name.
pub fn macro_column_station(name: &str) -> Option<&str> {
    let rest = name.strip_prefix("macro_")?;
    let (id, shift) = rest.rsplit_once('_')?;
    shift.parse::<u32>().ok()?;
    Some(id)
}

/// Gap-filled hourly readings of the external stations. Hour `h` of the
/// series is study hour `first_hour + h` (so lead-in hours are negative).
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSeries {
    pub first_hour: i64,
    /// Keyed by station id.
    values: BTreeMap<String, Vec<Option<f64>>>,
}

/// Longest gap bridged by forward filling, hours.
pub const MAX_FORWARD_FILL: usize = 3;

impl MacroSeries {
    /// Build from `(station, study hour, value)` readings; repeated readings
    /// in one hour are averaged, then gaps of up to three hours are forward
    /// filled.
    pub fn from_readings<'a>(
        readings: impl IntoIterator<Item = (&'a str, i64, f64)>,
        first_hour: i64,
        last_hour: i64,
    ) -> Self {
        let len = (last_hour - first_hour + 1).max(0) as usize;
        let mut sums: BTreeMap<String, Vec<(f64, u32)>> = BTreeMap::new();
        for (id, h, v) in readings {
            if h < first_hour || h > last_hour || !v.is_finite() {
                continue;
            }
            let slot = sums
                .entry(id.to_string())
                .or_insert_with(|| vec![(0.0, 0); len]);
            let e = &mut slot[(h - first_hour) as usize];
            e.0 += v;
            e.1 += 1;
        }
        let values = sums
            .into_iter()
            .map(|(id, s)| {
                let raw: Vec<Option<f64>> = s
                    .into_iter()
                    .map(|(sum, n)| (n > 0).then(|| sum / f64::from(n)))
                    .collect();
                (id, forward_fill(raw, MAX_FORWARD_FILL))
            })
            .collect();
        MacroSeries { first_hour, values }
    }

    pub fn stations(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Gap-filled value of a station at a (possibly negative) study hour.
    pub fn value(&self, station: &str, hour: i64) -> Option<f64> {
        let s = self.values.get(station)?;
        let i = hour - self.first_hour;
        if i < 0 {
            return None;
        }
        s.get(i as usize).copied().flatten()
    }
}

fn forward_fill(mut v: Vec<Option<f64>>, max_gap: usize) -> Vec<Option<f64>> {
    let mut last: Option<f64> = None;
    let mut gap = 0;
    for slot in v.iter_mut() {
        match slot {
            Some(x) => {
                last = Some(*x);
                gap = 0;
            }
            None => {
                gap += 1;
                if gap <= max_gap {
                    *slot = last;
                }
            }
        }
    }
    v
}

/// Macro feature values at hour `t`, one per column of
/// [`MacroConfig::column_names`]: station `i` shifted back by `θ` hours.
/// Every cell shares these values. `None` when a required reading is
/// unavailable after gap filling.
pub fn macro_feature_rows(series: &MacroSeries, config: &MacroConfig, t: i64) -> Option<Vec<f64>> {
    config
        .columns()
        .into_iter()
        .map(|(i, shift)| series.value(&config.stations[i].id, t - i64::from(shift)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stations(n: usize, d: f64) -> Vec<MacroStation> {
        (0..n)
            .map(|i| MacroStation {
                id: format!("s{i}"),
                distance_km: d,
                bearing_deg: 30.0 * i as f64,
            })
            .collect()
    }

    #[test]
    fn shift_from_distance_and_wind() {
        assert_eq!(station_shift(10.0, 5.0), 2);
        assert_eq!(station_shift(1.0, 50.0), 1);
        assert_eq!(station_shift(500.0, 5.0), 12);
        assert_eq!(station_shift(10.0, 0.0), 12);
    }

    #[test]
    fn forty_eight_columns_for_twelve_stations() {
        // d = 10 km at 5 km/h gives θ = 2, already in the global set.
        let cfg = MacroConfig::new(stations(12, 10.0), vec![1, 2, 3, 6], 5.0).unwrap();
        assert_eq!(cfg.column_names().len(), 48);
        let cfg = MacroConfig::new(stations(12, 40.0), vec![1, 2, 3, 6], 5.0).unwrap();
        assert_eq!(cfg.column_names().len(), 60);
    }

    #[test]
    fn constant_series_gives_constant_columns() {
        let cfg = MacroConfig::new(stations(2, 10.0), vec![1, 3], 5.0).unwrap();
        let readings: Vec<(String, i64, f64)> = (0..2)
            .flat_map(|i| (-12..20).map(move |h| (format!("s{i}"), h, 7.5)))
            .collect();
        let series =
            MacroSeries::from_readings(readings.iter().map(|(s, h, v)| (s.as_str(), *h, *v)), -12, 19);
        let row = macro_feature_rows(&series, &cfg, 5).unwrap();
        assert!(row.iter().all(|v| *v == 7.5));
    }

    #[test]
    fn shift_before_series_start_masks_row() {
        let cfg = MacroConfig::new(stations(1, 10.0), vec![6], 5.0).unwrap();
        let series = MacroSeries::from_readings((0..10).map(|h| ("s0", h, h as f64)), 0, 9);
        assert!(macro_feature_rows(&series, &cfg, 3).is_none());
        let row = macro_feature_rows(&series, &cfg, 8).unwrap();
        // Columns are shifts {2, 6}.
        assert_eq!(row, vec![6.0, 2.0]);
    }

    #[test]
    fn forward_fill_limit() {
        let filled = forward_fill(vec![Some(1.0), None, None, None, None, Some(2.0)], 3);
        assert_eq!(
            filled,
            vec![Some(1.0), Some(1.0), Some(1.0), Some(1.0), None, Some(2.0)]
        );
    }

    #[test]
    fn column_station_round_trip() {
        assert_eq!(macro_column_station(&macro_column_name("nw_1", 6)), Some("nw_1"));
        assert_eq!(macro_column_station("geo_x"), None);
    }
}
