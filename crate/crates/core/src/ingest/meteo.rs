use std::path::Path;

use rayon::prelude::*;

use crate::baselines::{idw_interpolate, Point, Sample};
use crate::error::{Error, Result};
use crate::featurize::{Category, DynamicSeries};
use crate::grid::GridSpec;

use super::{parse_timestamp, read_rows, LoadReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeteoVariable {
    Temperature,
    Pressure,
    VaporPressure,
    RelHumidity,
    WindSpeed,
    WindDir,
}

impl MeteoVariable {
    pub const ALL: [MeteoVariable; 6] = [
        MeteoVariable::Temperature,
        MeteoVariable::Pressure,
        MeteoVariable::VaporPressure,
        MeteoVariable::RelHumidity,
        MeteoVariable::WindSpeed,
        MeteoVariable::WindDir,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Channel names the gridded meteorology contributes to the dynamic
/// features. Wind direction enters as its sine and cosine.
pub const METEO_CHANNELS: [&str; 7] = [
    "meteo_temperature",
    "meteo_pressure",
    "meteo_vapor_pressure",
    "meteo_rh",
    "meteo_wind_speed",
    "meteo_wind_sin",
    "meteo_wind_cos",
];

/// One weather-station report; any variable may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteoRecord {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: i64,
    /// Indexed in [`MeteoVariable::ALL`] order.
    pub values: [Option<f64>; 6],
}

impl MeteoRecord {
    pub fn get(&self, v: MeteoVariable) -> Option<f64> {
        self.values[v.index()]
    }

    fn is_valid(&self) -> bool {
        let rh_ok = self.values[3].is_none_or(|v| (0.0..=100.0).contains(&v));
        let ws_ok = self.values[4].is_none_or(|v| v >= 0.0);
        let wd_ok = self.values[5].is_none_or(|v| (0.0..360.0).contains(&v));
        rh_ok && ws_ok && wd_ok && self.lat.is_finite() && self.lon.is_finite()
    }
}

/// `station_id,lat,lon,timestamp,temp,pressure,vapor_pressure,rh,wind_speed,wind_dir`.
pub fn load_meteo(path: &Path) -> Result<(Vec<MeteoRecord>, LoadReport)> {
    read_rows(
        path,
        &[
            "station_id",
            "lat",
            "lon",
            "timestamp",
            "temp",
            "pressure",
            "vapor_pressure",
            "rh",
            "wind_speed",
            "wind_dir",
        ],
        |h, r| {
            let mut values = [None; 6];
            for (k, v) in values.iter_mut().enumerate() {
                *v = h.opt_num(r, 4 + k)?;
            }
            let rec = MeteoRecord {
                station_id: h.field(r, 0)?.to_string(),
                lat: h.num(r, 1)?,
                lon: h.num(r, 2)?,
                timestamp: parse_timestamp(h.field(r, 3)?)?,
                values,
            };
            rec.is_valid().then_some(rec)
        },
    )
}

/// Gridded meteorology: per hour and variable a row-major raster, or `None`
/// when no station reported that variable in that hour.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteoField {
    pub width: usize,
    pub height: usize,
    /// `[t][variable]`.
    fields: Vec<[Option<Vec<f64>>; 6]>,
}

impl MeteoField {
    pub fn hours(&self) -> usize {
        self.fields.len()
    }

    pub fn get(&self, t: usize, v: MeteoVariable) -> Option<&[f64]> {
        self.fields[t][v.index()].as_deref()
    }

    /// Hours with at least one masked variable.
    pub fn masked_hours(&self) -> Vec<usize> {
        (0..self.hours())
            .filter(|&t| self.fields[t].iter().any(Option::is_none))
            .collect()
    }

    /// Mean gridded wind speed over all available hours, km/h.
    pub fn mean_wind_kmh(&self) -> Option<f64> {
        let mut s = 0.0;
        let mut n = 0usize;
        for t in 0..self.hours() {
            if let Some(f) = self.get(t, MeteoVariable::WindSpeed) {
                s += f.iter().sum::<f64>();
                n += f.len();
            }
        }
        (n > 0).then(|| 3.6 * s / n as f64)
    }

    /// Domain-mean wind direction per hour (vector average), degrees.
    pub fn hourly_wind_direction(&self) -> Vec<Option<f64>> {
        (0..self.hours())
            .map(|t| {
                let f = self.get(t, MeteoVariable::WindDir)?;
                let (s, c) = f.iter().fold((0.0, 0.0), |(s, c), d| {
                    let r = d.to_radians();
                    (s + r.sin(), c + r.cos())
                });
                Some(s.atan2(c).to_degrees().rem_euclid(360.0))
            })
            .collect()
    }

    /// Dynamic channels in [`METEO_CHANNELS`] order. A masked variable-hour
    /// borrows the nearest valid hour of the same variable (earlier on ties).
    pub fn to_dynamic_series(&self) -> Result<DynamicSeries> {
        let hours = self.hours();
        let n = self.width * self.height;
        let mut filled: Vec<Vec<&[f64]>> = Vec::with_capacity(6);
        for v in MeteoVariable::ALL {
            let valid: Vec<usize> = (0..hours).filter(|&t| self.get(t, v).is_some()).collect();
            if valid.is_empty() {
                return Err(Error::Input(format!("meteorology variable {v:?} has no reports")));
            }
            let per_hour = (0..hours)
                .map(|t| {
                    let pos = valid.partition_point(|&h| h < t);
                    let cand = [pos.checked_sub(1).map(|i| valid[i]), valid.get(pos).copied()];
                    let best = cand
                        .into_iter()
                        .flatten()
                        .min_by_key(|&h| (h.abs_diff(t), h))
                        .expect("non-empty");
                    self.get(best, v).expect("valid hour")
                })
                .collect();
            filled.push(per_hour);
        }
        let mut data = Vec::with_capacity(hours * METEO_CHANNELS.len() * n);
        for t in 0..hours {
            for f in &filled[..5] {
                data.extend_from_slice(f[t]);
            }
            data.extend(filled[5][t].iter().map(|d| d.to_radians().sin()));
            data.extend(filled[5][t].iter().map(|d| d.to_radians().cos()));
        }
        DynamicSeries::new(
            self.width,
            self.height,
            hours,
            METEO_CHANNELS.iter().map(|s| s.to_string()).collect(),
            vec![Category::Meteorology; METEO_CHANNELS.len()],
            data,
        )
    }
}

/// Inverse-distance (power 2) gridding of station reports onto cell centres,
/// hour by hour. Wind direction is interpolated on unit-vector components.
pub fn grid_meteorology(records: &[MeteoRecord], spec: &GridSpec) -> MeteoField {
    let mut by_hour: Vec<Vec<&MeteoRecord>> = vec![Vec::new(); spec.num_hours];
    for r in records {
        if let Some(t) = spec.hour_index(r.timestamp) {
            by_hour[t].push(r);
        }
    }
    let centers: Vec<Point> = spec
        .cells()
        .map(|c| {
            let (x, y) = spec.cell_center_km(c);
            Point::new(x, y)
        })
        .collect();
    let grid = |sources: &[Sample]| -> Option<Vec<f64>> {
        if sources.is_empty() {
            return None;
        }
        Some(
            centers
                .iter()
                .map(|p| idw_interpolate(sources, *p, 2.0).expect("non-empty sources"))
                .collect(),
        )
    };
    let fields: Vec<[Option<Vec<f64>>; 6]> = by_hour
        .par_iter()
        .map(|recs| {
            let at = |r: &MeteoRecord, value: f64| {
                let (x, y) = spec.project(r.lat, r.lon);
                Sample::new(x, y, value)
            };
            let scalar = |v: MeteoVariable| -> Vec<Sample> {
                recs.iter().filter_map(|r| r.get(v).map(|x| at(r, x))).collect()
            };
            let dirs: Vec<&&MeteoRecord> =
                recs.iter().filter(|r| r.get(MeteoVariable::WindDir).is_some()).collect();
            let sin: Vec<Sample> = dirs
                .iter()
                .map(|r| at(r, r.get(MeteoVariable::WindDir).unwrap().to_radians().sin()))
                .collect();
            let cos: Vec<Sample> = dirs
                .iter()
                .map(|r| at(r, r.get(MeteoVariable::WindDir).unwrap().to_radians().cos()))
                .collect();
            let wind_dir = match (grid(&sin), grid(&cos)) {
                (Some(s), Some(c)) => Some(
                    s.iter()
                        .zip(&c)
                        .map(|(s, c)| s.atan2(*c).to_degrees().rem_euclid(360.0))
                        .map(|d| if d >= 360.0 { 0.0 } else { d })
                        .collect(),
                ),
                _ => None,
            };
            [
                grid(&scalar(MeteoVariable::Temperature)),
                grid(&scalar(MeteoVariable::Pressure)),
                grid(&scalar(MeteoVariable::VaporPressure)),
                grid(&scalar(MeteoVariable::RelHumidity)),
                grid(&scalar(MeteoVariable::WindSpeed)),
                wind_dir,
            ]
        })
        .collect();
    let field = MeteoField {
        width: spec.width,
        height: spec.height,
        fields,
    };
    let masked = field.masked_hours();
    if !masked.is_empty() {
        log::warn!(
            "meteorology: {} hours have variables with no reporting station (first: {})",
            masked.len(),
            masked[0]
        );
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellIndex;

    fn spec() -> GridSpec {
        GridSpec::new(40.0, 116.0, 1.0, 6, 5, 0, 3).unwrap()
    }

    fn rec(spec: &GridSpec, x_km: f64, y_km: f64, t: i64, v: [Option<f64>; 6]) -> MeteoRecord {
        let (lat, lon) = spec.unproject(x_km, y_km);
        MeteoRecord {
            station_id: format!("{x_km}-{y_km}"),
            lat,
            lon,
            timestamp: t * 3600,
            values: v,
        }
    }

    fn all(v: f64, dir: f64) -> [Option<f64>; 6] {
        [Some(v), Some(v), Some(v), Some(v), Some(v), Some(dir)]
    }

    #[test]
    fn single_station_uniform() {
        let s = spec();
        let recs: Vec<_> = (0..3).map(|t| rec(&s, 2.2, 1.3, t, all(17.0, 45.0))).collect();
        let f = grid_meteorology(&recs, &s);
        for t in 0..3 {
            assert!(f.get(t, MeteoVariable::Temperature).unwrap().iter().all(|v| *v == 17.0));
            assert!(f
                .get(t, MeteoVariable::WindDir)
                .unwrap()
                .iter()
                .all(|v| (v - 45.0).abs() < 1e-9));
        }
        assert!(f.masked_hours().is_empty());
    }

    #[test]
    fn symmetric_midpoint_and_wind_wrap() {
        let s = spec();
        // Cell (2,2) centre is at (2.5, 2.5) km.
        let recs = vec![
            rec(&s, 0.5, 2.5, 0, all(10.0, 350.0)),
            rec(&s, 4.5, 2.5, 0, all(20.0, 10.0)),
        ];
        let f = grid_meteorology(&recs, &s);
        let i = s.offset(CellIndex::new(2, 2));
        assert!((f.get(0, MeteoVariable::Temperature).unwrap()[i] - 15.0).abs() < 1e-9);
        let d = f.get(0, MeteoVariable::WindDir).unwrap()[i];
        assert!(d.min(360.0 - d) < 1e-9, "direction {d}");
    }

    #[test]
    fn station_cell_converges_to_station() {
        let s = spec();
        let recs = vec![
            rec(&s, 1.5, 1.5, 0, all(10.0, 90.0)),
            rec(&s, 4.0, 3.0, 0, all(30.0, 180.0)),
        ];
        let f = grid_meteorology(&recs, &s);
        let i = s.offset(CellIndex::new(1, 1));
        assert!((f.get(0, MeteoVariable::Temperature).unwrap()[i] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn empty_hour_masked_and_filled() {
        let s = spec();
        let recs = vec![rec(&s, 1.0, 1.0, 0, all(10.0, 90.0)), rec(&s, 1.0, 1.0, 2, all(30.0, 90.0))];
        let f = grid_meteorology(&recs, &s);
        assert_eq!(f.masked_hours(), vec![1]);
        let ds = f.to_dynamic_series().unwrap();
        assert_eq!(ds.channels(), 7);
        assert_eq!(ds.get(1, 0, 0, 0), 10.0);
        assert_eq!(ds.get(2, 0, 0, 0), 30.0);
        assert!((ds.get(0, 5, 3, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_wind_in_kmh() {
        let s = spec();
        let recs: Vec<_> = (0..3).map(|t| rec(&s, 1.0, 1.0, t, all(5.0, 0.0))).collect();
        let f = grid_meteorology(&recs, &s);
        assert!((f.mean_wind_kmh().unwrap() - 18.0).abs() < 1e-9);
    }

    #[test]
    fn loader_reads_optional_fields() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.csv");
        std::fs::write(
            &p,
            "station_id,lat,lon,timestamp,temp,pressure,vapor_pressure,rh,wind_speed,wind_dir\n\
             a,40.01,116.01,0,20,1010,12,55,3,270\n\
             a,40.01,116.01,3600,,1010,12,55,3,\n",
        )
        .unwrap();
        let (r, rep) = load_meteo(&p).unwrap();
        assert_eq!(rep.parsed, 2);
        assert_eq!(r[1].get(MeteoVariable::Temperature), None);
        assert_eq!(r[0].get(MeteoVariable::WindDir), Some(270.0));
    }
}
