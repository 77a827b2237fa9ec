//! Sensor and covariate file loaders, grid snapping and mobile aggregation.

mod aggregate;
mod features;
mod meteo;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};
use crate::featurize::csv_reader;
use crate::featurize::MacroStation;
use crate::grid::{GridLookup, GridSpec, Observation, SensorKind};

pub use aggregate::{aggregate_mobile, fixed_labels, hampel_filter, median, MobileAggregate};
pub(crate) use features::{comments, create};
pub use features::{
    load_dynamic_features, load_static_features, write_dynamic_features, write_static_features,
};
pub use meteo::{
    grid_meteorology, load_meteo, MeteoField, MeteoRecord, MeteoVariable, METEO_CHANNELS,
};

/// Row accounting for one loaded file. `parsed + skipped == total`;
/// `dropped` counts parsed rows discarded for falling outside the grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub total: usize,
    pub parsed: usize,
    pub skipped: usize,
    pub dropped: usize,
}

impl LoadReport {
    pub fn kept(&self) -> usize {
        self.parsed - self.dropped
    }
}

/// Share of malformed rows above which a file is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct StationMeta {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub inside_study_area: bool,
}

/// Epoch seconds or ISO-8601 (with offset, or naive and taken as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Column positions of a header, by required name.
pub(crate) struct Header {
    index: Vec<usize>,
}

impl Header {
    pub(crate) fn resolve(path: &Path, headers: &csv::StringRecord, names: &[&str]) -> Result<Header> {
        let index = names
            .iter()
            .map(|n| {
                headers.iter().position(|h| h == *n).ok_or_else(|| {
                    Error::Schema(format!("{}: missing column `{n}`", path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Header { index })
    }

    pub(crate) fn field<'r>(&self, rec: &'r csv::StringRecord, i: usize) -> Option<&'r str> {
        rec.get(self.index[i])
    }

    pub(crate) fn num(&self, rec: &csv::StringRecord, i: usize) -> Option<f64> {
        self.field(rec, i)?.parse::<f64>().ok().filter(|v| v.is_finite())
    }

    /// Empty field reads as `Some(None)`; unparseable as `None`.
    pub(crate) fn opt_num(&self, rec: &csv::StringRecord, i: usize) -> Option<Option<f64>> {
        let f = self.field(rec, i)?;
        if f.is_empty() || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("na") {
            return Some(None);
        }
        f.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
    }
}

/// Parse every data row with `parse`, counting rejects, and enforce the
/// malformed-row ceiling.
pub(crate) fn read_rows<T>(
    path: &Path,
    columns: &[&str],
    mut parse: impl FnMut(&Header, &csv::StringRecord) -> Option<T>,
) -> Result<(Vec<T>, LoadReport)> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let header = Header::resolve(path, &headers, columns)?;
    let mut out = Vec::new();
    let mut report = LoadReport::default();
    for rec in rdr.records() {
        report.total += 1;
        let parsed = rec.ok().and_then(|r| parse(&header, &r));
        match parsed {
            Some(v) => {
                report.parsed += 1;
                out.push(v);
            }
            None => report.skipped += 1,
        }
    }
    if report.skipped as f64 > MAX_MALFORMED_FRACTION * report.total as f64 {
        return Err(Error::Schema(format!(
            "{}: {} of {} rows malformed",
            path.display(),
            report.skipped,
            report.total
        )));
    }
    if report.skipped > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), report.skipped);
    }
    Ok((out, report))
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "inside" => Some(true),
        "0" | "false" | "no" | "outside" => Some(false),
        _ => None,
    }
}

/// Station list, `station_id,lat,lon,inside`.
pub fn load_stations(path: &Path) -> Result<Vec<StationMeta>> {
    let (stations, _) = read_rows(path, &["station_id", "lat", "lon", "inside"], |h, r| {
        Some(StationMeta {
            station_id: h.field(r, 0)?.to_string(),
            lat: h.num(r, 1)?,
            lon: h.num(r, 2)?,
            inside_study_area: parse_flag(h.field(r, 3)?)?,
        })
    })?;
    let mut seen = HashSet::new();
    for s in &stations {
        if !seen.insert(s.station_id.as_str()) {
            return Err(Error::Schema(format!("duplicate station id `{}`", s.station_id)));
        }
    }
    Ok(stations)
}

/// Fixed-station readings, `station_id,lat,lon,timestamp,pm25`.
///
/// Readings that fall outside the raster are kept only when their station
/// is flagged as outside the study area (they feed the macro features).
pub fn load_fixed_observations(
    path: &Path,
    spec: &GridSpec,
    stations: &[StationMeta],
) -> Result<(Vec<Observation>, LoadReport)> {
    let (obs, mut report) = read_rows(
        path,
        &["station_id", "lat", "lon", "timestamp", "pm25"],
        |h, r| {
            let o = Observation {
                source: SensorKind::Fixed,
                sensor_id: h.field(r, 0)?.to_string(),
                lat: h.num(r, 1)?,
                lon: h.num(r, 2)?,
                timestamp: parse_timestamp(h.field(r, 3)?)?,
                pm25: h.num(r, 4)?,
                temp: None,
                rh: None,
            };
            o.is_valid().then_some(o)
        },
    )?;
    let outside: HashSet<&str> = stations
        .iter()
        .filter(|s| !s.inside_study_area)
        .map(|s| s.station_id.as_str())
        .collect();
    let mut kept = Vec::with_capacity(obs.len());
    for o in obs {
        let inside = matches!(spec.grid_index(o.lat, o.lon)?, GridLookup::Cell(_));
        if inside || outside.contains(o.sensor_id.as_str()) {
            kept.push(o);
        } else {
            report.dropped += 1;
        }
    }
    Ok((kept, report))
}

/// Mobile readings, `vehicle_id,lat,lon,timestamp,pm25,temp,rh`; points
/// outside the raster are dropped.
pub fn load_mobile_points(path: &Path, spec: &GridSpec) -> Result<(Vec<Observation>, LoadReport)> {
    let (obs, mut report) = read_rows(
        path,
        &["vehicle_id", "lat", "lon", "timestamp", "pm25", "temp", "rh"],
        |h, r| {
            let o = Observation {
                source: SensorKind::Mobile,
                sensor_id: h.field(r, 0)?.to_string(),
                lat: h.num(r, 1)?,
                lon: h.num(r, 2)?,
                timestamp: parse_timestamp(h.field(r, 3)?)?,
                pm25: h.num(r, 4)?,
                temp: h.opt_num(r, 5)?,
                rh: h.opt_num(r, 6)?,
            };
            o.is_valid().then_some(o)
        },
    )?;
    let mut kept = Vec::with_capacity(obs.len());
    for o in obs {
        if matches!(spec.grid_index(o.lat, o.lon)?, GridLookup::Cell(_)) {
            kept.push(o);
        } else {
            report.dropped += 1;
        }
    }
    Ok((kept, report))
}

/// Stations flagged outside the study area, positioned relative to the
/// raster centroid (bearing clockwise from north).
pub fn macro_stations(stations: &[StationMeta], spec: &GridSpec) -> Vec<MacroStation> {
    let (cx, cy) = spec.centroid_km();
    let mut out: Vec<MacroStation> = stations
        .iter()
        .filter(|s| !s.inside_study_area)
        .map(|s| {
            let (x, y) = spec.project(s.lat, s.lon);
            let (dx, dy) = (x - cx, y - cy);
            MacroStation {
                id: s.station_id.clone(),
                distance_km: dx.hypot(dy),
                bearing_deg: dx.atan2(dy).to_degrees().rem_euclid(360.0),
            }
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// `(station, study hour, pm25)` readings of the external stations.
pub fn macro_readings<'a>(
    observations: &'a [Observation],
    stations: &[StationMeta],
    spec: &'a GridSpec,
) -> Vec<(&'a str, i64, f64)> {
    let outside: HashMap<&str, ()> = stations
        .iter()
        .filter(|s| !s.inside_study_area)
        .map(|s| (s.station_id.as_str(), ()))
        .collect();
    observations
        .iter()
        .filter(|o| o.source == SensorKind::Fixed && outside.contains_key(o.sensor_id.as_str()))
        .map(|o| (o.sensor_id.as_str(), spec.hour_offset(o.timestamp), o.pm25))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn spec() -> GridSpec {
        GridSpec::new(40.0, 116.0, 1.0, 55, 55, 0, 672).unwrap()
    }

    pub(crate) fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("3600"), Some(3600));
        assert_eq!(parse_timestamp("1970-01-01T01:00:00Z"), Some(3600));
        assert_eq!(parse_timestamp("1970-01-01T09:00:00+08:00"), Some(3600));
        assert_eq!(parse_timestamp("1970-01-01 01:00:00"), Some(3600));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn empty_fixed_file() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "f.csv", "station_id,lat,lon,timestamp,pm25\n");
        let (obs, rep) = load_fixed_observations(&p, &spec(), &[]).unwrap();
        assert!(obs.is_empty());
        assert_eq!(rep, LoadReport::default());
    }

    #[test]
    fn full_station_grid_row_count() {
        let s = spec();
        let mut body = String::from("station_id,lat,lon,timestamp,pm25\n");
        for i in 0..28 {
            let (lat, lon) = s.cell_center_latlon(crate::grid::CellIndex::new(i, i));
            for t in 0..672 {
                body.push_str(&format!("s{i},{lat},{lon},{},{}\n", t * 3600, 20 + i));
            }
        }
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "f.csv", &body);
        let (obs, rep) = load_fixed_observations(&p, &s, &[]).unwrap();
        assert_eq!(obs.len(), 28 * 672);
        assert_eq!(rep.parsed + rep.skipped, rep.total);
    }

    #[test]
    fn negative_pm25_skipped() {
        let mut body = String::from("station_id,lat,lon,timestamp,pm25\n");
        for i in 0..20 {
            body.push_str(&format!("a,40.1,116.1,{},10\n", i * 3600));
        }
        body.push_str("a,40.1,116.1,0,-5\n");
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "f.csv", &body);
        let (obs, rep) = load_fixed_observations(&p, &spec(), &[]).unwrap();
        assert_eq!(obs.len(), 20);
        assert_eq!((rep.total, rep.parsed, rep.skipped), (21, 20, 1));
    }

    #[test]
    fn too_many_malformed_rows() {
        let body = "station_id,lat,lon,timestamp,pm25\na,40.1,116.1,0,10\na,40.1,116.1,x,10\n";
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "f.csv", body);
        assert!(matches!(load_fixed_observations(&p, &spec(), &[]), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_fixed_observations(Path::new("/nonexistent/f.csv"), &spec(), &[]);
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn outside_station_kept_only_when_flagged() {
        let body = "station_id,lat,lon,timestamp,pm25\nfar,41.0,116.1,0,10\nstray,41.0,116.2,0,10\n";
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "f.csv", body);
        let meta = vec![StationMeta {
            station_id: "far".into(),
            lat: 41.0,
            lon: 116.1,
            inside_study_area: false,
        }];
        let (obs, rep) = load_fixed_observations(&p, &spec(), &meta).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].sensor_id, "far");
        assert_eq!(rep.dropped, 1);
    }

    #[test]
    fn mobile_points_snap_and_drop() {
        let s = spec();
        let (lat, lon) = s.cell_center_latlon(crate::grid::CellIndex::new(3, 4));
        let body = format!(
            "vehicle_id,lat,lon,timestamp,pm25,temp,rh\n\
             v1,{lat},{lon},100,12,20,50\nv1,{lat},{lon},100,13,,\nv1,45.0,116.0,100,10,20,50\n"
        );
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "m.csv", &body);
        let (obs, rep) = load_mobile_points(&p, &s).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1].temp, None);
        assert_eq!(rep.dropped, 1);
        assert_eq!(
            s.grid_index(obs[0].lat, obs[0].lon).unwrap(),
            GridLookup::Cell(crate::grid::CellIndex::new(3, 4))
        );
    }

    #[test]
    fn stations_and_bearings() {
        let d = tempfile::tempdir().unwrap();
        let s = spec();
        let (cx, cy) = s.centroid_km();
        let (clat, clon) = s.unproject(cx, cy);
        let (nlat, nlon) = s.unproject(cx, cy + 50.0);
        let (elat, elon) = s.unproject(cx + 40.0, cy);
        let body = format!(
            "station_id,lat,lon,inside\nin,{clat},{clon},1\nnorth,{nlat},{nlon},0\neast,{elat},{elon},false\n"
        );
        let p = write(&d, "s.csv", &body);
        let st = load_stations(&p).unwrap();
        let m = macro_stations(&st, &s);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].id, "east");
        assert!((m[0].bearing_deg - 90.0).abs() < 1e-6);
        assert!(m[1].bearing_deg.min(360.0 - m[1].bearing_deg) < 1e-6);
        let dup = write(&d, "d.csv", "station_id,lat,lon,inside\na,1,1,1\na,2,2,0\n");
        assert!(load_stations(&dup).is_err());
    }
}
