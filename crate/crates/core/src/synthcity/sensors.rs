use std::io::Write;
use std::path::Path;

use chrono::DateTime;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{lognormal_series, normal, vapor_pressure_hpa, City, HourlySeries, TruthField, BACKGROUND_MARGIN};
use crate::error::{Error, Result};
use crate::grid::{CellIndex, Observation, SensorKind};
use crate::ingest::{self, MeteoRecord, StationMeta};
use crate::rng;

pub const STATIONS_FILE: &str = "stations.csv";
pub const FIXED_FILE: &str = "fixed.csv";
pub const MOBILE_FILE: &str = "mobile.csv";
pub const METEO_FILE: &str = "meteo.csv";
pub const STATIC_FILE: &str = "static_features.csv";
pub const DYNAMIC_FILE: &str = "dynamic_features.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Files written by [`write_city_files`].
pub const CITY_FILES: [&str; 7] = [
    STATIONS_FILE,
    FIXED_FILE,
    MOBILE_FILE,
    METEO_FILE,
    STATIC_FILE,
    DYNAMIC_FILE,
    TRUTH_FILE,
];

const SALT_FIXED: u64 = 0xF1;
const SALT_EXTERNAL: u64 = 0xE7;
const SALT_MOBILE: u64 = 0x30;
const SALT_METEO: u64 = 0x3E;

/// External readings start this many hours before the study window.
const EXTERNAL_LEAD_HOURS: i64 = 24;

/// Raw sensor records in the ingest schemas.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    pub stations: Vec<StationMeta>,
    pub fixed: Vec<Observation>,
    pub mobile: Vec<Observation>,
    pub meteo: Vec<MeteoRecord>,
}

/// Ids and nominal bearings of `n` external stations spread evenly around
/// the compass, starting due north.
pub fn external_station_ids(n: usize) -> Vec<(String, f64)> {
    const POINTS8: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];
    const POINTS16: [&str; 16] = [
        "N", "NNE", "NE", "ENE", "E", "ESE", "SE", "SSE", "S", "SSW", "SW", "WSW", "W", "WNW", "NW", "NNW",
    ];
    (0..n)
        .map(|k| {
            let bearing = 360.0 * k as f64 / n as f64;
            let id = match n {
                8 => format!("ext_{}", POINTS8[k]),
                16 => format!("ext_{}", POINTS16[k]),
                _ => format!("ext_{k:02}"),
            };
            (id, bearing)
        })
        .collect()
}

/// Weight of the upwind regional signal at a station: 1 when the wind
/// blows from the station's bearing, falling to 0 when it blows toward it.
fn upwind_weight(bearing_deg: f64, wind_from_deg: f64) -> f64 {
    let c = (bearing_deg - wind_from_deg).to_radians().cos();
    (0.5 * (1.0 + c)).powi(8)
}

fn clamp_inside(v: f64, hi: f64) -> (f64, bool) {
    let eps = 1e-6;
    if v < eps {
        (eps + (eps - v).min(hi - 2.0 * eps), true)
    } else if v > hi - eps {
        ((hi - eps) - (v - (hi - eps)).min(hi - 2.0 * eps), true)
    } else {
        (v, false)
    }
}

/// Read the simulated truth with the city's fixed stations, external
/// stations, vehicles and weather stations.
pub fn sample_sensors(city: &City, truth: &TruthField) -> Result<SensorData> {
    let cfg = &city.config;
    let spec = &city.spec;
    if truth.width != spec.width || truth.height != spec.height || truth.hours != spec.num_hours {
        return Err(Error::Shape("truth field does not match the city grid".into()));
    }
    let seed = cfg.seed;
    let spin = cfg.spinup_hours;
    let mid_hour = |t: i64| spec.hour_start_timestamp(t) + 1800;
    let mut stations = Vec::new();
    let mut fixed = Vec::new();

    // Fixed monitors in distinct cells.
    let mut r = rng::rng(seed, SALT_FIXED);
    let mut cells: Vec<CellIndex> = spec.cells().collect();
    cells.shuffle(&mut r);
    cells.truncate(cfg.fixed_stations);
    for (k, cell) in cells.iter().enumerate() {
        let (cx, cy) = spec.cell_center_km(*cell);
        let half = 0.3 * cfg.cell_size_km;
        let (lat, lon) = spec.unproject(cx + r.random_range(-half..half), cy + r.random_range(-half..half));
        let id = format!("fs_{k:02}");
        stations.push(StationMeta {
            station_id: id.clone(),
            lat,
            lon,
            inside_study_area: true,
        });
        for t in 0..cfg.hours {
            let v = truth.get(t, cell.x, cell.y) + cfg.fixed_noise * normal(&mut r);
            fixed.push(Observation {
                source: SensorKind::Fixed,
                sensor_id: id.clone(),
                lat,
                lon,
                timestamp: mid_hour(t as i64),
                pm25: v.max(0.0),
                temp: None,
                rh: None,
            });
        }
    }

    // External stations: the upwind share of a reading leads the regional
    // inflow by the transport time from the station to the grid edge.
    let mut r = rng::rng(seed, SALT_EXTERNAL);
    let (gx, gy) = spec.centroid_km();
    let v_bar = city.weather.mean_wind_kmh(spin).max(1e-3);
    let edge_km = 0.5 * cfg.width.max(cfg.height) as f64 * cfg.cell_size_km;
    let span = (cfg.hours as i64 + EXTERNAL_LEAD_HOURS) as usize;
    for (id, bearing) in external_station_ids(cfg.external_stations) {
        let d = r.random_range(cfg.external_min_km..=cfg.external_max_km);
        let b = bearing + r.random_range(-5.0..5.0);
        let (lat, lon) = spec.unproject(gx + d * b.to_radians().sin(), gy + d * b.to_radians().cos());
        stations.push(StationMeta {
            station_id: id.clone(),
            lat,
            lon,
            inside_study_area: false,
        });
        let own = HourlySeries {
            first_hour: -EXTERNAL_LEAD_HOURS,
            values: lognormal_series(&mut r, span, cfg.background_mean, cfg.background_sd, cfg.background_timescale_h),
        };
        let tau = d / v_bar;
        let lead = tau - edge_km / v_bar;
        debug_assert!(tau < BACKGROUND_MARGIN as f64);
        for t in -EXTERNAL_LEAD_HOURS..cfg.hours as i64 {
            let i = (t + spin as i64).max(0) as usize;
            let wgt = upwind_weight(b, city.weather.wind_from_deg[i]);
            let tf = t as f64;
            let upwind = city.background.at(tf + lead);
            let other = 0.5 * city.background.at(tf - tau) + 0.5 * own.hour(t);
            let v = wgt * upwind + (1.0 - wgt) * other + cfg.external_noise * normal(&mut r);
            fixed.push(Observation {
                source: SensorKind::Fixed,
                sensor_id: id.clone(),
                lat,
                lon,
                timestamp: mid_hour(t),
                pm25: v.max(0.0),
                temp: None,
                rh: None,
            });
        }
    }

    // Vehicles on persistent random walks, reflected at the grid edge.
    let mut r = rng::rng(seed, SALT_MOBILE);
    let (wk, hk) = (cfg.width as f64 * cfg.cell_size_km, cfg.height as f64 * cfg.cell_size_km);
    let mut mobile = Vec::with_capacity(cfg.vehicles * cfg.hours * cfg.readings_per_hour);
    for k in 0..cfg.vehicles {
        let id = format!("veh_{k:02}");
        let (mut x, mut y) = (r.random_range(0.0..wk), r.random_range(0.0..hk));
        let mut heading: f64 = r.random_range(0.0..std::f64::consts::TAU);
        for t in 0..cfg.hours {
            let i = t + spin;
            for j in 0..cfg.readings_per_hour {
                heading += 0.6 * normal(&mut r);
                let (nx, bx) = clamp_inside(x + cfg.vehicle_step_km * heading.sin(), wk);
                let (ny, by) = clamp_inside(y + cfg.vehicle_step_km * heading.cos(), hk);
                if bx {
                    heading = -heading;
                }
                if by {
                    heading = std::f64::consts::PI - heading;
                }
                x = nx;
                y = ny;
                let cx = ((x / cfg.cell_size_km) as usize).min(cfg.width - 1);
                let cy = ((y / cfg.cell_size_km) as usize).min(cfg.height - 1);
                let mut v = cfg.mobile_scale * truth.get(t, cx, cy) + cfg.mobile_bias + cfg.mobile_noise * normal(&mut r);
                if cfg.mobile_spike_prob > 0.0 && r.random_bool(cfg.mobile_spike_prob) {
                    v *= r.random_range(3.0..6.0);
                }
                let temp = city.weather.temperature_c[i] + cfg.mobile_met_noise * normal(&mut r);
                let rh = (city.weather.rh_percent[i] + 4.0 * cfg.mobile_met_noise * normal(&mut r)).clamp(0.0, 100.0);
                let (lat, lon) = spec.unproject(x, y);
                let offset = (3600 * j / cfg.readings_per_hour) as i64 + 30;
                mobile.push(Observation {
                    source: SensorKind::Mobile,
                    sensor_id: id.clone(),
                    lat,
                    lon,
                    timestamp: spec.hour_start_timestamp(t as i64) + offset,
                    pm25: v.max(0.0),
                    temp: Some(temp),
                    rh: Some(rh),
                });
            }
        }
    }

    // Weather stations at random points of the grid.
    let mut r = rng::rng(seed, SALT_METEO);
    let mut meteo = Vec::with_capacity(cfg.weather_stations * cfg.hours);
    for k in 0..cfg.weather_stations {
        let (lat, lon) = spec.unproject(r.random_range(0.0..wk), r.random_range(0.0..hk));
        let id = format!("ws_{k}");
        for t in 0..cfg.hours {
            let i = t + spin;
            let w = &city.weather;
            let temp = w.temperature_c[i] + 0.3 * normal(&mut r);
            let rh = (w.rh_percent[i] + 2.0 * normal(&mut r)).clamp(0.0, 100.0);
            let speed = (w.wind_speed_ms[i] * (1.0 + 0.05 * normal(&mut r))).max(0.0);
            let dir = (w.wind_from_deg[i] + 5.0 * normal(&mut r)).rem_euclid(360.0);
            meteo.push(MeteoRecord {
                station_id: id.clone(),
                lat,
                lon,
                timestamp: mid_hour(t as i64),
                values: [
                    Some(temp),
                    Some(w.pressure_hpa[i] + 0.5 * normal(&mut r)),
                    Some(vapor_pressure_hpa(temp, rh)),
                    Some(rh),
                    Some(speed),
                    Some(if dir >= 360.0 { 0.0 } else { dir }),
                ],
            });
        }
    }

    Ok(SensorData {
        stations,
        fixed,
        mobile,
        meteo,
    })
}

fn iso(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `x,y,t,value` rows in t, y, x order.
pub fn write_truth(path: &Path, truth: &TruthField, header_comment: &[String]) -> Result<()> {
    let mut w = ingest::create(path)?;
    let io = |e| Error::io(path, e);
    ingest::comments(&mut w, header_comment).map_err(io)?;
    writeln!(w, "x,y,t,value").map_err(io)?;
    for t in 0..truth.hours {
        for y in 0..truth.height {
            for x in 0..truth.width {
                writeln!(w, "{x},{y},{t},{}", truth.get(t, x, y)).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Write every sensor, covariate and truth file of a synthetic city into
/// `dir`.
pub fn write_city_files(
    dir: &Path,
    city: &City,
    sensors: &SensorData,
    truth: &TruthField,
    header_comment: &[String],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = |name: &str, header: &str, rows: &mut dyn Iterator<Item = String>| -> Result<()> {
        let path = dir.join(name);
        let mut w = ingest::create(&path)?;
        let io = |e| Error::io(&path, e);
        ingest::comments(&mut w, header_comment).map_err(io)?;
        writeln!(w, "{header}").map_err(io)?;
        for row in rows {
            writeln!(w, "{row}").map_err(io)?;
        }
        w.flush().map_err(io)
    };
    table(
        STATIONS_FILE,
        "station_id,lat,lon,inside",
        &mut sensors
            .stations
            .iter()
            .map(|s| format!("{},{},{},{}", s.station_id, s.lat, s.lon, u8::from(s.inside_study_area))),
    )?;
    table(
        FIXED_FILE,
        "station_id,lat,lon,timestamp,pm25",
        &mut sensors
            .fixed
            .iter()
            .map(|o| format!("{},{},{},{},{}", o.sensor_id, o.lat, o.lon, iso(o.timestamp), o.pm25)),
    )?;
    table(
        MOBILE_FILE,
        "vehicle_id,lat,lon,timestamp,pm25,temp,rh",
        &mut sensors.mobile.iter().map(|o| {
            format!(
                "{},{},{},{},{},{},{}",
                o.sensor_id,
                o.lat,
                o.lon,
                iso(o.timestamp),
                o.pm25,
                opt(o.temp),
                opt(o.rh)
            )
        }),
    )?;
    table(
        METEO_FILE,
        "station_id,lat,lon,timestamp,temp,pressure,vapor_pressure,rh,wind_speed,wind_dir",
        &mut sensors.meteo.iter().map(|m| {
            let vals: Vec<String> = m.values.iter().map(|v| opt(*v)).collect();
            format!("{},{},{},{},{}", m.station_id, m.lat, m.lon, iso(m.timestamp), vals.join(","))
        }),
    )?;
    ingest::write_static_features(&dir.join(STATIC_FILE), &city.static_volume, header_comment)?;
    ingest::write_dynamic_features(&dir.join(DYNAMIC_FILE), &city.dynamic, header_comment)?;
    write_truth(&dir.join(TRUTH_FILE), truth, header_comment)
}
