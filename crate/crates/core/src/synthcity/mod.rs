//! Synthetic city: covariates, emissions, regional inflow and a dispersion
//! simulation whose output is the ground truth the rest of the pipeline is
//! scored against.

mod dispersion;
mod sensors;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::featurize::{Category, DynamicSeries, StaticVolume};
use crate::grid::GridSpec;
use crate::rng;

pub use dispersion::{Boundary, Dispersion, DispersionParams, TruthField, Wind};
pub use sensors::{
    external_station_ids, sample_sensors, write_city_files, write_truth, SensorData, CITY_FILES,
    DYNAMIC_FILE, FIXED_FILE, METEO_FILE, MOBILE_FILE, STATIC_FILE, STATIONS_FILE, TRUTH_FILE,
};

/// Every knob of the synthetic city. Physical quantities use µg/m³ for
/// concentrations, km for lengths and hours for time unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size_km: f64,
    pub hours: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Epoch hours of the first study hour.
    pub start_time: i64,
    pub static_channels: usize,
    pub dynamic_channels: usize,
    /// Gaussian plumes added to the industrial land-use channel.
    pub point_sources: usize,
    /// Peak land-use value of a point source.
    pub point_source_strength: f64,
    /// Emission rate (µg/m³/h) per standard deviation of road density at
    /// full traffic.
    pub road_emission: f64,
    /// Emission rate (µg/m³/h) per standard deviation of industrial land use.
    pub industrial_emission: f64,
    /// Direction the wind blows from, degrees.
    pub wind_from_deg: f64,
    pub wind_dir_jitter_deg: f64,
    pub wind_speed_ms: f64,
    /// Relative amplitude of the diurnal wind-speed cycle.
    pub wind_diurnal: f64,
    pub diffusion_km2h: f64,
    pub decay_per_hour: f64,
    /// `0` chooses the sub-step count automatically.
    pub substeps: usize,
    pub background_mean: f64,
    pub background_sd: f64,
    pub background_timescale_h: f64,
    pub external_stations: usize,
    pub external_min_km: f64,
    pub external_max_km: f64,
    pub external_noise: f64,
    pub fixed_stations: usize,
    pub fixed_noise: f64,
    pub vehicles: usize,
    pub readings_per_hour: usize,
    /// Distance a vehicle covers between readings.
    pub vehicle_step_km: f64,
    pub mobile_scale: f64,
    pub mobile_bias: f64,
    pub mobile_noise: f64,
    /// Probability that a mobile reading is a gross outlier.
    pub mobile_spike_prob: f64,
    /// Noise on the temperature and humidity logged by vehicles.
    pub mobile_met_noise: f64,
    pub weather_stations: usize,
    pub spinup_hours: usize,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        CityConfig {
            width: 32,
            height: 32,
            cell_size_km: 1.0,
            hours: 168,
            origin_lat: 39.80,
            origin_lon: 116.20,
            start_time: 438_288,
            static_channels: 6,
            dynamic_channels: 2,
            point_sources: 4,
            point_source_strength: 1.0,
            road_emission: 40.0,
            industrial_emission: 22.0,
            wind_from_deg: 315.0,
            wind_dir_jitter_deg: 15.0,
            wind_speed_ms: 4.0,
            wind_diurnal: 0.3,
            diffusion_km2h: 2.0,
            decay_per_hour: 0.05,
            substeps: 0,
            background_mean: 50.0,
            background_sd: 25.0,
            background_timescale_h: 12.0,
            external_stations: 8,
            external_min_km: 25.0,
            external_max_km: 60.0,
            external_noise: 2.0,
            fixed_stations: 30,
            fixed_noise: 2.0,
            vehicles: 10,
            readings_per_hour: 6,
            vehicle_step_km: 1.5,
            mobile_scale: 0.8,
            mobile_bias: 5.0,
            mobile_noise: 4.0,
            mobile_spike_prob: 0.0,
            mobile_met_noise: 0.5,
            weather_stations: 5,
            spinup_hours: 24,
            seed: 0,
        }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("point_source_strength", self.point_source_strength),
            ("road_emission", self.road_emission),
            ("industrial_emission", self.industrial_emission),
            ("wind_dir_jitter_deg", self.wind_dir_jitter_deg),
            ("wind_speed_ms", self.wind_speed_ms),
            ("diffusion_km2h", self.diffusion_km2h),
            ("decay_per_hour", self.decay_per_hour),
            ("background_mean", self.background_mean),
            ("background_sd", self.background_sd),
            ("external_noise", self.external_noise),
            ("fixed_noise", self.fixed_noise),
            ("vehicle_step_km", self.vehicle_step_km),
            ("mobile_scale", self.mobile_scale),
            ("mobile_noise", self.mobile_noise),
            ("mobile_met_noise", self.mobile_met_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.wind_diurnal) {
            return Err(Error::Config("wind_diurnal must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.mobile_spike_prob) {
            return Err(Error::Config("mobile_spike_prob must lie in [0, 1]".into()));
        }
        if !(self.background_timescale_h > 0.0) {
            return Err(Error::Config("background_timescale_h must be positive".into()));
        }
        if !(self.external_min_km > 0.0 && self.external_max_km >= self.external_min_km) {
            return Err(Error::Config("external station distances must satisfy 0 < min <= max".into()));
        }
        if self.static_channels < 2 {
            return Err(Error::Config("static_channels must be >= 2 (the emission drivers)".into()));
        }
        if self.dynamic_channels < 1 {
            return Err(Error::Config("dynamic_channels must be >= 1".into()));
        }
        if self.fixed_stations > self.width * self.height {
            return Err(Error::Config("more fixed stations than grid cells".into()));
        }
        if self.vehicles > 0 && self.readings_per_hour == 0 {
            return Err(Error::Config("readings_per_hour must be >= 1".into()));
        }
        let half = 0.5 * (self.width.max(self.height) as f64) * self.cell_size_km * std::f64::consts::SQRT_2;
        if self.external_stations > 0 && self.external_min_km <= half {
            return Err(Error::Config(format!(
                "external stations must lie outside the grid (min distance > {half:.1} km)"
            )));
        }
        self.spec()?;
        Ok(())
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.origin_lat,
            self.origin_lon,
            self.cell_size_km,
            self.width,
            self.height,
            self.start_time,
            self.hours,
        )
    }

    pub fn dispersion_params(&self) -> DispersionParams {
        DispersionParams {
            cell_size_km: self.cell_size_km,
            diffusion_km2h: self.diffusion_km2h,
            decay_per_hour: self.decay_per_hour,
            substeps: self.substeps,
        }
    }
}

/// Static channel roster; the first two drive emissions.
const STATIC_NAMES: [&str; 6] = [
    "transport_road_density",
    "landuse_industrial",
    "landuse_residential",
    "geo_elevation",
    "vitality_poi",
    "landuse_green",
];
const DYNAMIC_NAMES: [&str; 2] = ["transport_traffic", "vitality_activity"];

/// Static channels that scale the emission field.
pub const DRIVER_CHANNELS: [&str; 2] = ["transport_road_density", "landuse_industrial"];

const SALT_STATIC: u64 = 0x5747;
const SALT_DYNAMIC: u64 = 0xD1A;
const SALT_WIND: u64 = 0x3121;
const SALT_BACKGROUND: u64 = 0xB6;

/// Hourly series on a (possibly negative) study-hour axis, linearly
/// interpolated between hours and held constant past either end.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub first_hour: i64,
    pub values: Vec<f64>,
}

impl HourlySeries {
    pub fn at(&self, t: f64) -> f64 {
        let last = self.values.len() - 1;
        let pos = (t - self.first_hour as f64).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last);
        let frac = pos - i as f64;
        if i == last {
            self.values[last]
        } else {
            self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
        }
    }

    pub fn hour(&self, t: i64) -> f64 {
        self.at(t as f64)
    }
}

/// Per simulated hour (spin-up first) wind and weather shared by the whole
/// domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Weather {
    pub wind_from_deg: Vec<f64>,
    pub wind_speed_ms: Vec<f64>,
    pub temperature_c: Vec<f64>,
    pub pressure_hpa: Vec<f64>,
    pub rh_percent: Vec<f64>,
}

impl Weather {
    pub fn wind(&self, i: usize) -> Wind {
        Wind::from_met(self.wind_from_deg[i], self.wind_speed_ms[i])
    }

    /// Mean wind speed over the study hours, km/h.
    pub fn mean_wind_kmh(&self, spinup: usize) -> f64 {
        let s = &self.wind_speed_ms[spinup..];
        3.6 * s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Saturation-weighted vapour pressure (Magnus form), hPa.
pub fn vapor_pressure_hpa(temp_c: f64, rh_percent: f64) -> f64 {
    rh_percent / 100.0 * 6.112 * (17.67 * temp_c / (temp_c + 243.5)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub config: CityConfig,
    pub spec: GridSpec,
    pub static_volume: StaticVolume,
    /// Non-meteorological dynamic channels over the study hours.
    pub dynamic: DynamicSeries,
    /// Emission rate per simulated hour (spin-up first), row-major.
    pub emissions: Vec<Vec<f64>>,
    pub weather: Weather,
    /// Regional background reaching the upwind edge.
    pub background: HourlySeries,
    /// Cells of the point sources.
    pub point_sources: Vec<(usize, usize)>,
}

impl City {
    /// Simulated hours including spin-up.
    pub fn sim_hours(&self) -> usize {
        self.config.spinup_hours + self.config.hours
    }

    /// Study hour of simulated hour `i`.
    pub fn study_hour(&self, i: usize) -> i64 {
        i as i64 - self.config.spinup_hours as i64
    }

    pub fn hour_of_day(&self, study_hour: i64) -> f64 {
        (self.config.start_time + study_hour).rem_euclid(24) as f64
    }

    pub fn boundary(&self) -> Boundary {
        Boundary::Inflow(
            (0..self.sim_hours())
                .map(|i| self.background.hour(self.study_hour(i)))
                .collect(),
        )
    }

    /// Run the dispersion model over spin-up and study hours and keep the
    /// study hours.
    pub fn simulate(&self) -> Result<TruthField> {
        let n = self.spec.num_cells();
        let sim = Dispersion::new(self.spec.width, self.spec.height, self.config.dispersion_params())?;
        let winds: Vec<Wind> = (0..self.sim_hours()).map(|i| self.weather.wind(i)).collect();
        let initial = vec![self.background.hour(self.study_hour(0)); n];
        let truth = sim.simulate(&initial, &self.emissions, &winds, &self.boundary(), self.config.hours)?;
        if truth.clipped_cells > 0 {
            log::warn!(
                "dispersion clipped {} negative values ({:.3e} total mass)",
                truth.clipped_cells,
                truth.clipped_mass
            );
        }
        Ok(truth)
    }
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn box_blur(field: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for d in -r..=r {
                    let (xx, yy) = if horizontal {
                        (x as isize + d, y as isize)
                    } else {
                        (x as isize, y as isize + d)
                    };
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        s += src[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
                out[y * w + x] = s / n;
            }
        }
        out
    };
    let once = pass(field, true);
    pass(&once, false)
}

fn rescale(field: &mut [f64]) {
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in field.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Population standard deviation, or 1 for a flat field.
fn spread(field: &[f64]) -> f64 {
    let n = field.len() as f64;
    let m = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// White noise blurred three times with a box of the given radius, mapped
/// to `[0, 1]`.
fn smooth_field(r: &mut ChaCha8Rng, w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut f: Vec<f64> = (0..w * h).map(|_| normal(r)).collect();
    for _ in 0..3 {
        f = box_blur(&f, w, h, radius);
    }
    rescale(&mut f);
    f
}

/// Straight roads at random positions and angles, softened by a one-cell
/// blur, over a faint smooth base.
fn road_field(r: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let roads = 3 + (w.max(h) / 8).min(6);
    let mut f = vec![0.0; w * h];
    for _ in 0..roads {
        let (px, py) = (r.random_range(0.0..w as f64), r.random_range(0.0..h as f64));
        let angle: f64 = r.random_range(0.0..std::f64::consts::PI);
        let weight = r.random_range(0.5..1.0);
        let (s, c) = angle.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - px, y as f64 + 0.5 - py);
                if (dx * s - dy * c).abs() < 0.6 {
                    f[y * w + x] += weight;
                }
            }
        }
    }
    let mut f = box_blur(&f, w, h, 1);
    let base = smooth_field(r, w, h, 3);
    for (v, b) in f.iter_mut().zip(base) {
        *v += 0.15 * b;
    }
    rescale(&mut f);
    f
}

/// Rush-hour traffic profile in `(0, 1]`.
fn traffic_profile(hour_of_day: f64) -> f64 {
    let bump = |c: f64, s: f64| (-(hour_of_day - c).powi(2) / (2.0 * s * s)).exp();
    (0.25 + 0.75 * bump(8.0, 1.5) + 0.8 * bump(18.0, 2.0)).min(1.0)
}

fn activity_profile(hour_of_day: f64) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * (hour_of_day - 15.0) / 24.0;
    0.55 + 0.45 * phase.cos()
}

/// Zero-mean, unit-variance AR(1) path with the given e-folding time.
fn ar1(r: &mut ChaCha8Rng, len: usize, timescale_h: f64) -> Vec<f64> {
    let phi = (-1.0 / timescale_h).exp();
    let innov = (1.0 - phi * phi).sqrt();
    let mut z = normal(r);
    (0..len)
        .map(|_| {
            let v = z;
            z = phi * z + innov * normal(r);
            v
        })
        .collect()
}

/// Log-normal series with the given mean and standard deviation.
fn lognormal_series(r: &mut ChaCha8Rng, len: usize, mean: f64, sd: f64, timescale_h: f64) -> Vec<f64> {
    if mean == 0.0 {
        return vec![0.0; len];
    }
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    let s = s2.sqrt();
    ar1(r, len, timescale_h)
        .into_iter()
        .map(|z| mean * (s * z - 0.5 * s2).exp())
        .collect()
}

/// Hours of background series kept on either side of the simulated span,
/// enough for any external-station lead or lag.
pub(crate) const BACKGROUND_MARGIN: i64 = 48;

/// Build the covariates, emissions, weather and background of a city.
pub fn generate_city(config: &CityConfig) -> Result<City> {
    config.validate()?;
    let spec = config.spec()?;
    let (w, h) = (config.width, config.height);
    let n = w * h;
    let seed = config.seed;

    let mut r = rng::rng(seed, SALT_STATIC);
    let road = road_field(&mut r, w, h);
    let mut industrial = smooth_field(&mut r, w, h, 2);
    for v in industrial.iter_mut() {
        *v = v.powi(2);
    }
    let mut point_sources = Vec::with_capacity(config.point_sources);
    for _ in 0..config.point_sources {
        let (sx, sy) = (r.random_range(0..w), r.random_range(0..h));
        point_sources.push((sx, sy));
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - sx as f64).powi(2) + (y as f64 - sy as f64).powi(2);
                industrial[y * w + x] += config.point_source_strength * (-d2 / 2.0).exp();
            }
        }
    }
    rescale(&mut industrial);
    let residential = smooth_field(&mut r, w, h, 3);
    let elevation = {
        let mut e = smooth_field(&mut r, w, h, 6);
        for (i, v) in e.iter_mut().enumerate() {
            *v += 0.5 * (i / w) as f64 / h as f64;
        }
        rescale(&mut e);
        e
    };
    let poi = {
        let noise = smooth_field(&mut r, w, h, 2);
        let mut p: Vec<f64> = road.iter().zip(&noise).map(|(a, b)| 0.6 * a + 0.4 * b).collect();
        rescale(&mut p);
        p
    };
    let green: Vec<f64> = {
        let noise = smooth_field(&mut r, w, h, 4);
        let mut g: Vec<f64> = residential.iter().zip(&noise).map(|(a, b)| 0.5 * (1.0 - a) + 0.5 * b).collect();
        rescale(&mut g);
        g
    };
    let mut planes = vec![road.clone(), industrial.clone(), residential, elevation, poi.clone(), green];
    planes.truncate(config.static_channels);
    let mut names: Vec<String> = STATIC_NAMES.iter().take(config.static_channels).map(|s| s.to_string()).collect();
    for k in names.len()..config.static_channels {
        names.push(format!("geo_extra_{}", k - STATIC_NAMES.len()));
        planes.push(smooth_field(&mut r, w, h, 2));
    }
    let categories = names.iter().map(|s| Category::from_channel_name(s)).collect();
    let static_volume = StaticVolume::new(w, h, names, categories, planes.concat())?;

    // Weather over spin-up and study hours.
    let sim_hours = config.spinup_hours + config.hours;
    let hod = |i: usize| (config.start_time + i as i64 - config.spinup_hours as i64).rem_euclid(24) as f64;
    let mut r = rng::rng(seed, SALT_WIND);
    let dir_noise = ar1(&mut r, sim_hours, 6.0);
    let speed_noise = ar1(&mut r, sim_hours, 8.0);
    let temp_noise = ar1(&mut r, sim_hours, 24.0);
    let pres_noise = ar1(&mut r, sim_hours, 36.0);
    let rh_noise = ar1(&mut r, sim_hours, 12.0);
    let mut weather = Weather {
        wind_from_deg: Vec::with_capacity(sim_hours),
        wind_speed_ms: Vec::with_capacity(sim_hours),
        temperature_c: Vec::with_capacity(sim_hours),
        pressure_hpa: Vec::with_capacity(sim_hours),
        rh_percent: Vec::with_capacity(sim_hours),
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 0..sim_hours {
        let cycle = (two_pi * (hod(i) - 14.0) / 24.0).cos();
        let dir = (config.wind_from_deg + config.wind_dir_jitter_deg * dir_noise[i]).rem_euclid(360.0);
        let speed = config.wind_speed_ms * (1.0 + config.wind_diurnal * cycle) * (0.2 * speed_noise[i]).exp();
        let temp = 4.0 + 5.0 * cycle + 3.0 * temp_noise[i];
        let rh = (55.0 - 12.0 * cycle + 10.0 * rh_noise[i]).clamp(8.0, 98.0);
        weather.wind_from_deg.push(dir);
        weather.wind_speed_ms.push(speed.max(0.0));
        weather.temperature_c.push(temp);
        weather.pressure_hpa.push(1016.0 + 6.0 * pres_noise[i]);
        weather.rh_percent.push(rh);
    }

    // Dynamic channels and emissions.
    let mut r = rng::rng(seed, SALT_DYNAMIC);
    let jitter: Vec<f64> = (0..sim_hours).map(|_| (0.08 * normal(&mut r)).exp()).collect();
    let day_factor = |i: usize| {
        let day = (config.start_time + i as i64 - config.spinup_hours as i64).div_euclid(24);
        if (day + 3).rem_euclid(7) >= 5 {
            0.7
        } else {
            1.0
        }
    };
    let traffic_at = |i: usize| traffic_profile(hod(i)) * day_factor(i) * jitter[i];
    // Rates apply per spatial standard deviation of the driver, so both
    // drivers shape the emission field whatever their sparsity.
    let (road_rate, ind_rate) = (
        config.road_emission / spread(&road),
        config.industrial_emission / spread(&industrial),
    );
    let emissions: Vec<Vec<f64>> = (0..sim_hours)
        .map(|i| {
            let tr = traffic_at(i);
            (0..n).map(|c| road_rate * road[c] * tr + ind_rate * industrial[c]).collect()
        })
        .collect();
    let extra_planes: Vec<Vec<f64>> = (DYNAMIC_NAMES.len()..config.dynamic_channels)
        .map(|_| smooth_field(&mut r, w, h, 2))
        .collect();
    let extra_phase: Vec<f64> = extra_planes.iter().map(|_| r.random_range(0.0..24.0)).collect();
    let mut dyn_names: Vec<String> =
        DYNAMIC_NAMES.iter().take(config.dynamic_channels).map(|s| s.to_string()).collect();
    for k in 0..extra_planes.len() {
        dyn_names.push(format!("vitality_extra_{k}"));
    }
    let dyn_channels = dyn_names.len();
    let mut data = Vec::with_capacity(config.hours * dyn_channels * n);
    for t in 0..config.hours {
        let i = t + config.spinup_hours;
        for c in 0..dyn_channels {
            match c {
                0 => {
                    let tr = traffic_at(i);
                    data.extend(road.iter().map(|v| v * tr));
                }
                1 => {
                    let a = activity_profile(hod(i));
                    data.extend(poi.iter().map(|v| v * a));
                }
                k => {
                    let p = activity_profile(hod(i) + extra_phase[k - 2]);
                    data.extend(extra_planes[k - 2].iter().map(|v| v * p));
                }
            }
        }
    }
    let dyn_categories = dyn_names.iter().map(|s| Category::from_channel_name(s)).collect();
    let dynamic = DynamicSeries::new(w, h, config.hours, dyn_names, dyn_categories, data)?;

    let mut r = rng::rng(seed, SALT_BACKGROUND);
    let first = -(config.spinup_hours as i64) - BACKGROUND_MARGIN;
    let len = (config.spinup_hours + config.hours) as i64 + 2 * BACKGROUND_MARGIN;
    let background = HourlySeries {
        first_hour: first,
        values: lognormal_series(
            &mut r,
            len as usize,
            config.background_mean,
            config.background_sd,
            config.background_timescale_h,
        ),
    };

    Ok(City {
        config: config.clone(),
        spec,
        static_volume,
        dynamic,
        emissions,
        weather,
        background,
        point_sources,
    })
}

/// City, simulated truth and sensor records for one configuration.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub city: City,
    pub truth: TruthField,
    pub sensors: SensorData,
}

pub fn synthesize(config: &CityConfig) -> Result<Synthesis> {
    let city = generate_city(config)?;
    let truth = city.simulate()?;
    let sensors = sample_sensors(&city, &truth)?;
    Ok(Synthesis { city, truth, sensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CityConfig {
        CityConfig {
            width: 12,
            height: 10,
            hours: 24,
            spinup_hours: 6,
            external_min_km: 20.0,
            external_max_km: 30.0,
            fixed_stations: 8,
            vehicles: 3,
            seed: 5,
            ..CityConfig::default()
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn same_seed_same_city() {
        let a = generate_city(&small()).unwrap();
        let b = generate_city(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_city(&CityConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.static_volume, c.static_volume);
    }

    #[test]
    fn no_sources_no_emissions() {
        let cfg = CityConfig {
            point_sources: 0,
            road_emission: 0.0,
            industrial_emission: 0.0,
            background_mean: 0.0,
            ..small()
        };
        let city = generate_city(&cfg).unwrap();
        assert!(city.emissions.iter().flatten().all(|v| *v == 0.0));
        let truth = city.simulate().unwrap();
        assert!(truth.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn emissions_track_driver_channels() {
        let cfg = CityConfig {
            width: 32,
            height: 32,
            external_min_km: 25.0,
            external_max_km: 60.0,
            ..small()
        };
        for seed in 0..10 {
            let city = generate_city(&CityConfig { seed, ..cfg.clone() }).unwrap();
            let n = city.spec.num_cells();
            let mut mean = vec![0.0; n];
            for e in &city.emissions {
                for (m, v) in mean.iter_mut().zip(e) {
                    *m += v / city.emissions.len() as f64;
                }
            }
            for name in DRIVER_CHANNELS {
                let c = city.static_volume.channel_index(name).unwrap();
                let r = pearson(&mean, city.static_volume.plane(c));
                assert!(r > 0.5, "seed {seed} {name}: r = {r}");
            }
        }
    }

    #[test]
    fn channel_roster_and_categories() {
        let city = generate_city(&CityConfig {
            static_channels: 8,
            dynamic_channels: 3,
            ..small()
        })
        .unwrap();
        assert_eq!(city.static_volume.names[6], "geo_extra_0");
        assert_eq!(city.static_volume.categories[0], Category::Transport);
        assert_eq!(city.static_volume.categories[1], Category::LandUse);
        assert_eq!(city.dynamic.names, ["transport_traffic", "vitality_activity", "vitality_extra_0"]);
        assert!(city.static_volume.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            CityConfig { diffusion_km2h: -1.0, ..small() },
            CityConfig { static_channels: 1, ..small() },
            CityConfig { external_min_km: 5.0, ..small() },
            CityConfig { fixed_stations: 500, ..small() },
            CityConfig { mobile_spike_prob: 2.0, ..small() },
        ] {
            assert!(matches!(generate_city(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
        let unstable = CityConfig { substeps: 1, ..small() };
        let city = generate_city(&unstable).unwrap();
        assert!(matches!(city.simulate(), Err(Error::Config(_))));
    }

    #[test]
    fn truth_is_non_negative_and_tracks_background() {
        let city = generate_city(&small()).unwrap();
        let truth = city.simulate().unwrap();
        assert_eq!(truth.hours, 24);
        assert!(truth.data.iter().all(|v| *v >= 0.0 && v.is_finite()));
        // The upwind (north-west) corner sits close to the regional inflow.
        let b = city.background.hour(12);
        let nw = truth.get(12, 0, city.spec.height - 1);
        assert!((nw - b).abs() < 0.6 * b + 20.0, "{nw} vs {b}");
    }

    #[test]
    fn interpolated_series() {
        let s = HourlySeries {
            first_hour: -2,
            values: vec![0.0, 10.0, 20.0],
        };
        assert_eq!(s.at(-1.5), 5.0);
        assert_eq!(s.hour(0), 20.0);
        assert_eq!(s.at(7.0), 20.0);
        assert_eq!(s.at(-9.0), 0.0);
    }

    #[test]
    fn magnus_vapor_pressure() {
        assert!((vapor_pressure_hpa(0.0, 100.0) - 6.112).abs() < 1e-12);
        assert!((vapor_pressure_hpa(20.0, 50.0) - 11.69).abs() < 0.05);
    }
}
