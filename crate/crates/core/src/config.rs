//! Flat `key = value` run configuration resolving every stage default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{CvMode, EvalParams};
use crate::featurize::FeatureSet;
use crate::gbdt::GbdtParams;
use crate::pipeline::FeatureParams;
use crate::rng::mix_seed;
use crate::synthcity::CityConfig;

/// Cross-validation and ablation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub cv_mode: CvMode,
    pub folds: usize,
    pub idw_power: f64,
    pub knn_k: usize,
    /// Share of labels held out by the coverage ablation.
    pub test_fraction: f64,
    /// Repetitions of the ablation, each with its own split and subsets.
    pub ablation_repeats: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            cv_mode: CvMode::Random,
            folds: 5,
            idw_power: 2.0,
            knn_k: 10,
            test_fraction: 0.15,
            ablation_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub city: CityConfig,
    pub features: FeatureParams,
    pub gbdt: GbdtParams,
    pub eval: EvalSettings,
    /// Feature subset used by `train` and `infer`.
    pub train_features: FeatureSet,
    /// Directory holding the sensor and covariate files; defaults to the
    /// output directory.
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            city: CityConfig::default(),
            features: FeatureParams::default(),
            gbdt: GbdtParams::default(),
            eval: EvalSettings::default(),
            train_features: FeatureSet::LMN,
            data_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<u32>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn join(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

const SALT_CITY: u64 = 1;
const SALT_FEATURES: u64 = 2;
const SALT_GBDT: u64 = 3;
const SALT_FOLDS: u64 = 4;
const SALT_ABLATION: u64 = 5;

impl RunConfig {
    /// Every key with its current value, in file order. Paths are listed
    /// last and excluded from the hash.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.city;
        let g = &self.gbdt;
        let e = &self.eval;
        let mut v: Vec<(&'static str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("city.width", c.width.to_string()),
            ("city.height", c.height.to_string()),
            ("city.cell_size_km", c.cell_size_km.to_string()),
            ("city.hours", c.hours.to_string()),
            ("city.origin_lat", c.origin_lat.to_string()),
            ("city.origin_lon", c.origin_lon.to_string()),
            ("city.start_time", c.start_time.to_string()),
            ("city.static_channels", c.static_channels.to_string()),
            ("city.dynamic_channels", c.dynamic_channels.to_string()),
            ("city.point_sources", c.point_sources.to_string()),
            ("city.point_source_strength", c.point_source_strength.to_string()),
            ("city.road_emission", c.road_emission.to_string()),
            ("city.industrial_emission", c.industrial_emission.to_string()),
            ("city.wind_from_deg", c.wind_from_deg.to_string()),
            ("city.wind_dir_jitter_deg", c.wind_dir_jitter_deg.to_string()),
            ("city.wind_speed_ms", c.wind_speed_ms.to_string()),
            ("city.wind_diurnal", c.wind_diurnal.to_string()),
            ("city.diffusion_km2h", c.diffusion_km2h.to_string()),
            ("city.decay_per_hour", c.decay_per_hour.to_string()),
            ("city.substeps", c.substeps.to_string()),
            ("city.background_mean", c.background_mean.to_string()),
            ("city.background_sd", c.background_sd.to_string()),
            ("city.background_timescale_h", c.background_timescale_h.to_string()),
            ("city.external_stations", c.external_stations.to_string()),
            ("city.external_min_km", c.external_min_km.to_string()),
            ("city.external_max_km", c.external_max_km.to_string()),
            ("city.external_noise", c.external_noise.to_string()),
            ("city.fixed_stations", c.fixed_stations.to_string()),
            ("city.fixed_noise", c.fixed_noise.to_string()),
            ("city.vehicles", c.vehicles.to_string()),
            ("city.readings_per_hour", c.readings_per_hour.to_string()),
            ("city.vehicle_step_km", c.vehicle_step_km.to_string()),
            ("city.mobile_scale", c.mobile_scale.to_string()),
            ("city.mobile_bias", c.mobile_bias.to_string()),
            ("city.mobile_noise", c.mobile_noise.to_string()),
            ("city.mobile_spike_prob", c.mobile_spike_prob.to_string()),
            ("city.mobile_met_noise", c.mobile_met_noise.to_string()),
            ("city.weather_stations", c.weather_stations.to_string()),
            ("city.spinup_hours", c.spinup_hours.to_string()),
            ("features.static_filters", self.features.static_filters.to_string()),
            ("features.dynamic_filters", self.features.dynamic_filters.to_string()),
            ("features.macro_shifts", join(&self.features.macro_shifts)),
            ("gbdt.num_trees", g.num_trees.to_string()),
            ("gbdt.max_depth", g.max_depth.to_string()),
            ("gbdt.learning_rate", g.learning_rate.to_string()),
            ("gbdt.min_samples_leaf", g.min_samples_leaf.to_string()),
            ("gbdt.row_subsample", g.row_subsample.to_string()),
            ("gbdt.feature_subsample", g.feature_subsample.to_string()),
            ("gbdt.histogram_bins", g.histogram_bins.to_string()),
            ("gbdt.early_stopping_rounds", g.early_stopping_rounds.to_string()),
            ("eval.cv_mode", e.cv_mode.to_string()),
            ("eval.folds", e.folds.to_string()),
            ("eval.idw_power", e.idw_power.to_string()),
            ("eval.knn_k", e.knn_k.to_string()),
            ("eval.test_fraction", e.test_fraction.to_string()),
            ("eval.ablation_repeats", e.ablation_repeats.to_string()),
            ("train.features", self.train_features.to_string()),
        ];
        v.push((
            "paths.data",
            self.data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        ));
        v
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let c = &mut self.city;
        let g = &mut self.gbdt;
        let e = &mut self.eval;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "city.width" => c.width = parse(key, v)?,
            "city.height" => c.height = parse(key, v)?,
            "city.cell_size_km" => c.cell_size_km = parse(key, v)?,
            "city.hours" => c.hours = parse(key, v)?,
            "city.origin_lat" => c.origin_lat = parse(key, v)?,
            "city.origin_lon" => c.origin_lon = parse(key, v)?,
            "city.start_time" => c.start_time = parse(key, v)?,
            "city.static_channels" => c.static_channels = parse(key, v)?,
            "city.dynamic_channels" => c.dynamic_channels = parse(key, v)?,
            "city.point_sources" => c.point_sources = parse(key, v)?,
            "city.point_source_strength" => c.point_source_strength = parse(key, v)?,
            "city.road_emission" => c.road_emission = parse(key, v)?,
            "city.industrial_emission" => c.industrial_emission = parse(key, v)?,
            "city.wind_from_deg" => c.wind_from_deg = parse(key, v)?,
            "city.wind_dir_jitter_deg" => c.wind_dir_jitter_deg = parse(key, v)?,
            "city.wind_speed_ms" => c.wind_speed_ms = parse(key, v)?,
            "city.wind_diurnal" => c.wind_diurnal = parse(key, v)?,
            "city.diffusion_km2h" => c.diffusion_km2h = parse(key, v)?,
            "city.decay_per_hour" => c.decay_per_hour = parse(key, v)?,
            "city.substeps" => c.substeps = parse(key, v)?,
            "city.background_mean" => c.background_mean = parse(key, v)?,
            "city.background_sd" => c.background_sd = parse(key, v)?,
            "city.background_timescale_h" => c.background_timescale_h = parse(key, v)?,
            "city.external_stations" => c.external_stations = parse(key, v)?,
            "city.external_min_km" => c.external_min_km = parse(key, v)?,
            "city.external_max_km" => c.external_max_km = parse(key, v)?,
            "city.external_noise" => c.external_noise = parse(key, v)?,
            "city.fixed_stations" => c.fixed_stations = parse(key, v)?,
            "city.fixed_noise" => c.fixed_noise = parse(key, v)?,
            "city.vehicles" => c.vehicles = parse(key, v)?,
            "city.readings_per_hour" => c.readings_per_hour = parse(key, v)?,
            "city.vehicle_step_km" => c.vehicle_step_km = parse(key, v)?,
            "city.mobile_scale" => c.mobile_scale = parse(key, v)?,
            "city.mobile_bias" => c.mobile_bias = parse(key, v)?,
            "city.mobile_noise" => c.mobile_noise = parse(key, v)?,
            "city.mobile_spike_prob" => c.mobile_spike_prob = parse(key, v)?,
            "city.mobile_met_noise" => c.mobile_met_noise = parse(key, v)?,
            "city.weather_stations" => c.weather_stations = parse(key, v)?,
            "city.spinup_hours" => c.spinup_hours = parse(key, v)?,
            "features.static_filters" => self.features.static_filters = parse(key, v)?,
            "features.dynamic_filters" => self.features.dynamic_filters = parse(key, v)?,
            "features.macro_shifts" => self.features.macro_shifts = parse_list(key, v)?,
            "gbdt.num_trees" => g.num_trees = parse(key, v)?,
            "gbdt.max_depth" => g.max_depth = parse(key, v)?,
            "gbdt.learning_rate" => g.learning_rate = parse(key, v)?,
            "gbdt.min_samples_leaf" => g.min_samples_leaf = parse(key, v)?,
            "gbdt.row_subsample" => g.row_subsample = parse(key, v)?,
            "gbdt.feature_subsample" => g.feature_subsample = parse(key, v)?,
            "gbdt.histogram_bins" => g.histogram_bins = parse(key, v)?,
            "gbdt.early_stopping_rounds" => g.early_stopping_rounds = parse(key, v)?,
            "eval.cv_mode" => e.cv_mode = v.parse()?,
            "eval.folds" => e.folds = parse(key, v)?,
            "eval.idw_power" => e.idw_power = parse(key, v)?,
            "eval.knn_k" => e.knn_k = parse(key, v)?,
            "eval.test_fraction" => e.test_fraction = parse(key, v)?,
            "eval.ablation_repeats" => e.ablation_repeats = parse(key, v)?,
            "train.features" => {
                let set: FeatureSet = v.parse()?;
                if set.is_empty() {
                    return Err(Error::Config("`train.features` must name at least one group".into()));
                }
                self.train_features = set;
            }
            "paths.data" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key `{k}` set twice", n + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_kind(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_kind(&e))))
    }

    pub fn validate(&self) -> Result<()> {
        self.city.validate()?;
        self.gbdt.validate()?;
        if self.features.static_filters == 0 || self.features.dynamic_filters == 0 {
            return Err(Error::Config("filter counts must be >= 1".into()));
        }
        if self.features.macro_shifts.contains(&0) {
            return Err(Error::Config("macro shifts must be >= 1 hour".into()));
        }
        if self.eval.folds < 2 {
            return Err(Error::Config("eval.folds must be >= 2".into()));
        }
        if self.eval.knn_k == 0 || !(self.eval.idw_power > 0.0) {
            return Err(Error::Config("eval.knn_k and eval.idw_power must be positive".into()));
        }
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(Error::Config("eval.test_fraction must lie in (0, 1)".into()));
        }
        if self.eval.ablation_repeats == 0 {
            return Err(Error::Config("eval.ablation_repeats must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolved configuration as parseable text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hex SHA-256 prefix of every setting except paths.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if !k.starts_with("paths.") {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment lines stamped on every artifact.
    pub fn header(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash()), format!("seed={}", self.seed)]
    }

    /// The city with the master seed applied.
    pub fn city_config(&self) -> CityConfig {
        CityConfig {
            seed: mix_seed(self.seed, SALT_CITY),
            ..self.city.clone()
        }
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            seed: mix_seed(self.seed, SALT_FEATURES),
            ..self.features.clone()
        }
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            gbdt: GbdtParams {
                seed: mix_seed(self.seed, SALT_GBDT),
                ..self.gbdt.clone()
            },
            idw_power: self.eval.idw_power,
            knn_k: self.eval.knn_k,
        }
    }

    pub fn fold_seed(&self) -> u64 {
        mix_seed(self.seed, SALT_FOLDS)
    }

    /// Seeds of the ablation repetitions.
    pub fn ablation_seeds(&self) -> Vec<u64> {
        (0..self.eval.ablation_repeats as u64)
            .map(|k| mix_seed(mix_seed(self.seed, SALT_ABLATION), k))
            .collect()
    }
}

/// Message of an error without its kind prefix, for re-wrapping.
fn strip_kind(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.features.macro_shifts = vec![2, 4];
        c.eval.cv_mode = CvMode::GridGrouped;
        c.train_features = FeatureSet::LM;
        c.data_dir = Some(PathBuf::from("some/dir"));
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn every_key_is_settable() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_and_repeated_keys_rejected() {
        let e = RunConfig::parse("seed = 1\ncity.colour = red\n").unwrap_err();
        assert!(e.to_string().contains("city.colour"), "{e}");
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed 1\n").is_err());
        assert!(RunConfig::parse("gbdt.max_depth = deep\n").is_err());
        assert!(RunConfig::parse("train.features = -\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# run\n\nseed = 4  # trailing\neval.folds=3\n").unwrap();
        assert_eq!((c.seed, c.eval.folds), (4, 3));
    }

    #[test]
    fn hash_tracks_settings_but_not_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.data_dir = Some(PathBuf::from("x"));
        assert_eq!(a.hash(), b.hash());
        b.gbdt.num_trees += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("city.diffusion_km2h = -1\n").is_err());
        assert!(RunConfig::parse("eval.folds = 1\n").is_err());
        assert!(RunConfig::parse("features.macro_shifts = 0,1\n").is_err());
    }
}
