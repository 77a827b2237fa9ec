//! Glue from raw sensor records to labels and a feature context.

use std::io::Write;
use std::path::Path;

use crate::calibrate::{apply_calibration, build_label_set, fit_calibration, pair_colocated, CalibrationModel};
use crate::error::{Error, Result};
use crate::featurize::{DynamicSeries, FeatureContext, MacroConfig, MacroSeries, NeighborBanks, StaticVolume};
use crate::featurize::csv_reader;
use crate::grid::{CellIndex, GridSpec, Label, LabelSet, LabelSource, Observation};
use crate::ingest::{self, LoadReport, MeteoField, MeteoRecord, MobileAggregate, StationMeta};
use crate::synthcity::{self, Synthesis};

/// Everything read from an input directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorInputs {
    pub stations: Vec<StationMeta>,
    pub fixed: Vec<Observation>,
    pub mobile: Vec<Observation>,
    pub meteo: Vec<MeteoRecord>,
    pub static_volume: StaticVolume,
    /// Non-meteorological hourly covariates.
    pub dynamic: DynamicSeries,
}

/// Per-file row accounting of [`SensorInputs::load`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadSummary {
    pub files: Vec<(String, LoadReport)>,
}

impl SensorInputs {
    /// Read the files written by [`synthcity::write_city_files`] (or any
    /// directory holding the same schemas).
    pub fn load(dir: &Path, spec: &GridSpec) -> Result<(Self, LoadSummary)> {
        let stations = ingest::load_stations(&dir.join(synthcity::STATIONS_FILE))?;
        let (fixed, fr) = ingest::load_fixed_observations(&dir.join(synthcity::FIXED_FILE), spec, &stations)?;
        let (mobile, mr) = ingest::load_mobile_points(&dir.join(synthcity::MOBILE_FILE), spec)?;
        let (meteo, wr) = ingest::load_meteo(&dir.join(synthcity::METEO_FILE))?;
        let static_volume = ingest::load_static_features(&dir.join(synthcity::STATIC_FILE), spec)?;
        let dynamic = ingest::load_dynamic_features(&dir.join(synthcity::DYNAMIC_FILE), spec)?;
        let summary = LoadSummary {
            files: vec![
                (synthcity::FIXED_FILE.to_string(), fr),
                (synthcity::MOBILE_FILE.to_string(), mr),
                (synthcity::METEO_FILE.to_string(), wr),
            ],
        };
        Ok((
            SensorInputs {
                stations,
                fixed,
                mobile,
                meteo,
                static_volume,
                dynamic,
            },
            summary,
        ))
    }

    pub fn from_synthesis(s: &Synthesis) -> Self {
        SensorInputs {
            stations: s.sensors.stations.clone(),
            fixed: s.sensors.fixed.clone(),
            mobile: s.sensors.mobile.clone(),
            meteo: s.sensors.meteo.clone(),
            static_volume: s.city.static_volume.clone(),
            dynamic: s.city.dynamic.clone(),
        }
    }
}

/// Feature-construction settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    /// Filters per static family.
    pub static_filters: usize,
    /// Filters per dynamic family.
    pub dynamic_filters: usize,
    /// Shifts applied to every external station, hours.
    pub macro_shifts: Vec<u32>,
    pub seed: u64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            static_filters: 8,
            dynamic_filters: 8,
            macro_shifts: vec![1, 2, 3, 6],
            seed: 0,
        }
    }
}

/// Fixed labels, the fitted calibration and the calibrated mobile labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub fixed: Vec<Label>,
    /// `None` when there is no mobile data to calibrate.
    pub model: Option<CalibrationModel>,
    pub mobile: Vec<Label>,
    pub labels: LabelSet,
}

pub fn calibrate_inputs(spec: &GridSpec, inputs: &SensorInputs) -> Result<Calibrated> {
    let fixed = ingest::fixed_labels(&inputs.fixed, spec, &inputs.stations);
    let aggregates = ingest::aggregate_mobile(&inputs.mobile, spec);
    let (model, mobile) = if aggregates.is_empty() {
        (None, Vec::new())
    } else {
        let pairs = pair_colocated(&fixed, &aggregates);
        let model = fit_calibration(spec, &pairs)?;
        log::info!(
            "calibration: {} pairs, R² = {:.3}, F = {:.2}, p = {:.3e}",
            model.n_pairs,
            model.r_squared,
            model.f_statistic,
            model.p_value
        );
        let (labels, _) = apply_calibration(&model, spec, &aggregates);
        (Some(model), labels)
    };
    let labels = build_label_set(&fixed, &mobile)?;
    Ok(Calibrated {
        fixed,
        model,
        mobile,
        labels,
    })
}

/// Gridded weather plus the feature context with neighbouring filter banks
/// and, when external stations exist, macro inputs.
pub fn build_context(spec: &GridSpec, inputs: &SensorInputs, params: &FeatureParams) -> Result<(FeatureContext, MeteoField)> {
    let meteo = ingest::grid_meteorology(&inputs.meteo, spec);
    let dynamic = if inputs.meteo.is_empty() {
        inputs.dynamic.clone()
    } else {
        inputs.dynamic.clone().concat(meteo.to_dynamic_series()?)?
    };
    let banks = NeighborBanks::build(
        inputs.static_volume.channels(),
        2 * dynamic.channels(),
        params.static_filters,
        params.dynamic_filters,
        params.seed,
    )?;
    let mut ctx = FeatureContext::new(*spec, inputs.static_volume.clone(), dynamic)?.with_banks(banks)?;
    let stations = ingest::macro_stations(&inputs.stations, spec);
    if !stations.is_empty() {
        let v_bar = meteo.mean_wind_kmh().unwrap_or(0.0);
        if v_bar <= 0.0 {
            log::warn!("no wind observations; external-station shifts default to the maximum");
        }
        let config = MacroConfig::new(stations, params.macro_shifts.clone(), v_bar)?;
        let first = -(i64::from(config.max_shift()));
        let readings = ingest::macro_readings(&inputs.fixed, &inputs.stations, spec);
        let series = MacroSeries::from_readings(readings, first, spec.num_hours as i64 - 1);
        ctx = ctx.with_macro(config, series);
    }
    Ok((ctx, meteo))
}

/// Labels and features ready for training and evaluation.
pub struct Dataset {
    pub spec: GridSpec,
    pub calibrated: Calibrated,
    pub context: FeatureContext,
    pub meteo: MeteoField,
}

impl Dataset {
    pub fn labels(&self) -> &LabelSet {
        &self.calibrated.labels
    }
}

pub fn build_dataset(spec: &GridSpec, inputs: &SensorInputs, params: &FeatureParams) -> Result<Dataset> {
    let calibrated = calibrate_inputs(spec, inputs)?;
    if calibrated.labels.is_empty() {
        return Err(Error::Input("no labels inside the grid and study window".into()));
    }
    let (context, meteo) = build_context(spec, inputs, params)?;
    Ok(Dataset {
        spec: *spec,
        calibrated,
        context,
        meteo,
    })
}

/// `x,y,t,pm25,source`.
pub fn write_labels(path: &Path, labels: &[Label], header_comment: &[String]) -> Result<()> {
    let mut w = ingest::create(path)?;
    let io = |e| Error::io(path, e);
    ingest::comments(&mut w, header_comment).map_err(io)?;
    writeln!(w, "x,y,t,pm25,source").map_err(io)?;
    for l in labels {
        writeln!(w, "{},{},{},{},{}", l.cell.x, l.cell.y, l.t, l.pm25, l.source.as_str()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Schema(format!("{}: bad value `{raw}` in column {}", path.display(), i + 1)))
}

fn opt_field(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<Option<f64>> {
    match rec.get(i).unwrap_or("") {
        "" => Ok(None),
        _ => field(path, rec, i).map(Some),
    }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, expect: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    if h.iter().collect::<Vec<_>>() != expect {
        return Err(Error::Schema(format!(
            "{}: expected header `{}`",
            path.display(),
            expect.join(",")
        )));
    }
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<Label>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &["x", "y", "t", "pm25", "source"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(Label {
            cell: CellIndex::new(field(path, &rec, 0)?, field(path, &rec, 1)?),
            t: field(path, &rec, 2)?,
            pm25: field(path, &rec, 3)?,
            source: LabelSource::parse(rec.get(4).unwrap_or(""))?,
        });
    }
    Ok(out)
}

/// `x,y,t,pm25_median,temp_mean,rh_mean,sample_count`.
pub fn write_aggregates(path: &Path, aggs: &[MobileAggregate], header_comment: &[String]) -> Result<()> {
    let mut w = ingest::create(path)?;
    let io = |e| Error::io(path, e);
    ingest::comments(&mut w, header_comment).map_err(io)?;
    writeln!(w, "x,y,t,pm25_median,temp_mean,rh_mean,sample_count").map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for a in aggs {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            a.cell.x,
            a.cell.y,
            a.t,
            a.pm25_median,
            opt(a.temp_mean),
            opt(a.rh_mean),
            a.sample_count
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_aggregates(path: &Path) -> Result<Vec<MobileAggregate>> {
    let mut rdr = csv_reader(path)?;
    check_header(
        path,
        &mut rdr,
        &["x", "y", "t", "pm25_median", "temp_mean", "rh_mean", "sample_count"],
    )?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(MobileAggregate {
            cell: CellIndex::new(field(path, &rec, 0)?, field(path, &rec, 1)?),
            t: field(path, &rec, 2)?,
            pm25_median: field(path, &rec, 3)?,
            temp_mean: opt_field(path, &rec, 4)?,
            rh_mean: opt_field(path, &rec, 5)?,
            sample_count: field(path, &rec, 6)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::FeatureSet;
    use crate::grid::LabelSource;
    use crate::synthcity::{synthesize, CityConfig};

    fn small() -> CityConfig {
        CityConfig {
            width: 16,
            height: 16,
            hours: 48,
            spinup_hours: 6,
            fixed_stations: 12,
            vehicles: 4,
            seed: 2,
            ..CityConfig::default()
        }
    }

    #[test]
    fn synthetic_city_to_features() {
        let s = synthesize(&small()).unwrap();
        let inputs = SensorInputs::from_synthesis(&s);
        let d = build_dataset(&s.city.spec, &inputs, &FeatureParams::default()).unwrap();
        let labels = d.labels();
        assert_eq!(labels.count_source(LabelSource::Fixed), 12 * 48);
        assert!(labels.count_source(LabelSource::MobileCalibrated) > 100);
        let model = d.calibrated.model.as_ref().unwrap();
        assert!(model.r_squared > 0.5, "{model:?}");
        let cfg = d.context.macro_config().unwrap();
        assert_eq!(cfg.stations.len(), 8);
        let m = d.context.assemble(&labels.keys(), FeatureSet::LMN).unwrap();
        assert_eq!(m.n_rows(), labels.len());
        // 6 static + 2 dynamic + 7 meteo local columns, 5 × 8 neighbouring.
        assert!(m.n_cols() > 15 + 40);
    }

    #[test]
    fn noiseless_calibration_inverts_the_distortion() {
        let cfg = CityConfig {
            mobile_noise: 0.0,
            fixed_noise: 0.0,
            ..small()
        };
        let s = synthesize(&cfg).unwrap();
        let c = calibrate_inputs(&s.city.spec, &SensorInputs::from_synthesis(&s)).unwrap();
        let m = c.model.unwrap();
        assert!((m.coefficient("mobile_pm25").unwrap() - 1.25).abs() < 1e-6);
        assert!((m.coefficient("intercept").unwrap() + 6.25).abs() < 1e-6);
    }

    #[test]
    fn directory_round_trip_matches_memory() {
        let s = synthesize(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        synthcity::write_city_files(dir.path(), &s.city, &s.sensors, &s.truth, &[]).unwrap();
        let (loaded, summary) = SensorInputs::load(dir.path(), &s.city.spec).unwrap();
        assert_eq!(loaded, SensorInputs::from_synthesis(&s));
        assert!(summary.files.iter().all(|(_, r)| r.skipped == 0));
    }

    #[test]
    fn label_and_aggregate_files_round_trip() {
        let s = synthesize(&small()).unwrap();
        let inputs = SensorInputs::from_synthesis(&s);
        let spec = s.city.spec;
        let dir = tempfile::tempdir().unwrap();
        let aggs = ingest::aggregate_mobile(&inputs.mobile, &spec);
        let p = dir.path().join("aggs.csv");
        write_aggregates(&p, &aggs, &["h".into()]).unwrap();
        assert_eq!(load_aggregates(&p).unwrap(), aggs);
        let c = calibrate_inputs(&spec, &inputs).unwrap();
        let p = dir.path().join("labels.csv");
        write_labels(&p, c.labels.labels(), &[]).unwrap();
        assert_eq!(LabelSet::new(load_labels(&p).unwrap()).unwrap(), c.labels);
        std::fs::write(&p, "x,y,t,value\n").unwrap();
        assert!(matches!(load_labels(&p), Err(Error::Schema(_))));
    }
}
