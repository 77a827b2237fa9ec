//! Subcommand runner behind the `deepmaps` binary.
//!
//! Each stage reads its inputs from the data directory and earlier stage
//! artifacts from the output directory, and writes its own artifacts back
//! there, stamped with the configuration hash.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::calibrate::{apply_calibration, build_label_set, fit_calibration, pair_colocated, CalibrationModel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{ablation_csv, coverage_ablation, evaluate_table, holdout_split, infer_hours, kfold_split};
use crate::eval::{table_csv, ABLATION_FRACTIONS, TABLE_ROWS};
use crate::featurize::{FeatureContext, FeatureMatrix};
use crate::gbdt::{self, GbdtModel};
use crate::grid::{GridSpec, LabelSet};
use crate::ingest;
use crate::pipeline::{self, SensorInputs};
use crate::report;
use crate::synthcity;

pub const RESOLVED_FILE: &str = "config.resolved";
pub const FIXED_LABELS_FILE: &str = "fixed_labels.csv";
pub const AGGREGATES_FILE: &str = "mobile_aggregates.csv";
pub const CALIBRATION_FILE: &str = "calibration.txt";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURES_META_FILE: &str = "features_meta.csv";
pub const MODEL_FILE: &str = "model.gbdt";

#[derive(Debug, Parser)]
#[command(name = "deepmaps", version, about = "Hourly PM2.5 grid inference from fixed and mobile sensors")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic city with sensor files and ground truth.
    Synth,
    /// Snap fixed readings to labels and aggregate mobile readings.
    Ingest,
    /// Fit the mobile calibration and write the merged label set.
    Calibrate,
    /// Write the feature matrix of every label.
    Featurize,
    /// Fit the boosted-tree model and its feature importances.
    Train,
    /// Cross-validate every method and feature subset.
    Evaluate,
    /// Test error against the share of mobile labels used for training.
    Ablate,
    /// Predict every cell of every hour.
    Infer,
    /// Summarize the artifacts as markdown and grayscale images.
    Report,
}

/// Resolved configuration and directories of one invocation.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(Run {
            config,
            out: cli.out.clone(),
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.config.data_dir.clone().unwrap_or_else(|| self.out.clone())
    }

    fn header(&self) -> Vec<String> {
        self.config.header()
    }

    fn spec(&self) -> Result<GridSpec> {
        self.config.city.spec()
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Paths of the named artifacts, or an error naming the absent ones.
    fn require(&self, names: &[&str]) -> Result<Vec<PathBuf>> {
        let paths: Vec<PathBuf> = names.iter().map(|n| self.artifact(n)).collect();
        let missing: Vec<String> = paths
            .iter()
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(paths)
        } else {
            Err(Error::MissingArtifacts(missing))
        }
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.artifact(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn inputs(&self) -> Result<SensorInputs> {
        let (inputs, summary) = SensorInputs::load(&self.data_dir(), &self.spec()?)?;
        for (file, r) in &summary.files {
            log::info!("{file}: {} rows kept of {}", r.kept(), r.total);
        }
        Ok(inputs)
    }

    fn context(&self, inputs: &SensorInputs) -> Result<FeatureContext> {
        Ok(pipeline::build_context(&self.spec()?, inputs, &self.config.feature_params())?.0)
    }

    fn labels(&self) -> Result<LabelSet> {
        let p = self.require(&[LABELS_FILE])?;
        LabelSet::new(pipeline::load_labels(&p[0])?)
    }

    /// Execute one subcommand.
    pub fn execute(&self, command: Command) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let resolved = self.config.to_text();
        log::info!("resolved configuration (hash {}):\n{}", self.config.hash(), resolved.trim_end());
        self.write(RESOLVED_FILE, &resolved)?;
        match command {
            Command::Synth => self.synth(),
            Command::Ingest => self.ingest(),
            Command::Calibrate => self.calibrate(),
            Command::Featurize => self.featurize(),
            Command::Train => self.train(),
            Command::Evaluate => self.evaluate(),
            Command::Ablate => self.ablate(),
            Command::Infer => self.infer(),
            Command::Report => self.report(),
        }
    }

    fn synth(&self) -> Result<()> {
        let s = synthcity::synthesize(&self.config.city_config())?;
        if s.truth.clipped_cells > 0 {
            log::warn!("dispersion clipped {} negative cells", s.truth.clipped_cells);
        }
        let dir = self.data_dir();
        synthcity::write_city_files(&dir, &s.city, &s.sensors, &s.truth, &self.header())?;
        log::info!(
            "synthetic city {}x{}x{} h written to {}",
            s.city.spec.width,
            s.city.spec.height,
            s.city.spec.num_hours,
            dir.display()
        );
        Ok(())
    }

    fn ingest(&self) -> Result<()> {
        let spec = self.spec()?;
        let inputs = self.inputs()?;
        let fixed = ingest::fixed_labels(&inputs.fixed, &spec, &inputs.stations);
        let aggs = ingest::aggregate_mobile(&inputs.mobile, &spec);
        pipeline::write_labels(&self.artifact(FIXED_LABELS_FILE), &fixed, &self.header())?;
        pipeline::write_aggregates(&self.artifact(AGGREGATES_FILE), &aggs, &self.header())?;
        log::info!("{} fixed labels, {} mobile aggregates", fixed.len(), aggs.len());
        Ok(())
    }

    fn calibrate(&self) -> Result<()> {
        let spec = self.spec()?;
        let p = self.require(&[FIXED_LABELS_FILE, AGGREGATES_FILE])?;
        let fixed = pipeline::load_labels(&p[0])?;
        let aggs = pipeline::load_aggregates(&p[1])?;
        let (model, mobile) = if aggs.is_empty() {
            log::warn!("no mobile aggregates; labels are fixed stations only");
            (CalibrationModel::identity(), Vec::new())
        } else {
            let model = fit_calibration(&spec, &pair_colocated(&fixed, &aggs))?;
            log::info!(
                "calibration: {} pairs, R² = {:.3}, p = {:.3e}",
                model.n_pairs,
                model.r_squared,
                model.p_value
            );
            let (labels, _) = apply_calibration(&model, &spec, &aggs);
            (model, labels)
        };
        model.save(&self.artifact(CALIBRATION_FILE), &self.header())?;
        let labels = build_label_set(&fixed, &mobile)?;
        if labels.is_empty() {
            return Err(Error::Input("no labels inside the grid and study window".into()));
        }
        pipeline::write_labels(&self.artifact(LABELS_FILE), labels.labels(), &self.header())
    }

    fn featurize(&self) -> Result<()> {
        let labels = self.labels()?;
        let ctx = self.context(&self.inputs()?)?;
        let m = ctx.assemble(&labels.keys(), self.config.train_features)?;
        m.write_csv(&self.artifact(FEATURES_FILE), &self.header())?;
        m.write_metadata(&self.artifact(FEATURES_META_FILE), &self.header())?;
        log::info!("{} rows x {} features ({})", m.n_rows(), m.n_cols(), self.config.train_features);
        Ok(())
    }

    fn train(&self) -> Result<()> {
        let p = self.require(&[FEATURES_FILE, FEATURES_META_FILE, LABELS_FILE])?;
        let m = FeatureMatrix::read_csv(&p[0], &p[1])?;
        let by_key: HashMap<_, f64> = self.labels()?.labels().iter().map(|l| (l.key(), l.pm25)).collect();
        let y: Vec<f64> = m
            .keys()
            .iter()
            .map(|k| {
                by_key
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("feature row {k} has no label")))
            })
            .collect::<Result<_>>()?;
        let model = gbdt::fit(&m, &y, &self.config.eval_params().gbdt)?;
        model.save(&self.artifact(MODEL_FILE), &self.header())?;
        let imp = model.feature_importance(&m.categories());
        let mut csv = comment_lines(&self.header());
        csv.push_str(&imp.to_csv(&m.categories()));
        self.write(report::IMPORTANCE_FILE, &csv)?;
        if let Some((s, w)) = imp.macro_stations.first() {
            log::info!("top external station {s} ({w:.3})");
        }
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        let labels = self.labels()?;
        let ctx = self.context(&self.inputs()?)?;
        let e = &self.config.eval;
        let folds = kfold_split(&labels, e.folds, self.config.fold_seed(), e.cv_mode)?;
        let results = evaluate_table(&ctx, &labels, &folds, &TABLE_ROWS, &self.config.eval_params())?;
        for r in &results {
            log::info!("{} {}: R² = {:.3}", r.method, r.selection, r.mean.r_squared);
        }
        self.write(report::TABLE_FILE, &table_csv(&results, &self.header()))?;
        Ok(())
    }

    fn ablate(&self) -> Result<()> {
        let labels = self.labels()?;
        let ctx = self.context(&self.inputs()?)?;
        let params = self.config.eval_params();
        let mut points = Vec::new();
        for seed in self.config.ablation_seeds() {
            let (pool, test) = holdout_split(&labels, self.config.eval.test_fraction, seed)?;
            points.extend(coverage_ablation(
                &ctx,
                &pool,
                &test,
                &ABLATION_FRACTIONS,
                &[seed],
                self.config.train_features,
                &params,
            )?);
        }
        self.write(report::ABLATION_FILE, &ablation_csv(&points, &self.header()))?;
        Ok(())
    }

    fn infer(&self) -> Result<()> {
        let p = self.require(&[MODEL_FILE])?;
        let model = GbdtModel::load(&p[0])?;
        let ctx = self.context(&self.inputs()?)?;
        let dir = self.artifact(report::RASTER_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let header = self.header();
        infer_hours(&model, &ctx, self.config.train_features, 0..ctx.spec.num_hours, |f| {
            report::write_raster_csv(&dir.join(report::raster_file(f.t)), &f, &header)
        })?;
        log::info!("{} hourly rasters written to {}", ctx.spec.num_hours, dir.display());
        Ok(())
    }

    fn report(&self) -> Result<()> {
        let meteo = self.data_dir().join(synthcity::METEO_FILE);
        let out = report::emit_report(&self.out, &meteo, &self.header())?;
        log::info!("{} written ({} images)", out.summary.display(), out.images);
        Ok(())
    }
}

fn comment_lines(header: &[String]) -> String {
    header.iter().map(|c| format!("# {c}\n")).collect()
}

/// The single line printed for a failed run.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} msg={msg:?}", e.kind())
}

/// Parse-free entry point used by the binary and tests.
pub fn run(cli: &Cli) -> Result<()> {
    Run::new(cli)?.execute(cli.command)
}

/// Convenience for running a stage against an output directory in-process.
pub fn run_stage(out: &Path, config: Option<&Path>, seed: Option<u64>, command: Command) -> Result<()> {
    run(&Cli {
        config: config.map(Path::to_path_buf),
        seed,
        out: out.to_path_buf(),
        quiet: true,
        command,
    })
}
