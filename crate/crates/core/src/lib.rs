//! Fine-grained urban PM2.5 inference from sparse fixed and mobile sensors.
//!
//! The pipeline snaps sensor readings to a city raster, calibrates mobile
//! readings against co-located reference stations, extracts local,
//! neighbouring (random mean-filter convolutions) and macro (time-shifted
//! external station) features, and fits gradient-boosted regression trees.
//! Baseline interpolators, a cross-validation harness and a synthetic city
//! with known ground truth sit alongside.

pub mod baselines;
pub mod calibrate;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod gbdt;
pub mod grid;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod synthcity;

pub use error::{Error, Result};
