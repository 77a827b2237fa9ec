//! Gradient-boosted regression trees with squared-error loss.
//!
//! Each stage fits a depth-limited tree to the current residuals using
//! histogram split finding over equal-frequency bins, and the ensemble
//! prediction is `base_score + learning_rate × Σ trees`. Feature importance
//! is the summed split gain (loss reduction) per column, normalised.

mod binning;
mod io;
mod tree;

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featurize::{macro_column_station, Category, FeatureMatrix};
use crate::rng;

pub use io::MODEL_MAGIC;
pub use tree::{Tree, TreeNode};

use binning::BinnedMatrix;
use tree::{predict_binned, GrowParams, TreeBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub row_subsample: f64,
    pub feature_subsample: f64,
    pub histogram_bins: usize,
    pub seed: u64,
    /// Stop after this many stages without validation improvement; `0`
    /// disables early stopping.
    pub early_stopping_rounds: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_trees: 400,
            max_depth: 6,
            learning_rate: 0.05,
            min_samples_leaf: 20,
            row_subsample: 0.8,
            feature_subsample: 0.8,
            histogram_bins: 64,
            seed: 0,
            early_stopping_rounds: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees < 1 || self.max_depth < 1 {
            return Err(Error::Config("num_trees and max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("learning_rate must be in (0, 1]".into()));
        }
        for (name, v) in [
            ("row_subsample", self.row_subsample),
            ("feature_subsample", self.feature_subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1]")));
            }
        }
        if !(2..=256).contains(&self.histogram_bins) {
            return Err(Error::Config("histogram_bins must be in [2, 256]".into()));
        }
        Ok(())
    }
}

/// A fitted boosted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub params: GbdtParams,
    /// Column names referenced by tree nodes, by index.
    pub columns: Vec<String>,
    pub trees: Vec<Tree>,
    /// Training MSE before the first tree and after each stage.
    pub train_mse: Vec<f64>,
}

/// Normalised loss-reduction weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    /// Sorted by weight descending, then name.
    pub columns: Vec<(String, f64)>,
    pub categories: BTreeMap<Category, f64>,
    /// Macro columns summed per external station, sorted descending.
    pub macro_stations: Vec<(String, f64)>,
}

fn check_finite(matrix: &FeatureMatrix, response: &[f64]) -> Result<()> {
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("response has non-finite values".into()));
    }
    for i in 0..matrix.n_rows() {
        if matrix.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "feature row {} has non-finite values",
                matrix.keys()[i]
            )));
        }
    }
    Ok(())
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Fit a boosted ensemble to `response`.
pub fn fit(matrix: &FeatureMatrix, response: &[f64], params: &GbdtParams) -> Result<GbdtModel> {
    fit_inner(matrix, response, None, params)
}

/// Fit with validation-based early stopping when
/// `params.early_stopping_rounds > 0`; the ensemble is truncated to the
/// stage with the lowest validation MSE.
pub fn fit_with_validation(
    matrix: &FeatureMatrix,
    response: &[f64],
    valid: &FeatureMatrix,
    valid_response: &[f64],
    params: &GbdtParams,
) -> Result<GbdtModel> {
    if valid.n_rows() != valid_response.len() {
        return Err(Error::Shape("validation rows and response differ in length".into()));
    }
    fit_inner(matrix, response, Some((valid, valid_response)), params)
}

fn fit_inner(
    matrix: &FeatureMatrix,
    response: &[f64],
    valid: Option<(&FeatureMatrix, &[f64])>,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    params.validate()?;
    let n = matrix.n_rows();
    if n != response.len() {
        return Err(Error::Shape(format!(
            "{n} feature rows but {} responses",
            response.len()
        )));
    }
    if n < 2 {
        return Err(Error::Input("need at least two training rows".into()));
    }
    check_finite(matrix, response)?;

    let columns: Vec<String> = matrix.column_names().iter().map(|s| s.to_string()).collect();
    let base_score = response.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut model = GbdtModel {
        base_score,
        learning_rate: params.learning_rate,
        params: params.clone(),
        columns,
        trees: Vec::new(),
        train_mse: vec![mse(response, &pred)],
    };
    if response.iter().all(|v| *v == response[0]) {
        return Ok(model);
    }

    let binned = BinnedMatrix::new(matrix, params.histogram_bins);
    if (0..binned.edges.len()).all(|j| binned.n_bins(j) < 2) {
        // No split is possible anywhere.
        return Ok(model);
    }
    let name_keys: Vec<u64> = model.columns.iter().map(|c| rng::hash_str(c)).collect();
    let p = model.columns.len();
    let n_feat = ((params.feature_subsample * p as f64).round() as usize).clamp(1, p);
    let n_rows = ((params.row_subsample * n as f64).round() as usize).clamp(1, n);

    let mut valid_state = match valid {
        Some((vm, vy)) => Some((vm, vy, column_map(&model.columns, vm)?, vec![base_score; vy.len()])),
        None => None,
    };
    let mut best = (f64::INFINITY, 0usize);

    let mut residual = vec![0.0; n];
    for stage in 0..params.num_trees {
        for i in 0..n {
            residual[i] = response[i] - pred[i];
        }
        let features = stage_features(&model.columns, &name_keys, params.seed, stage, n_feat);
        let rows: Vec<u32> = if n_rows == n {
            (0..n as u32).collect()
        } else {
            let mut r = rng::rng(params.seed, 0x5EED_0000 + stage as u64);
            let mut v: Vec<u32> = index::sample(&mut r, n, n_rows)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            v.sort_unstable();
            v
        };
        let builder = TreeBuilder {
            binned: &binned,
            residual: &residual,
            features: &features,
            params: GrowParams {
                max_depth: params.max_depth,
                min_samples_leaf: params.min_samples_leaf,
            },
        };
        let tree = builder.grow(rows);
        let lr = params.learning_rate;
        pred.par_iter_mut()
            .enumerate()
            .for_each(|(i, p)| *p += lr * predict_binned(&tree, &binned, i));
        model.train_mse.push(mse(response, &pred));

        if let Some((vm, vy, map, vpred)) = valid_state.as_mut() {
            for (i, vp) in vpred.iter_mut().enumerate() {
                *vp += lr * tree.predict_mapped(vm.row(i), map);
            }
            let vmse = mse(vy, vpred);
            model.trees.push(tree);
            if vmse < best.0 {
                best = (vmse, model.trees.len());
            } else if params.early_stopping_rounds > 0
                && model.trees.len() - best.1 >= params.early_stopping_rounds
            {
                break;
            }
        } else {
            model.trees.push(tree);
        }
    }
    if valid_state.is_some() && params.early_stopping_rounds > 0 && best.1 > 0 {
        model.trees.truncate(best.1);
        model.train_mse.truncate(best.1 + 1);
    }
    Ok(model)
}

/// Candidate features for one stage: the `k` columns with the smallest
/// name-seeded hash, so the draw is bound to names, not positions. Returned
/// in name order.
fn stage_features(columns: &[String], keys: &[u64], seed: u64, stage: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..columns.len()).collect();
    if k < columns.len() {
        let key = |j: usize| rng::mix_seed(seed ^ keys[j], stage as u64);
        idx.sort_by(|&a, &b| key(a).cmp(&key(b)).then_with(|| columns[a].cmp(&columns[b])));
        idx.truncate(k);
    }
    idx.sort_by(|&a, &b| columns[a].cmp(&columns[b]));
    idx
}

fn column_map(columns: &[String], matrix: &FeatureMatrix) -> Result<Vec<usize>> {
    columns
        .iter()
        .map(|c| {
            matrix
                .column_index(c)
                .ok_or_else(|| Error::Schema(format!("missing feature column `{c}`")))
        })
        .collect()
}

impl GbdtModel {
    /// Model with no trees; predicts `base_score` everywhere.
    pub fn constant(base_score: f64, columns: Vec<String>) -> Self {
        GbdtModel {
            base_score,
            learning_rate: 1.0,
            params: GbdtParams::default(),
            columns,
            trees: Vec::new(),
            train_mse: Vec::new(),
        }
    }

    /// Raw predictions (no clamping).
    pub fn predict(&self, rows: &FeatureMatrix) -> Result<Vec<f64>> {
        let used = self.used_columns();
        let map: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| match rows.column_index(c) {
                Some(i) => Ok(i),
                None if !used[j] => Ok(usize::MAX),
                None => Err(Error::Schema(format!("missing feature column `{c}`"))),
            })
            .collect::<Result<_>>()?;
        Ok((0..rows.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row_mapped(rows.row(i), &map))
            .collect())
    }

    /// Prediction for one row in model column order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    fn predict_row_mapped(&self, row: &[f64], map: &[usize]) -> f64 {
        self.base_score
            + self.learning_rate
                * self
                    .trees
                    .iter()
                    .map(|t| t.predict_mapped(row, map))
                    .sum::<f64>()
    }

    fn used_columns(&self) -> Vec<bool> {
        let mut used = vec![false; self.columns.len()];
        for t in &self.trees {
            for n in &t.nodes {
                if let TreeNode::Split { feature, .. } = n {
                    used[*feature] = true;
                }
            }
        }
        used
    }

    /// Summed split gain per column, normalised to 1, rolled up by
    /// `grouping` and by external station for macro columns.
    pub fn feature_importance(&self, grouping: &BTreeMap<String, Category>) -> Importance {
        let mut raw = vec![0.0; self.columns.len()];
        for t in &self.trees {
            for n in &t.nodes {
                if let TreeNode::Split { feature, gain, .. } = n {
                    raw[*feature] += gain;
                }
            }
        }
        let total: f64 = raw.iter().sum();
        let mut columns: Vec<(String, f64)> = if total > 0.0 {
            self.columns
                .iter()
                .zip(&raw)
                .filter(|(_, g)| **g > 0.0)
                .map(|(c, g)| (c.clone(), g / total))
                .collect()
        } else {
            Vec::new()
        };
        columns.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut categories = BTreeMap::new();
        let mut stations: BTreeMap<String, f64> = BTreeMap::new();
        for (c, w) in &columns {
            let cat = grouping.get(c).copied().unwrap_or(Category::Other);
            *categories.entry(cat).or_insert(0.0) += w;
            if let Some(st) = macro_column_station(c) {
                *stations.entry(st.to_string()).or_insert(0.0) += w;
            }
        }
        let mut macro_stations: Vec<(String, f64)> = stations.into_iter().collect();
        macro_stations.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Importance {
            columns,
            categories,
            macro_stations,
        }
    }
}

impl Importance {
    /// CSV `column,category,weight`.
    pub fn to_csv(&self, grouping: &BTreeMap<String, Category>) -> String {
        let mut s = String::from("column,category,weight\n");
        for (c, w) in &self.columns {
            let cat = grouping.get(c).copied().unwrap_or(Category::Other);
            s.push_str(&format!("{c},{cat},{w}\n"));
        }
        s
    }
}
