//! Metrics, k-fold cross-validation, the mobile-coverage ablation and
//! city-wide inference.

mod ablation;
mod cv;
mod infer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::grid::LabelSet;
use crate::rng;

pub use ablation::{ablation_csv, coverage_ablation, holdout_split, AblationPoint, ABLATION_FRACTIONS};
pub use cv::{
    cross_validate, evaluate_table, spatial_predict, table_csv, CvResult, EvalParams, Method,
    TABLE_ROWS,
};
pub use infer::{infer_city, infer_hours};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    /// Percent, in `[0, 200]`.
    pub smape: f64,
    pub r_squared: f64,
}

/// RMSE, SMAPE (mean of `|ŷ − y|` over `(|y| + |ŷ|)/2`, times 100, with
/// `0/0` terms counted as 0) and `R² = 1 − SSE/SST` (0 when `SST = 0`).
pub fn compute_metrics(predictions: &[f64], truths: &[f64]) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Input("metrics need at least one prediction".into()));
    }
    let n = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / n;
    let (mut sse, mut sst, mut sm) = (0.0, 0.0, 0.0);
    for (p, y) in predictions.iter().zip(truths) {
        let d = p - y;
        sse += d * d;
        sst += (y - mean) * (y - mean);
        let den = 0.5 * (y.abs() + p.abs());
        if den > 0.0 {
            sm += d.abs() / den;
        }
    }
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        smape: 100.0 * sm / n,
        r_squared: if sst > 0.0 { 1.0 - sse / sst } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    Random,
    GridGrouped,
}

impl fmt::Display for CvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvMode::Random => "random",
            CvMode::GridGrouped => "grid_grouped",
        })
    }
}

impl FromStr for CvMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CvMode::Random),
            "grid_grouped" => Ok(CvMode::GridGrouped),
            other => Err(Error::Config(format!("unknown cv mode `{other}`"))),
        }
    }
}

/// Fold id per label, in label-set order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    /// Label indices of fold `f` and of its complement.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &g) in self.folds.iter().enumerate() {
            if g == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

const FOLD_SALT: u64 = 0xF01D;

/// Random mode shuffles labels and deals them round-robin; grid-grouped
/// mode deals whole cells so that no cell spans two folds.
pub fn kfold_split(labels: &LabelSet, k: usize, seed: u64, mode: CvMode) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Input(format!("{} labels cannot fill {k} folds", labels.len())));
    }
    let mut r = rng::rng(seed, FOLD_SALT);
    let mut folds = vec![0; labels.len()];
    match mode {
        CvMode::Random => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut r);
            for (pos, i) in idx.into_iter().enumerate() {
                folds[i] = pos % k;
            }
        }
        CvMode::GridGrouped => {
            let mut cells: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for l in labels.labels() {
                cells.insert((l.cell.y, l.cell.x), 0);
            }
            if cells.len() < k {
                return Err(Error::Input(format!(
                    "{} distinct cells cannot fill {k} grouped folds",
                    cells.len()
                )));
            }
            let mut order: Vec<(usize, usize)> = cells.keys().copied().collect();
            order.shuffle(&mut r);
            for (pos, c) in order.into_iter().enumerate() {
                cells.insert(c, pos % k);
            }
            for (i, l) in labels.labels().iter().enumerate() {
                folds[i] = cells[&(l.cell.y, l.cell.x)];
            }
        }
    }
    Ok(FoldAssignment { k, seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellIndex, Label, LabelSource};
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.rmse, m.smape, m.r_squared), (0.0, 0.0, 1.0));
    }

    #[test]
    fn hand_computed_case() {
        let m = compute_metrics(&[12.0, 16.0], &[10.0, 20.0]).unwrap();
        assert!((m.rmse - 10f64.sqrt()).abs() < 1e-12);
        // (2/11 + 4/18) / 2 * 100
        assert!((m.smape - (2.0 / 11.0 + 4.0 / 18.0) * 50.0).abs() < 1e-12);
        assert!((m.smape - 20.20202).abs() < 1e-4);
    }

    #[test]
    fn mean_predictor_and_degenerate_cases() {
        let y = [3.0, 5.0, 10.0];
        let m = compute_metrics(&[6.0; 3], &y).unwrap();
        assert!(m.r_squared.abs() < 1e-12);
        let z = compute_metrics(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(z.smape, 0.0);
        let flat = compute_metrics(&[1.0, 2.0], &[4.0, 4.0]).unwrap();
        assert_eq!(flat.r_squared, 0.0);
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn metric_invariants(
            pairs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..40),
            alpha in 0.1f64..10.0,
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let m = compute_metrics(&p, &y).unwrap();
            prop_assert!(m.rmse >= 0.0 && m.smape >= 0.0 && m.smape <= 200.0 + 1e-9 && m.r_squared <= 1.0);
            let swapped = compute_metrics(&y, &p).unwrap();
            prop_assert!((m.smape - swapped.smape).abs() < 1e-9);
            let ps: Vec<f64> = p.iter().map(|v| v * alpha).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * alpha).collect();
            let scaled = compute_metrics(&ps, &ys).unwrap();
            prop_assert!((scaled.rmse - alpha * m.rmse).abs() <= 1e-9 * (1.0 + alpha * m.rmse));
            let mut rp = p.clone();
            let mut ry = y.clone();
            rp.reverse();
            ry.reverse();
            let rev = compute_metrics(&rp, &ry).unwrap();
            prop_assert!((rev.rmse - m.rmse).abs() < 1e-9);
        }
    }

    fn labels(n: usize, cells: usize) -> LabelSet {
        LabelSet::new(
            (0..n)
                .map(|i| Label {
                    cell: CellIndex::new(i % cells, 0),
                    t: i / cells,
                    pm25: i as f64,
                    source: LabelSource::Fixed,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn random_folds_partition() {
        let l = labels(10, 10);
        let f = kfold_split(&l, 5, 3, CvMode::Random).unwrap();
        let mut sizes = [0; 5];
        for &g in &f.folds {
            sizes[g] += 1;
        }
        assert_eq!(sizes, [2; 5]);
        assert_eq!(f, kfold_split(&l, 5, 3, CvMode::Random).unwrap());
        assert_ne!(f.folds, kfold_split(&l, 5, 4, CvMode::Random).unwrap().folds);
    }

    #[test]
    fn fold_sizes_differ_by_at_most_one() {
        let l = labels(103, 7);
        let f = kfold_split(&l, 5, 9, CvMode::Random).unwrap();
        let mut sizes = [0; 5];
        for &g in &f.folds {
            sizes[g] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for g in 0..5 {
            let (train, test) = f.split(g);
            assert_eq!(train.len() + test.len(), 103);
        }
    }

    #[test]
    fn grouped_folds_keep_cells_together() {
        let l = labels(60, 6);
        let f = kfold_split(&l, 3, 1, CvMode::GridGrouped).unwrap();
        let mut cell_fold = std::collections::HashMap::new();
        for (lab, g) in l.labels().iter().zip(&f.folds) {
            let prev = cell_fold.insert(lab.cell, *g);
            assert!(prev.is_none() || prev == Some(*g));
        }
        assert!(kfold_split(&labels(20, 2), 3, 1, CvMode::GridGrouped).is_err());
    }

    #[test]
    fn fold_argument_checks() {
        assert!(kfold_split(&labels(10, 10), 1, 0, CvMode::Random).is_err());
        assert!(kfold_split(&labels(3, 3), 5, 0, CvMode::Random).is_err());
    }
}
