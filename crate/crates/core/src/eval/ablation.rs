use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::cv::{predict_split, EvalParams, Method};
use super::{compute_metrics, Metrics};
use crate::error::{Error, Result};
use crate::featurize::{FeatureContext, FeatureSet};
use crate::grid::{Label, LabelSet, LabelSource, SampleKey};
use crate::rng::{self, mix_seed};

/// Mobile coverage levels, percent.
pub const ABLATION_FRACTIONS: [u32; 6] = [0, 20, 40, 60, 80, 100];

const HOLDOUT_SALT: u64 = 0x7E57;
const MOBILE_SALT: u64 = 0x30B1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationPoint {
    pub fraction: u32,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Seeded split into a training pool and a held-out test set holding
/// `round(test_fraction · n)` labels.
pub fn holdout_split(labels: &LabelSet, test_fraction: f64, seed: u64) -> Result<(LabelSet, LabelSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.shuffle(&mut rng::rng(seed, HOLDOUT_SALT));
    let n_test = (test_fraction * labels.len() as f64).round() as usize;
    let (test, pool) = idx.split_at(n_test);
    Ok((labels.subset(pool), labels.subset(test)))
}

/// For each seed and coverage level `x`, train on every fixed label of the
/// pool plus a seeded `x`% of its mobile labels and score on `test`.
/// Mobile subsets are nested: each level extends the previous one.
pub fn coverage_ablation(
    ctx: &FeatureContext,
    pool: &LabelSet,
    test: &LabelSet,
    fractions: &[u32],
    seeds: &[u64],
    selection: FeatureSet,
    params: &EvalParams,
) -> Result<Vec<AblationPoint>> {
    if let Some(f) = fractions.iter().find(|f| **f > 100) {
        return Err(Error::Config(format!("coverage fraction {f} outside [0, 100]")));
    }
    let held: HashSet<SampleKey> = test.labels().iter().map(Label::key).collect();
    if pool.labels().iter().any(|l| held.contains(&l.key())) {
        return Err(Error::Input("test set overlaps the training pool".into()));
    }
    let fixed: Vec<Label> = pool
        .labels()
        .iter()
        .filter(|l| l.source == LabelSource::Fixed)
        .copied()
        .collect();
    let mobile: Vec<Label> = pool
        .labels()
        .iter()
        .filter(|l| l.source == LabelSource::MobileCalibrated)
        .copied()
        .collect();
    let test_keys = test.keys();
    let jobs: Vec<(u64, u32)> = seeds
        .iter()
        .flat_map(|s| fractions.iter().map(move |f| (*s, *f)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, fraction)| {
            let mut order = mobile.clone();
            order.shuffle(&mut rng::rng(seed, MOBILE_SALT));
            let take = (fraction as f64 / 100.0 * order.len() as f64).round() as usize;
            let mut train = fixed.clone();
            train.extend_from_slice(&order[..take]);
            let train = LabelSet::new(train)?;
            let gbdt_seed = mix_seed(params.gbdt.seed, seed);
            let preds =
                predict_split(ctx, &train, &test_keys, Method::DeepMaps, selection, params, gbdt_seed)?;
            let (mut p, mut y) = (Vec::new(), Vec::new());
            for (pred, l) in preds.iter().zip(test.labels()) {
                if let Some(v) = pred {
                    p.push(*v);
                    y.push(l.pm25);
                }
            }
            Ok(AblationPoint {
                fraction,
                seed,
                metrics: compute_metrics(&p, &y)?,
            })
        })
        .collect()
}

/// `fraction,rmse,smape,r2,seed`.
pub fn ablation_csv(points: &[AblationPoint], header_comment: &[String]) -> String {
    let mut s = String::new();
    for c in header_comment {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str("fraction,rmse,smape,r2,seed\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{}",
            p.fraction, p.metrics.rmse, p.metrics.smape, p.metrics.r_squared, p.seed
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellIndex;

    fn labels() -> LabelSet {
        LabelSet::new(
            (0..100)
                .map(|i| Label {
                    cell: CellIndex::new(i % 10, i / 10),
                    t: 0,
                    pm25: i as f64,
                    source: if i % 4 == 0 {
                        LabelSource::Fixed
                    } else {
                        LabelSource::MobileCalibrated
                    },
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn holdout_is_disjoint_and_sized() {
        let l = labels();
        let (pool, test) = holdout_split(&l, 0.15, 3).unwrap();
        assert_eq!(test.len(), 15);
        assert_eq!(pool.len(), 85);
        let t: HashSet<SampleKey> = test.keys().into_iter().collect();
        assert!(pool.keys().iter().all(|k| !t.contains(k)));
        assert_eq!(holdout_split(&l, 0.15, 3).unwrap().1, test);
        assert!(holdout_split(&l, 1.5, 3).is_err());
    }

    #[test]
    fn csv_format() {
        let p = AblationPoint {
            fraction: 20,
            seed: 4,
            metrics: Metrics {
                rmse: 1.5,
                smape: 3.0,
                r_squared: 0.25,
            },
        };
        assert_eq!(
            ablation_csv(&[p], &[]),
            "fraction,rmse,smape,r2,seed\n20,1.500000,3.000000,0.250000,4\n"
        );
    }
}
