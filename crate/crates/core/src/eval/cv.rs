use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use super::{compute_metrics, FoldAssignment, Metrics};
use crate::baselines::{fit_variogram_pooled, idw_interpolate, Kriging, KnnRegressor, Sample};
use crate::error::{Error, Result};
use crate::featurize::{FeatureContext, FeatureSet};
use crate::gbdt::{self, GbdtParams};
use crate::grid::{GridSpec, LabelSet, SampleKey};
use crate::rng::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    DeepMaps,
    Idw,
    Kriging,
    Knn,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::DeepMaps => "deep_maps",
            Method::Idw => "idw",
            Method::Kriging => "kriging",
            Method::Knn => "knn",
        }
    }

    /// IDW and kriging use cell coordinates only.
    pub fn is_spatial(self) -> bool {
        matches!(self, Method::Idw | Method::Kriging)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep_maps" => Ok(Method::DeepMaps),
            "idw" => Ok(Method::Idw),
            "kriging" => Ok(Method::Kriging),
            "knn" => Ok(Method::Knn),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Rows of the method comparison table.
pub const TABLE_ROWS: [(Method, FeatureSet); 9] = [
    (Method::Idw, FeatureSet::EMPTY),
    (Method::Kriging, FeatureSet::EMPTY),
    (Method::Knn, FeatureSet::L),
    (Method::Knn, FeatureSet::LM),
    (Method::DeepMaps, FeatureSet::L),
    (Method::DeepMaps, FeatureSet::LM),
    (Method::DeepMaps, FeatureSet::N),
    (Method::DeepMaps, FeatureSet::NM),
    (Method::DeepMaps, FeatureSet::LMN),
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub gbdt: GbdtParams,
    pub idw_power: f64,
    pub knn_k: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            gbdt: GbdtParams::default(),
            idw_power: 2.0,
            knn_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub method: Method,
    /// `FeatureSet::EMPTY` for the spatial methods.
    pub selection: FeatureSet,
    pub per_fold: Vec<Metrics>,
    /// Mean of the per-fold metrics.
    pub mean: Metrics,
    /// Metrics over all held-out predictions together.
    pub pooled: Metrics,
    pub n_predicted: usize,
    /// Held-out labels that could not be featurized.
    pub n_masked: usize,
}

/// Interpolate each test key from the training labels of the same hour.
/// Kriging uses one exponential variogram fitted to within-hour pairs
/// pooled over all training hours. Hours without training labels fall back
/// to the global training mean.
pub fn spatial_predict(
    spec: &GridSpec,
    train: &LabelSet,
    test_keys: &[SampleKey],
    method: Method,
    idw_power: f64,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Input("spatial interpolation needs training labels".into()));
    }
    let mut by_hour: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for l in train.labels() {
        let (x, y) = spec.cell_center_km(l.cell);
        by_hour.entry(l.t).or_default().push(Sample::new(x, y, l.pm25));
    }
    let variogram = match method {
        Method::Kriging => {
            let groups: Vec<&[Sample]> = by_hour.values().map(Vec::as_slice).collect();
            Some(fit_variogram_pooled(&groups)?)
        }
        Method::Idw => None,
        other => return Err(Error::Config(format!("{other} is not a spatial method"))),
    };
    let global_mean = train.values().iter().sum::<f64>() / train.len() as f64;
    let mut test_by_hour: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, k) in test_keys.iter().enumerate() {
        test_by_hour.entry(k.t).or_default().push(i);
    }
    let blocks: Vec<Result<Vec<(usize, f64)>>> = test_by_hour
        .par_iter()
        .map(|(t, idx)| {
            let Some(sources) = by_hour.get(t) else {
                return Ok(idx.iter().map(|&i| (i, global_mean)).collect());
            };
            let centre = |i: usize| {
                let (x, y) = spec.cell_center_km(test_keys[i].cell);
                crate::baselines::Point::new(x, y)
            };
            match variogram {
                Some(model) => {
                    let k = Kriging::new(sources, model)?;
                    Ok(idx.iter().map(|&i| (i, k.predict(centre(i)))).collect())
                }
                None => idx
                    .iter()
                    .map(|&i| Ok((i, idw_interpolate(sources, centre(i), idw_power)?)))
                    .collect(),
            }
        })
        .collect();
    let missing: usize = test_by_hour
        .iter()
        .filter(|(t, _)| !by_hour.contains_key(t))
        .map(|(_, v)| v.len())
        .sum();
    if missing > 0 {
        log::debug!("{method}: {missing} test keys in hours without training labels");
    }
    let mut out = vec![0.0; test_keys.len()];
    for b in blocks {
        for (i, v) in b? {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Fit on `train`, predict `test_keys`; `None` where the key cannot be
/// featurized.
fn feature_predict(
    ctx: &FeatureContext,
    train: &LabelSet,
    test_keys: &[SampleKey],
    method: Method,
    selection: FeatureSet,
    params: &EvalParams,
    gbdt_seed: u64,
) -> Result<Vec<Option<f64>>> {
    if selection.is_empty() {
        return Err(Error::Config(format!("{method} needs a non-empty feature selection")));
    }
    let (tm, _) = ctx.assemble_masked(&train.keys(), selection)?;
    if tm.n_rows() == 0 {
        return Err(Error::Input("no featurizable training labels".into()));
    }
    let values: HashMap<SampleKey, f64> = train.labels().iter().map(|l| (l.key(), l.pm25)).collect();
    let y: Vec<f64> = tm.keys().iter().map(|k| values[k]).collect();
    let (qm, _) = ctx.assemble_masked(test_keys, selection)?;
    let preds = match method {
        Method::DeepMaps => {
            let mut p = params.gbdt.clone();
            p.seed = gbdt_seed;
            gbdt::fit(&tm, &y, &p)?.predict(&qm)?
        }
        Method::Knn => KnnRegressor::fit(&tm, &y, params.knn_k)?.predict(&qm)?,
        other => return Err(Error::Config(format!("{other} does not use features"))),
    };
    let by_key: HashMap<SampleKey, f64> = qm.keys().iter().copied().zip(preds).collect();
    Ok(test_keys.iter().map(|k| by_key.get(k).copied()).collect())
}

/// Held-out predictions for one train/test split.
pub(crate) fn predict_split(
    ctx: &FeatureContext,
    train: &LabelSet,
    test_keys: &[SampleKey],
    method: Method,
    selection: FeatureSet,
    params: &EvalParams,
    gbdt_seed: u64,
) -> Result<Vec<Option<f64>>> {
    if method.is_spatial() {
        Ok(spatial_predict(&ctx.spec, train, test_keys, method, params.idw_power)?
            .into_iter()
            .map(Some)
            .collect())
    } else {
        feature_predict(ctx, train, test_keys, method, selection, params, gbdt_seed)
    }
}

fn mean_metrics(m: &[Metrics]) -> Metrics {
    let n = m.len() as f64;
    Metrics {
        rmse: m.iter().map(|x| x.rmse).sum::<f64>() / n,
        smape: m.iter().map(|x| x.smape).sum::<f64>() / n,
        r_squared: m.iter().map(|x| x.r_squared).sum::<f64>() / n,
    }
}

/// Train on every other fold and score each held-out fold in turn.
pub fn cross_validate(
    ctx: &FeatureContext,
    labels: &LabelSet,
    folds: &FoldAssignment,
    method: Method,
    selection: FeatureSet,
    params: &EvalParams,
) -> Result<CvResult> {
    if folds.folds.len() != labels.len() {
        return Err(Error::Shape("fold assignment does not match the label set".into()));
    }
    let selection = if method.is_spatial() { FeatureSet::EMPTY } else { selection };
    let outcomes: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let (train_idx, test_idx) = folds.split(f);
            let train = labels.subset(&train_idx);
            let test = labels.subset(&test_idx);
            let test_keys = test.keys();
            let held: HashSet<SampleKey> = test_keys.iter().copied().collect();
            if train.labels().iter().any(|l| held.contains(&l.key())) {
                return Err(Error::Input(format!("fold {f}: validation label in training set")));
            }
            let seed = mix_seed(params.gbdt.seed, f as u64);
            let preds = predict_split(ctx, &train, &test_keys, method, selection, params, seed)?;
            let mut p = Vec::with_capacity(preds.len());
            let mut y = Vec::with_capacity(preds.len());
            for (pred, l) in preds.iter().zip(test.labels()) {
                if let Some(v) = pred {
                    p.push(*v);
                    y.push(l.pm25);
                }
            }
            let masked = preds.len() - p.len();
            Ok((p, y, masked))
        })
        .collect();
    let mut per_fold = Vec::with_capacity(folds.k);
    let (mut all_p, mut all_y, mut n_masked) = (Vec::new(), Vec::new(), 0);
    for o in outcomes {
        let (p, y, masked) = o?;
        per_fold.push(compute_metrics(&p, &y)?);
        all_p.extend(p);
        all_y.extend(y);
        n_masked += masked;
    }
    Ok(CvResult {
        method,
        selection,
        mean: mean_metrics(&per_fold),
        pooled: compute_metrics(&all_p, &all_y)?,
        per_fold,
        n_predicted: all_p.len(),
        n_masked,
    })
}

/// Cross-validate every `(method, selection)` row.
pub fn evaluate_table(
    ctx: &FeatureContext,
    labels: &LabelSet,
    folds: &FoldAssignment,
    rows: &[(Method, FeatureSet)],
    params: &EvalParams,
) -> Result<Vec<CvResult>> {
    rows.iter()
        .map(|(m, s)| cross_validate(ctx, labels, folds, *m, *s, params))
        .collect()
}

/// `method,features,rmse,smape,r2` with fold-mean metrics.
pub fn table_csv(results: &[CvResult], header_comment: &[String]) -> String {
    let mut s = String::new();
    for c in header_comment {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str("method,features,rmse,smape,r2\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            r.method, r.selection, r.mean.rmse, r.mean.smape, r.mean.r_squared
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{kfold_split, CvMode};
    use crate::featurize::{Category, DynamicSeries, StaticVolume};
    use crate::grid::{CellIndex, Label, LabelSource};

    /// Labels driven by one static and one dynamic channel.
    fn toy() -> (FeatureContext, LabelSet) {
        let spec = GridSpec::new(40.0, 116.0, 1.0, 8, 8, 0, 12).unwrap();
        let n = 64;
        let sv: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64).collect();
        let ds: Vec<f64> = (0..12 * n).map(|i| ((i / n) as f64).sin() * 3.0 + (i % 5) as f64).collect();
        let ctx = FeatureContext::new(
            spec,
            StaticVolume::new(8, 8, vec!["geo_a".into()], vec![Category::Geography], sv.clone()).unwrap(),
            DynamicSeries::new(8, 8, 12, vec!["vitality_b".into()], vec![Category::Vitality], ds.clone())
                .unwrap(),
        )
        .unwrap();
        let mut labels = Vec::new();
        for t in 0..12 {
            for c in 0..n {
                if (c + t) % 3 == 0 {
                    labels.push(Label {
                        cell: CellIndex::new(c % 8, c / 8),
                        t,
                        pm25: 20.0 + 4.0 * sv[c] + 2.0 * ds[t * n + c],
                        source: LabelSource::Fixed,
                    });
                }
            }
        }
        (ctx, LabelSet::new(labels).unwrap())
    }

    fn quick() -> EvalParams {
        EvalParams {
            gbdt: GbdtParams {
                num_trees: 150,
                learning_rate: 0.2,
                min_samples_leaf: 3,
                ..GbdtParams::default()
            },
            ..EvalParams::default()
        }
    }

    #[test]
    fn deep_maps_beats_mean_predictor() {
        let (ctx, labels) = toy();
        let folds = kfold_split(&labels, 5, 1, CvMode::Random).unwrap();
        let r = cross_validate(&ctx, &labels, &folds, Method::DeepMaps, FeatureSet::L, &quick()).unwrap();
        assert!(r.pooled.r_squared > 0.5, "{:?}", r.pooled);
        assert_eq!(r.per_fold.len(), 5);
        assert_eq!(r.n_predicted, labels.len());
    }

    #[test]
    fn all_methods_run() {
        let (ctx, labels) = toy();
        let folds = kfold_split(&labels, 3, 2, CvMode::GridGrouped).unwrap();
        for (m, s) in [
            (Method::Idw, FeatureSet::EMPTY),
            (Method::Kriging, FeatureSet::EMPTY),
            (Method::Knn, FeatureSet::L),
        ] {
            let r = cross_validate(&ctx, &labels, &folds, m, s, &quick()).unwrap();
            assert!(r.pooled.rmse.is_finite());
        }
        let err = cross_validate(&ctx, &labels, &folds, Method::Knn, FeatureSet::EMPTY, &quick());
        assert!(matches!(err, Err(Error::Config(_))));
        let err = cross_validate(&ctx, &labels, &folds, Method::DeepMaps, FeatureSet::N, &quick());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn spatial_uses_same_hour_only() {
        let spec = GridSpec::new(40.0, 116.0, 1.0, 4, 4, 0, 2).unwrap();
        let lab = |x, t, v| Label {
            cell: CellIndex::new(x, 0),
            t,
            pm25: v,
            source: LabelSource::Fixed,
        };
        let train = LabelSet::new(vec![lab(0, 0, 10.0), lab(2, 0, 20.0), lab(1, 1, 99.0)]).unwrap();
        let q = [SampleKey::new(CellIndex::new(1, 0), 0)];
        let p = spatial_predict(&spec, &train, &q, Method::Idw, 2.0).unwrap();
        assert!((p[0] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn csv_rows() {
        let m = Metrics {
            rmse: 1.0,
            smape: 2.0,
            r_squared: 0.5,
        };
        let r = CvResult {
            method: Method::Idw,
            selection: FeatureSet::EMPTY,
            per_fold: vec![m],
            mean: m,
            pooled: m,
            n_predicted: 1,
            n_masked: 0,
        };
        let s = table_csv(&[r], &["config_hash=x".into()]);
        assert_eq!(s, "# config_hash=x\nmethod,features,rmse,smape,r2\nidw,-,1.000000,2.000000,0.500000\n");
    }
}
