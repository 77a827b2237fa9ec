use super::{Point, Sample};
use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};

/// Exponential semivariogram `γ(h) = c₀ + c₁(1 − exp(−3h/a))` for `h > 0`,
/// `γ(0) = 0` at zero separation of a point with itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramModel {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        self.nugget + self.partial_sill * (1.0 - (-3.0 * h / self.range).exp())
    }

    pub fn is_degenerate(&self) -> bool {
        self.nugget + self.partial_sill <= 0.0
    }
}

/// One lag bin of the empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalBin {
    pub lag: f64,
    pub gamma: f64,
    pub pairs: usize,
}

const MAX_BINS: usize = 12;
pub const MIN_VARIOGRAM_SOURCES: usize = 10;

/// Matheron estimator on up to twelve equal-width lag bins out to half the
/// largest separation. Empty bins are omitted; `lag` is the mean pair
/// distance in the bin.
pub fn empirical_variogram(sources: &[Sample]) -> Vec<EmpiricalBin> {
    empirical_variogram_pooled(&[sources])
}

/// As [`empirical_variogram`], pooling pairs formed within each group only
/// (for example, one group per hour).
pub fn empirical_variogram_pooled(groups: &[&[Sample]]) -> Vec<EmpiricalBin> {
    let mut max_d: f64 = 0.0;
    for sources in groups {
        for (i, a) in sources.iter().enumerate() {
            for b in &sources[i + 1..] {
                max_d = max_d.max(a.at.dist(&b.at));
            }
        }
    }
    let cutoff = 0.5 * max_d;
    if cutoff <= 0.0 {
        return Vec::new();
    }
    let width = cutoff / MAX_BINS as f64;
    let mut sums = [(0.0f64, 0.0f64, 0usize); MAX_BINS];
    for sources in groups {
        for (i, a) in sources.iter().enumerate() {
            for b in &sources[i + 1..] {
                let d = a.at.dist(&b.at);
                if d <= 0.0 || d > cutoff {
                    continue;
                }
                let k = ((d / width).ceil() as usize).clamp(1, MAX_BINS) - 1;
                let diff = a.value - b.value;
                sums[k].0 += d;
                sums[k].1 += diff * diff;
                sums[k].2 += 1;
            }
        }
    }
    sums.iter()
        .filter(|s| s.2 > 0)
        .map(|&(d, sq, n)| EmpiricalBin {
            lag: d / n as f64,
            gamma: sq / (2.0 * n as f64),
            pairs: n,
        })
        .collect()
}

/// Weighted least squares for `(c₀, c₁)` at a fixed range with both
/// parameters non-negative. Returns `(c₀, c₁, weighted SSE)`.
fn fit_sills(bins: &[EmpiricalBin], range: f64) -> (f64, f64, f64) {
    let f: Vec<f64> = bins.iter().map(|b| 1.0 - (-3.0 * b.lag / range).exp()).collect();
    let sse = |c0: f64, c1: f64| -> f64 {
        bins.iter()
            .zip(&f)
            .map(|(b, fk)| b.pairs as f64 * (b.gamma - c0 - c1 * fk).powi(2))
            .sum()
    };
    let (mut sw, mut swf, mut swff, mut swg, mut swfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, fk) in bins.iter().zip(&f) {
        let w = b.pairs as f64;
        sw += w;
        swf += w * fk;
        swff += w * fk * fk;
        swg += w * b.gamma;
        swfg += w * fk * b.gamma;
    }
    let mut candidates = Vec::with_capacity(4);
    let det = sw * swff - swf * swf;
    if det.abs() > 1e-14 * sw * swff.max(1e-300) {
        let c0 = (swff * swg - swf * swfg) / det;
        let c1 = (sw * swfg - swf * swg) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            candidates.push((c0, c1));
        }
    }
    if swff > 0.0 {
        candidates.push((0.0, (swfg / swff).max(0.0)));
    }
    candidates.push(((swg / sw).max(0.0), 0.0));
    candidates
        .into_iter()
        .map(|(c0, c1)| (c0, c1, sse(c0, c1)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one candidate")
}

/// Fit an exponential variogram by bin-count weighted least squares:
/// closed-form non-negative sills for each trial range, a log-spaced range
/// scan, then golden-section refinement.
pub fn fit_variogram(sources: &[Sample]) -> Result<VariogramModel> {
    fit_variogram_pooled(&[sources])
}

/// Fit one variogram to pairs pooled across groups.
pub fn fit_variogram_pooled(groups: &[&[Sample]]) -> Result<VariogramModel> {
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if total < MIN_VARIOGRAM_SOURCES {
        return Err(Error::Input(format!(
            "variogram fitting needs at least {MIN_VARIOGRAM_SOURCES} sources, got {total}"
        )));
    }
    let all = || groups.iter().flat_map(|g| g.iter());
    let first = all().next().expect("non-empty");
    if all().all(|s| s.at.dist(&first.at) == 0.0) {
        return Err(Error::Input("variogram fitting needs at least two distinct locations".into()));
    }
    let bins = empirical_variogram_pooled(groups);
    let max_lag = bins.iter().map(|b| b.lag).fold(0.0, f64::max);
    let min_lag = bins.iter().map(|b| b.lag).fold(f64::INFINITY, f64::min);
    if bins.is_empty() || bins.iter().all(|b| b.gamma == 0.0) {
        return Ok(VariogramModel {
            nugget: 0.0,
            partial_sill: 0.0,
            range: max_lag.max(1.0),
        });
    }
    let lo = (0.1 * min_lag).max(1e-6).ln();
    let hi = (10.0 * max_lag).ln();
    let steps = 120;
    let objective = |ln_a: f64| fit_sills(&bins, ln_a.exp()).2;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        let v = objective(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let step = (hi - lo) / steps as f64;
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..60 {
        if objective(c) < objective(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let ln_range = 0.5 * (a + b);
    let ln_range = if objective(ln_range) <= best.1 { ln_range } else { best.0 };
    let range = ln_range.exp();
    let (nugget, partial_sill, _) = fit_sills(&bins, range);
    Ok(VariogramModel {
        nugget,
        partial_sill,
        range,
    })
}

/// Ordinary kriging system factored once for a set of sources.
#[derive(Debug, Clone)]
pub struct Kriging {
    sources: Vec<Sample>,
    model: VariogramModel,
    lu: Option<Lu>,
}

impl Kriging {
    /// Duplicate locations are averaged before the system is assembled.
    pub fn new(sources: &[Sample], model: VariogramModel) -> Result<Kriging> {
        if sources.is_empty() {
            return Err(Error::Input("kriging needs at least one source".into()));
        }
        let sources = average_duplicates(sources);
        if model.is_degenerate() || sources.len() == 1 {
            return Ok(Kriging {
                sources,
                model,
                lu: None,
            });
        }
        let n = sources.len();
        let mut a = Matrix::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, model.gamma(sources[i].at.dist(&sources[j].at)));
            }
            a.set(i, n, 1.0);
            a.set(n, i, 1.0);
        }
        let lu = Lu::factor(a).ok_or_else(|| {
            Error::Singular(format!("ordinary kriging system with {n} sources is singular"))
        })?;
        Ok(Kriging {
            sources,
            model,
            lu: Some(lu),
        })
    }

    pub fn sources(&self) -> &[Sample] {
        &self.sources
    }

    /// Kriging weights (summing to one) for a query point.
    pub fn weights(&self, query: Point) -> Vec<f64> {
        let n = self.sources.len();
        match &self.lu {
            None => vec![1.0 / n as f64; n],
            Some(lu) => {
                let mut rhs: Vec<f64> = self
                    .sources
                    .iter()
                    .map(|s| self.model.gamma(s.at.dist(&query)))
                    .collect();
                rhs.push(1.0);
                let mut sol = lu.solve(&rhs);
                sol.truncate(n);
                sol
            }
        }
    }

    pub fn predict(&self, query: Point) -> f64 {
        if self.lu.is_none() {
            return self.sources.iter().map(|s| s.value).sum::<f64>() / self.sources.len() as f64;
        }
        self.weights(query)
            .iter()
            .zip(&self.sources)
            .map(|(w, s)| w * s.value)
            .sum()
    }
}

fn average_duplicates(sources: &[Sample]) -> Vec<Sample> {
    let mut out: Vec<(Point, f64, usize)> = Vec::new();
    for s in sources {
        match out.iter_mut().find(|(p, _, _)| p.dist(&s.at) < 1e-9) {
            Some(e) => {
                e.1 += s.value;
                e.2 += 1;
            }
            None => out.push((s.at, s.value, 1)),
        }
    }
    out.into_iter()
        .map(|(p, sum, n)| Sample {
            at: p,
            value: sum / n as f64,
        })
        .collect()
}

/// One-shot ordinary kriging prediction.
pub fn kriging_predict(sources: &[Sample], model: &VariogramModel, query: Point) -> Result<f64> {
    Ok(Kriging::new(sources, *model)?.predict(query))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn model() -> VariogramModel {
        VariogramModel {
            nugget: 0.0,
            partial_sill: 50.0,
            range: 8.0,
        }
    }

    fn random_sources(n: usize, seed: u64) -> Vec<Sample> {
        let mut r = rng::rng(seed, 31);
        (0..n)
            .map(|_| {
                Sample::new(
                    r.random_range(0.0..30.0),
                    r.random_range(0.0..30.0),
                    r.random_range(0.0..100.0),
                )
            })
            .collect()
    }

    #[test]
    fn exact_at_sources() {
        let s = random_sources(25, 1);
        let k = Kriging::new(&s, model()).unwrap();
        for src in &s {
            assert!((k.predict(src.at) - src.value).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_midpoint() {
        let s = [Sample::new(0.0, 0.0, 10.0), Sample::new(4.0, 0.0, 20.0)];
        let v = kriging_predict(&s, &model(), Point::new(2.0, 0.0)).unwrap();
        assert!((v - 15.0).abs() < 1e-9);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut r = rng::rng(2, 2);
        for seed in 0..20 {
            let s = random_sources(15 + seed as usize, seed);
            let k = Kriging::new(&s, model()).unwrap();
            let q = Point::new(r.random_range(0.0..30.0), r.random_range(0.0..30.0));
            let sum: f64 = k.weights(q).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn duplicates_are_averaged() {
        let s = [
            Sample::new(1.0, 1.0, 10.0),
            Sample::new(1.0, 1.0, 20.0),
            Sample::new(5.0, 1.0, 30.0),
        ];
        let k = Kriging::new(&s, model()).unwrap();
        assert_eq!(k.sources().len(), 2);
        assert!((k.predict(Point::new(1.0, 1.0)) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn constant_field_is_degenerate() {
        let s: Vec<Sample> = (0..12).map(|i| Sample::new(i as f64, 0.5 * i as f64, 7.0)).collect();
        let m = fit_variogram(&s).unwrap();
        assert_eq!(m.partial_sill, 0.0);
        assert_eq!(kriging_predict(&s, &m, Point::new(3.3, 9.0)).unwrap(), 7.0);
    }

    #[test]
    fn too_few_sources() {
        let s = random_sources(9, 3);
        assert!(fit_variogram(&s).is_err());
        let same: Vec<Sample> = (0..12).map(|i| Sample::new(1.0, 1.0, i as f64)).collect();
        assert!(fit_variogram(&same).is_err());
    }

    #[test]
    fn gamma_shape() {
        let m = VariogramModel {
            nugget: 2.0,
            partial_sill: 10.0,
            range: 5.0,
        };
        assert_eq!(m.gamma(0.0), 0.0);
        assert!((m.gamma(1e-12) - 2.0).abs() < 1e-9);
        let mut prev = 0.0;
        for i in 1..100 {
            let g = m.gamma(i as f64 * 0.3);
            assert!(g >= prev);
            prev = g;
        }
    }

    /// Gaussian random field with an exponential covariance, sampled by
    /// Cholesky factorisation of the covariance matrix.
    fn simulate(n: usize, range: f64, sill: f64, seed: u64) -> Vec<Sample> {
        let mut r = rng::rng(seed, 99);
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(r.random_range(0.0..60.0), r.random_range(0.0..60.0)))
            .collect();
        let mut l = vec![0.0; n * n];
        let cov = |i: usize, j: usize| sill * (-3.0 * pts[i].dist(&pts[j]) / range).exp();
        for i in 0..n {
            for j in 0..=i {
                let mut s = cov(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = if i == j { s.max(1e-12).sqrt() } else { s / l[j * n + j] };
            }
        }
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        (0..n)
            .map(|i| {
                let v: f64 = (0..=i).map(|k| l[i * n + k] * z[k]).sum();
                Sample {
                    at: pts[i],
                    value: v,
                }
            })
            .collect()
    }

    #[test]
    fn recovers_simulated_variogram() {
        let mut ranges = Vec::new();
        let mut sills = Vec::new();
        for seed in 0..5 {
            let s = simulate(200, 10.0, 100.0, seed);
            let m = fit_variogram(&s).unwrap();
            ranges.push(m.range);
            sills.push(m.partial_sill + m.nugget);
        }
        ranges.sort_by(f64::total_cmp);
        sills.sort_by(f64::total_cmp);
        assert!((ranges[2] - 10.0).abs() <= 5.0, "median range {}", ranges[2]);
        assert!((sills[2] - 100.0).abs() <= 30.0, "median sill {}", sills[2]);
    }
}
