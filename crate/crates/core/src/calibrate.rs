//! Mobile-sensor calibration against co-located reference stations, and
//! assembly of the unified label set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Label, LabelSet, LabelSource, SampleKey};
use crate::ingest::MobileAggregate;
use crate::linalg::{solve_spd_pivoted, Matrix, SpdSolve};

/// Regression terms in coefficient order; `intercept` first.
pub const CALIBRATION_TERMS: [&str; 7] = [
    "intercept",
    "mobile_pm25",
    "hour_of_day",
    "cell_x",
    "cell_y",
    "temp",
    "rh",
];

const RANK_TOL: f64 = 1e-10;

/// A reference reading matched with the mobile aggregate of the same
/// grid-hour.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub key: SampleKey,
    pub fixed_pm25: f64,
    pub mobile: MobileAggregate,
}

/// Inner join of fixed labels and mobile aggregates on `(cell, t)`.
pub fn pair_colocated(fixed: &[Label], mobile: &[MobileAggregate]) -> Vec<PairedSample> {
    let by_key: HashMap<SampleKey, f64> = fixed.iter().map(|l| (l.key(), l.pm25)).collect();
    mobile
        .iter()
        .filter_map(|m| {
            let key = SampleKey::new(m.cell, m.t);
            by_key.get(&key).map(|&f| PairedSample {
                key,
                fixed_pm25: f,
                mobile: m.clone(),
            })
        })
        .collect()
}

/// Hour of day (UTC) of study hour `t`.
pub fn hour_of_day(spec: &GridSpec, t: usize) -> f64 {
    (spec.start_time + t as i64).rem_euclid(24) as f64
}

/// Covariates of one aggregate in [`CALIBRATION_TERMS`] order after the
/// intercept; `None` when temperature or humidity is missing.
fn covariates(spec: &GridSpec, m: &MobileAggregate) -> Option<[f64; 6]> {
    Some([
        m.pm25_median,
        hour_of_day(spec, m.t),
        m.cell.x as f64,
        m.cell.y as f64,
        m.temp_mean?,
        m.rh_mean?,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    /// Values in [`CALIBRATION_TERMS`] order.
    pub coefficients: [f64; 7],
    pub r_squared: f64,
    pub f_statistic: f64,
    pub p_value: f64,
    pub n_pairs: usize,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        CalibrationModel {
            coefficients: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            r_squared: 1.0,
            f_statistic: f64::INFINITY,
            p_value: 0.0,
            n_pairs: 0,
        }
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        CALIBRATION_TERMS
            .iter()
            .position(|t| *t == term)
            .map(|i| self.coefficients[i])
    }

    fn linear(&self, x: &[f64; 6]) -> f64 {
        self.coefficients[0] + x.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Fixed-equivalent prediction before clamping.
    pub fn predict_raw(&self, spec: &GridSpec, m: &MobileAggregate) -> Option<f64> {
        covariates(spec, m).map(|x| self.linear(&x))
    }

    /// `key=value` lines.
    pub fn to_report(&self, header_comment: &[String]) -> String {
        let mut s = String::new();
        for c in header_comment {
            let _ = writeln!(s, "# {c}");
        }
        for (t, c) in CALIBRATION_TERMS.iter().zip(&self.coefficients) {
            let _ = writeln!(s, "coef_{t}={c}");
        }
        let _ = writeln!(s, "r_squared={}", self.r_squared);
        let _ = writeln!(s, "f_statistic={}", self.f_statistic);
        let _ = writeln!(s, "p_value={}", self.p_value);
        let _ = writeln!(s, "n_pairs={}", self.n_pairs);
        s
    }

    pub fn from_report(text: &str) -> Result<Self> {
        let mut kv = HashMap::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("calibration report line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Schema(format!("calibration report lacks `{k}`")))?
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("calibration report: bad `{k}`")))
        };
        let mut coefficients = [0.0; 7];
        for (c, t) in coefficients.iter_mut().zip(CALIBRATION_TERMS) {
            *c = num(&format!("coef_{t}"))?;
        }
        Ok(CalibrationModel {
            coefficients,
            r_squared: num("r_squared")?,
            f_statistic: num("f_statistic")?,
            p_value: num("p_value")?,
            n_pairs: num("n_pairs")? as usize,
        })
    }

    pub fn save(&self, path: &Path, header_comment: &[String]) -> Result<()> {
        std::fs::write(path, self.to_report(header_comment)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_report(&text)
    }
}

/// Upper tail of the F distribution, `P(F(d1, d2) > f)`.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return 1.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Ordinary least squares of the reference reading on the mobile median,
/// hour of day, cell coordinates, temperature, humidity and an intercept.
///
/// Covariates are centred before the normal equations are formed, which
/// leaves the slopes unchanged and keeps the system well conditioned.
/// Pairs lacking temperature or humidity are left out.
pub fn fit_calibration(spec: &GridSpec, pairs: &[PairedSample]) -> Result<CalibrationModel> {
    let rows: Vec<([f64; 6], f64)> = pairs
        .iter()
        .filter_map(|p| covariates(spec, &p.mobile).map(|x| (x, p.fixed_pm25)))
        .collect();
    if rows.len() < pairs.len() {
        log::warn!(
            "calibration: {} pairs lack temperature or humidity",
            pairs.len() - rows.len()
        );
    }
    let n = rows.len();
    let k = CALIBRATION_TERMS.len();
    if n < 3 * k {
        return Err(Error::Input(format!(
            "calibration needs at least {} complete pairs, got {n}",
            3 * k
        )));
    }
    let nf = n as f64;
    let mut mean_x = [0.0; 6];
    let mut mean_y = 0.0;
    for (x, y) in &rows {
        for j in 0..6 {
            mean_x[j] += x[j] / nf;
        }
        mean_y += y / nf;
    }
    let mut xtx = Matrix::zeros(6);
    let mut xty = vec![0.0; 6];
    for (x, y) in &rows {
        let xc: Vec<f64> = (0..6).map(|j| x[j] - mean_x[j]).collect();
        let yc = y - mean_y;
        for i in 0..6 {
            xty[i] += xc[i] * yc;
            for j in 0..6 {
                xtx.set(i, j, xtx.get(i, j) + xc[i] * xc[j]);
            }
        }
    }
    // A column that centring reduces to rounding noise duplicates the
    // intercept; Jacobi scaling inside the solver would hide that.
    for j in 0..6 {
        let raw: f64 = rows.iter().map(|(x, _)| x[j] * x[j]).sum();
        if xtx.get(j, j) <= RANK_TOL * raw {
            return Err(Error::SingularFit {
                columns: vec![CALIBRATION_TERMS[j + 1].to_string(), "intercept".into()],
            });
        }
    }
    let slopes = match solve_spd_pivoted(&xtx, &xty, RANK_TOL) {
        SpdSolve::Solution(b) => b,
        SpdSolve::RankDeficient { dependent, partners } => {
            let mut columns = vec![CALIBRATION_TERMS[dependent + 1].to_string()];
            if partners.is_empty() {
                columns.push("intercept".into());
            }
            columns.extend(partners.iter().map(|&p| CALIBRATION_TERMS[p + 1].to_string()));
            return Err(Error::SingularFit { columns });
        }
    };
    let mut coefficients = [0.0; 7];
    coefficients[0] = mean_y - slopes.iter().zip(&mean_x).map(|(b, m)| b * m).sum::<f64>();
    coefficients[1..].copy_from_slice(&slopes);
    let mut model = CalibrationModel {
        coefficients,
        r_squared: 0.0,
        f_statistic: 0.0,
        p_value: 1.0,
        n_pairs: n,
    };
    let (mut sse, mut sst) = (0.0, 0.0);
    for (x, y) in &rows {
        sse += (y - model.linear(x)).powi(2);
        sst += (y - mean_y).powi(2);
    }
    let d1 = (k - 1) as f64;
    let d2 = (n - k) as f64;
    if sst > 0.0 {
        model.r_squared = (1.0 - sse / sst).clamp(0.0, 1.0);
        let ssr = (sst - sse).max(0.0);
        model.f_statistic = if sse > 0.0 {
            (ssr / d1) / (sse / d2)
        } else {
            f64::INFINITY
        };
        model.p_value = f_survival(model.f_statistic, d1, d2);
    }
    Ok(model)
}

/// Calibrated labels and the number of aggregates skipped for missing
/// covariates. Predictions are clamped at zero.
pub fn apply_calibration(
    model: &CalibrationModel,
    spec: &GridSpec,
    aggregates: &[MobileAggregate],
) -> (Vec<Label>, usize) {
    let mut skipped = 0;
    let labels = aggregates
        .iter()
        .filter_map(|m| match model.predict_raw(spec, m) {
            Some(v) => Some(Label {
                cell: m.cell,
                t: m.t,
                pm25: v.max(0.0),
                source: LabelSource::MobileCalibrated,
            }),
            None => {
                skipped += 1;
                None
            }
        })
        .collect();
    if skipped > 0 {
        log::warn!("calibration: skipped {skipped} aggregates without temperature or humidity");
    }
    (labels, skipped)
}

/// Union of fixed and calibrated mobile labels; the fixed label wins when
/// both cover a grid-hour.
pub fn build_label_set(fixed: &[Label], mobile_cal: &[Label]) -> Result<LabelSet> {
    let taken: std::collections::HashSet<SampleKey> = fixed.iter().map(Label::key).collect();
    let mut all = fixed.to_vec();
    all.extend(mobile_cal.iter().filter(|l| !taken.contains(&l.key())).copied());
    LabelSet::new(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CellIndex;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn spec() -> GridSpec {
        GridSpec::new(40.0, 116.0, 1.0, 20, 20, 0, 48).unwrap()
    }

    fn agg(x: usize, y: usize, t: usize, pm: f64, temp: f64, rh: f64) -> MobileAggregate {
        MobileAggregate {
            cell: CellIndex::new(x, y),
            t,
            pm25_median: pm,
            temp_mean: Some(temp),
            rh_mean: Some(rh),
            sample_count: 1,
        }
    }

    fn fixed(x: usize, y: usize, t: usize, pm: f64) -> Label {
        Label {
            cell: CellIndex::new(x, y),
            t,
            pm25: pm,
            source: LabelSource::Fixed,
        }
    }

    /// Pairs where mobile = 0.8 * fixed + 5 plus optional noise.
    fn planted(n: usize, noise: f64, seed: u64) -> Vec<PairedSample> {
        let mut r = rng::rng(seed, 5);
        let nd = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..n)
            .map(|i| {
                let f = r.random_range(10.0..150.0);
                let m = 0.8 * f + 5.0 + if noise > 0.0 { nd.sample(&mut r) } else { 0.0 };
                let a = agg(
                    r.random_range(0..20),
                    r.random_range(0..20),
                    i % 48,
                    m,
                    r.random_range(-5.0..30.0),
                    r.random_range(10.0..95.0),
                );
                PairedSample {
                    key: SampleKey::new(a.cell, a.t),
                    fixed_pm25: f,
                    mobile: a,
                }
            })
            .collect()
    }

    #[test]
    fn join_cardinality() {
        let f: Vec<Label> = (0..100).map(|i| fixed(i % 10, i / 10, 0, 10.0)).collect();
        let m: Vec<MobileAggregate> = (0..40).map(|i| agg(i % 10, i / 10, 0, 9.0, 1.0, 1.0)).collect();
        assert_eq!(pair_colocated(&f, &m).len(), 40);
        let other = vec![agg(0, 0, 5, 1.0, 1.0, 1.0)];
        assert!(pair_colocated(&f, &other).is_empty());
        assert_eq!(pair_colocated(&f[..1], &m[..1]).len(), 1);
    }

    #[test]
    fn recovers_affine_inversion() {
        let m = fit_calibration(&spec(), &planted(200, 0.0, 1)).unwrap();
        assert!((m.coefficient("mobile_pm25").unwrap() - 1.25).abs() < 1e-8);
        assert!((m.coefficient("intercept").unwrap() + 6.25).abs() < 1e-8);
        for t in ["hour_of_day", "cell_x", "cell_y", "temp", "rh"] {
            assert!(m.coefficient(t).unwrap().abs() < 1e-8, "{t}");
        }
        assert!((m.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(m.p_value, 0.0);
        let (l, skipped) = apply_calibration(&m, &spec(), &[agg(1, 1, 0, 20.0, 10.0, 50.0)]);
        assert_eq!(skipped, 0);
        assert!((l[0].pm25 - 18.75).abs() < 1e-8);
    }

    #[test]
    fn residuals_orthogonal_to_covariates() {
        let s = spec();
        let pairs = planted(300, 8.0, 2);
        let m = fit_calibration(&s, &pairs).unwrap();
        let mut dots = [0.0; 7];
        let mut scale = [0.0; 7];
        for p in &pairs {
            let x = covariates(&s, &p.mobile).unwrap();
            let r = p.fixed_pm25 - m.linear(&x);
            let full = [1.0, x[0], x[1], x[2], x[3], x[4], x[5]];
            for j in 0..7 {
                dots[j] += r * full[j];
                scale[j] += (r * full[j]).abs();
            }
        }
        for j in 0..7 {
            assert!(dots[j].abs() <= 1e-8 * scale[j], "{j}: {}", dots[j]);
        }
        assert!(m.r_squared > 0.0 && m.r_squared < 1.0);
        assert!(m.p_value < 1e-6);
    }

    #[test]
    fn constant_response() {
        let mut pairs = planted(50, 3.0, 3);
        for p in &mut pairs {
            p.fixed_pm25 = 42.0;
        }
        let m = fit_calibration(&spec(), &pairs).unwrap();
        assert_eq!(m.r_squared, 0.0);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-12));
        assert!((m.coefficients[0] - 42.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(fit_calibration(&spec(), &planted(20, 1.0, 4)), Err(Error::Input(_))));
        assert!(fit_calibration(&spec(), &planted(21, 1.0, 4)).is_ok());
    }

    #[test]
    fn collinear_columns_named() {
        let mut pairs = planted(60, 2.0, 5);
        for p in &mut pairs {
            p.mobile.rh_mean = Some(2.0 * p.mobile.temp_mean.unwrap() + 1.0);
        }
        match fit_calibration(&spec(), &pairs) {
            Err(Error::SingularFit { columns }) => {
                assert!(columns.contains(&"temp".to_string()));
                assert!(columns.contains(&"rh".to_string()));
            }
            other => panic!("expected singular fit, got {other:?}"),
        }
        let mut flat = planted(60, 2.0, 6);
        for p in &mut flat {
            p.mobile.temp_mean = Some(20.0);
        }
        match fit_calibration(&spec(), &flat) {
            Err(Error::SingularFit { columns }) => assert_eq!(columns, vec!["temp", "intercept"]),
            other => panic!("expected singular fit, got {other:?}"),
        }
    }

    fn binomial_tail(a: u64, b: u64, x: f64) -> f64 {
        // I_x(a, b) for integer a, b.
        let n = a + b - 1;
        let choose = |n: u64, k: u64| -> f64 { (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64) };
        (a..=n)
            .map(|j| choose(n, j) * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32))
            .sum()
    }

    #[test]
    fn p_value_matches_binomial_form() {
        // d1 = 6, d2 = 14 corresponds to 21 pairs.
        for f in [0.1, 0.7, 1.0, 2.5, 6.0, 30.0] {
            let x = 14.0 / (14.0 + 6.0 * f);
            let expect = binomial_tail(7, 3, x);
            assert!((f_survival(f, 6.0, 14.0) - expect).abs() < 1e-10, "F={f}");
        }
        assert_eq!(f_survival(0.0, 6.0, 14.0), 1.0);
        assert_eq!(f_survival(f64::INFINITY, 6.0, 14.0), 0.0);
    }

    #[test]
    fn apply_clamps_and_skips() {
        let s = spec();
        let ident = CalibrationModel::identity();
        let (l, _) = apply_calibration(&ident, &s, &[agg(0, 0, 0, 33.0, 1.0, 1.0)]);
        assert_eq!(l[0].pm25, 33.0);
        let mut neg = ident.clone();
        neg.coefficients[0] = -36.0;
        let (l, _) = apply_calibration(&neg, &s, &[agg(0, 0, 0, 33.0, 1.0, 1.0)]);
        assert_eq!(l[0].pm25, 0.0);
        let mut missing = agg(0, 0, 0, 1.0, 1.0, 1.0);
        missing.rh_mean = None;
        let (l, skipped) = apply_calibration(&ident, &s, &[missing]);
        assert!(l.is_empty());
        assert_eq!(skipped, 1);
    }

    #[test]
    fn apply_is_affine_in_mobile_reading() {
        let s = spec();
        let m = fit_calibration(&s, &planted(100, 5.0, 7)).unwrap();
        let at = |v: f64| m.predict_raw(&s, &agg(3, 4, 5, v, 12.0, 60.0)).unwrap();
        let (a, b, c) = (at(10.0), at(20.0), at(35.0));
        assert!(((c - a) / 25.0 - (b - a) / 10.0).abs() < 1e-9);
    }

    #[test]
    fn label_set_precedence() {
        let f = vec![fixed(0, 0, 0, 50.0)];
        let mut m0 = fixed(0, 0, 0, 60.0);
        m0.source = LabelSource::MobileCalibrated;
        let mut m1 = fixed(1, 1, 0, 30.0);
        m1.source = LabelSource::MobileCalibrated;
        let set = build_label_set(&f, &[m0, m1]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels()[0].pm25, 50.0);
        assert_eq!(set.labels()[0].source, LabelSource::Fixed);
        assert_eq!(set.labels()[1].source, LabelSource::MobileCalibrated);
        let full = build_label_set(&f, &[m0]).unwrap();
        assert_eq!(full.count_source(LabelSource::Fixed), 1);
        assert_eq!(full.len(), 1);
    }

    #[test]
    fn report_round_trip() {
        let m = fit_calibration(&spec(), &planted(80, 4.0, 8)).unwrap();
        let text = m.to_report(&["config_hash=abc".into()]);
        assert_eq!(CalibrationModel::from_report(&text).unwrap(), m);
    }
}
