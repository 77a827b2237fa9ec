use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;

/// Brute-force k-nearest-neighbour regressor on z-scored features.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    columns: Vec<String>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Standardised training rows, row-major.
    train: Vec<f64>,
    response: Vec<f64>,
    k: usize,
}

impl KnnRegressor {
    pub fn fit(train: &FeatureMatrix, response: &[f64], k: usize) -> Result<KnnRegressor> {
        let n = train.n_rows();
        if n == 0 {
            return Err(Error::Input("KNN needs at least one training row".into()));
        }
        if response.len() != n {
            return Err(Error::Shape(format!(
                "KNN: {n} training rows but {} responses",
                response.len()
            )));
        }
        if train.n_cols() == 0 {
            return Err(Error::Config("KNN needs at least one feature column".into()));
        }
        if k == 0 {
            return Err(Error::Config("KNN k must be at least 1".into()));
        }
        let k = if k > n {
            log::warn!("KNN k={k} exceeds {n} training rows; clamping");
            n
        } else {
            k
        };
        let p = train.n_cols();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for j in 0..p {
            let col = train.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            data.extend(train.row(i).iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]));
        }
        Ok(KnnRegressor {
            columns: train.column_names().into_iter().map(String::from).collect(),
            mean,
            scale,
            train: data,
            response: response.to_vec(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict(&self, query: &FeatureMatrix) -> Result<Vec<f64>> {
        let names = query.column_names();
        if names.len() != self.columns.len() || names.iter().zip(&self.columns).any(|(a, b)| a != b) {
            return Err(Error::Schema(format!(
                "KNN query columns [{}] differ from training columns [{}]",
                names.join(","),
                self.columns.join(",")
            )));
        }
        let p = self.columns.len();
        let n = self.response.len();
        Ok((0..query.n_rows())
            .into_par_iter()
            .map(|i| {
                let q: Vec<f64> = query
                    .row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
                    .collect();
                let mut d: Vec<(f64, usize)> = (0..n)
                    .map(|r| {
                        let row = &self.train[r * p..(r + 1) * p];
                        let s: f64 = row.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                        (s, r)
                    })
                    .collect();
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < n {
                    d.select_nth_unstable_by(self.k - 1, cmp);
                }
                d[..self.k].iter().map(|&(_, r)| self.response[r]).sum::<f64>() / self.k as f64
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_points() -> (FeatureMatrix, Vec<f64>) {
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![3.0, 3.0],
            vec![-1.0, 1.0],
        ];
        (FeatureMatrix::from_rows(&["a", "b"], &rows).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0])
    }

    #[test]
    fn k1_returns_matching_row() {
        let (m, y) = five_points();
        let knn = KnnRegressor::fit(&m, &y, 1).unwrap();
        assert_eq!(knn.predict(&m).unwrap(), y);
    }

    #[test]
    fn k_equal_n_is_global_mean() {
        let (m, y) = five_points();
        let knn = KnnRegressor::fit(&m, &y, 5).unwrap();
        let q = FeatureMatrix::from_rows(&["a", "b"], &[vec![10.0, -4.0]]).unwrap();
        assert!((knn.predict(&q).unwrap()[0] - 3.0).abs() < 1e-12);
        assert_eq!(KnnRegressor::fit(&m, &y, 50).unwrap().k(), 5);
    }

    #[test]
    fn k3_matches_exhaustive_sort() {
        let (m, y) = five_points();
        let knn = KnnRegressor::fit(&m, &y, 3).unwrap();
        let qv = [0.4, 0.9];
        // Standardise by hand with population statistics.
        let stats: Vec<(f64, f64)> = (0..2)
            .map(|j| {
                let c = m.column(j);
                let mu = c.iter().sum::<f64>() / 5.0;
                let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 5.0).sqrt();
                (mu, sd)
            })
            .collect();
        let mut d: Vec<(f64, usize)> = (0..5)
            .map(|i| {
                let s: f64 = (0..2)
                    .map(|j| ((m.get(i, j) - qv[j]) / stats[j].1).powi(2))
                    .sum();
                (s, i)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let expect = d[..3].iter().map(|(_, i)| y[*i]).sum::<f64>() / 3.0;
        let q = FeatureMatrix::from_rows(&["a", "b"], &[qv.to_vec()]).unwrap();
        assert!((knn.predict(&q).unwrap()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn ties_broken_by_row_order() {
        let rows = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let m = FeatureMatrix::from_rows(&["a"], &rows).unwrap();
        let knn = KnnRegressor::fit(&m, &[10.0, 20.0, 30.0], 1).unwrap();
        let q = FeatureMatrix::from_rows(&["a"], &[vec![1.0]]).unwrap();
        assert_eq!(knn.predict(&q).unwrap()[0], 10.0);
    }

    #[test]
    fn column_mismatch_rejected() {
        let (m, y) = five_points();
        let knn = KnnRegressor::fit(&m, &y, 2).unwrap();
        let q = FeatureMatrix::from_rows(&["b", "a"], &[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(knn.predict(&q), Err(Error::Schema(_))));
    }
}
