use rayon::prelude::*;

use crate::featurize::FeatureMatrix;

/// Training features quantised to at most 256 equal-frequency bins per
/// column, stored column-major.
#[derive(Debug, Clone)]
pub(crate) struct BinnedMatrix {
    /// Per column, the upper edge of each bin (ascending, last = column max).
    pub edges: Vec<Vec<f64>>,
    pub bins: Vec<Vec<u8>>,
}

impl BinnedMatrix {
    pub fn new(matrix: &FeatureMatrix, max_bins: usize) -> Self {
        let cols: Vec<(Vec<f64>, Vec<u8>)> = (0..matrix.n_cols())
            .into_par_iter()
            .map(|j| {
                let col = matrix.column(j);
                let edges = bin_edges(&col, max_bins);
                let bins = col.iter().map(|&v| bin_of(&edges, v)).collect();
                (edges, bins)
            })
            .collect();
        let (edges, bins) = cols.into_iter().unzip();
        BinnedMatrix {
            edges,
            bins,
        }
    }

    pub fn n_bins(&self, j: usize) -> usize {
        self.edges[j].len()
    }
}

/// Equal-frequency edges; columns with few distinct values get one bin per
/// value.
pub(crate) fn bin_edges(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct;
    }
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..=max_bins)
        .map(|b| {
            let idx = ((b as f64 / max_bins as f64) * n as f64).ceil() as usize;
            sorted[idx.clamp(1, n) - 1]
        })
        .collect();
    edges.dedup();
    edges
}

/// First bin whose upper edge is `>= v`.
#[inline]
pub(crate) fn bin_of(edges: &[f64], v: f64) -> u8 {
    let b = edges.partition_point(|e| *e < v);
    b.min(edges.len() - 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_get_own_bins() {
        let e = bin_edges(&[3.0, 1.0, 2.0, 1.0], 64);
        assert_eq!(e, vec![1.0, 2.0, 3.0]);
        assert_eq!(bin_of(&e, 1.0), 0);
        assert_eq!(bin_of(&e, 1.5), 1);
        assert_eq!(bin_of(&e, 9.0), 2);
    }

    #[test]
    fn equal_frequency_edges() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        let e = bin_edges(&v, 4);
        assert_eq!(e, vec![249.0, 499.0, 749.0, 999.0]);
        // v <= edge[b] iff bin(v) <= b.
        for x in &v {
            let b = bin_of(&e, *x) as usize;
            assert!(*x <= e[b]);
            if b > 0 {
                assert!(*x > e[b - 1]);
            }
        }
    }
}
