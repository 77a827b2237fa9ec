use rayon::prelude::*;

use super::binning::BinnedMatrix;

/// One node of a regression tree. Children of split nodes are arena
/// indices; arenas are laid out in preorder.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        /// Index into the model's column list.
        feature: usize,
        /// Samples with `value <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
        /// Squared-error reduction achieved by this split.
        gain: f64,
        n_samples: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Evaluate the tree on a row laid out in model column order.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Evaluate with a column lookup table mapping model columns to row
    /// positions.
    pub(crate) fn predict_mapped(&self, row: &[f64], map: &[usize]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[map[*feature]] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

/// Per-bin residual sums and counts for every candidate feature.
#[derive(Clone)]
struct Histogram {
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<u32>>,
}

impl Histogram {
    fn build(binned: &BinnedMatrix, features: &[usize], rows: &[u32], residual: &[f64]) -> Self {
        let one = |&j: &usize| {
            let nb = binned.n_bins(j);
            let col = &binned.bins[j];
            let mut s = vec![0.0; nb];
            let mut c = vec![0u32; nb];
            for &r in rows {
                let b = col[r as usize] as usize;
                s[b] += residual[r as usize];
                c[b] += 1;
            }
            (s, c)
        };
        let parts: Vec<(Vec<f64>, Vec<u32>)> = if rows.len() * features.len() > 200_000 {
            features.par_iter().map(one).collect()
        } else {
            features.iter().map(one).collect()
        };
        let (sums, counts) = parts.into_iter().unzip();
        Histogram { sums, counts }
    }

    fn subtract(&self, other: &Histogram) -> Histogram {
        Histogram {
            sums: self
                .sums
                .iter()
                .zip(&other.sums)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }
}

struct Candidate {
    slot: usize,
    bin: usize,
    gain: f64,
}

pub(crate) struct TreeBuilder<'a> {
    pub binned: &'a BinnedMatrix,
    pub residual: &'a [f64],
    /// Candidate feature indices, ordered by column name so ties resolve
    /// independently of column order.
    pub features: &'a [usize],
    pub params: GrowParams,
}

impl TreeBuilder<'_> {
    pub fn grow(&self, rows: Vec<u32>) -> Tree {
        let mut nodes = Vec::new();
        let hist = Histogram::build(self.binned, self.features, &rows, self.residual);
        self.grow_node(&mut nodes, rows, hist, 0);
        Tree { nodes }
    }

    fn leaf(&self, rows: &[u32]) -> TreeNode {
        let sum: f64 = rows.iter().map(|&r| self.residual[r as usize]).sum();
        TreeNode::Leaf {
            value: if rows.is_empty() {
                0.0
            } else {
                sum / rows.len() as f64
            },
            n_samples: rows.len(),
        }
    }

    fn grow_node(&self, nodes: &mut Vec<TreeNode>, rows: Vec<u32>, hist: Histogram, depth: usize) {
        let me = nodes.len();
        let min_leaf = self.params.min_samples_leaf.max(1);
        if depth >= self.params.max_depth || rows.len() < 2 * min_leaf {
            nodes.push(self.leaf(&rows));
            return;
        }
        let Some(best) = self.best_split(&hist, rows.len(), min_leaf) else {
            nodes.push(self.leaf(&rows));
            return;
        };
        let feature = self.features[best.slot];
        let col = &self.binned.bins[feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| (col[r as usize] as usize) <= best.bin);
        let n_samples = rows.len();
        drop(rows);
        let (left_hist, right_hist) = if left_rows.len() <= right_rows.len() {
            let l = Histogram::build(self.binned, self.features, &left_rows, self.residual);
            let r = hist.subtract(&l);
            (l, r)
        } else {
            let r = Histogram::build(self.binned, self.features, &right_rows, self.residual);
            let l = hist.subtract(&r);
            (l, r)
        };
        drop(hist);
        nodes.push(TreeNode::Leaf {
            value: 0.0,
            n_samples: 0,
        });
        let left = nodes.len();
        self.grow_node(nodes, left_rows, left_hist, depth + 1);
        let right = nodes.len();
        self.grow_node(nodes, right_rows, right_hist, depth + 1);
        nodes[me] = TreeNode::Split {
            feature,
            threshold: self.binned.edges[feature][best.bin],
            left,
            right,
            gain: best.gain,
            n_samples,
        };
    }

    fn best_split(&self, hist: &Histogram, n: usize, min_leaf: usize) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for (slot, (sums, counts)) in hist.sums.iter().zip(&hist.counts).enumerate() {
            let total: f64 = sums.iter().sum();
            let parent = total * total / n as f64;
            let mut sl = 0.0;
            let mut nl = 0usize;
            for b in 0..sums.len().saturating_sub(1) {
                sl += sums[b];
                nl += counts[b] as usize;
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                if gain > best.as_ref().map_or(1e-12, |c| c.gain) {
                    best = Some(Candidate { slot, bin: b, gain });
                }
            }
        }
        best
    }
}

/// Walk the tree on binned training data.
pub(crate) fn predict_binned(tree: &Tree, binned: &BinnedMatrix, row: usize) -> f64 {
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            TreeNode::Leaf { value, .. } => return *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let b = binned.bins[*feature][row] as usize;
                i = if binned.edges[*feature][b] <= *threshold {
                    *left
                } else {
                    *right
                };
            }
        }
    }
}
