//! Flat text model format.
//!
//! ```text
//! DEEPMAPS-GBDT 1
//! # free-form comment lines (e.g. config_hash=...)
//! params num_trees=.. max_depth=.. learning_rate=.. ...
//! base_score <f64>
//! learning_rate <f64>
//! columns <n>
//! <name>            (n lines)
//! trees <count>
//! tree <nodes>
//! S <feature> <threshold> <gain> <n_samples> | L <value> <n_samples>   (preorder)
//! end
//! ```
//! Floats use Rust's shortest round-trip formatting, so write → read → write
//! is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use super::{GbdtModel, GbdtParams, Tree, TreeNode};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &str = "DEEPMAPS-GBDT";
const VERSION: u32 = 1;

impl GbdtModel {
    pub fn to_text(&self, comments: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_MAGIC} {VERSION}");
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        let p = &self.params;
        let _ = writeln!(
            s,
            "params num_trees={} max_depth={} learning_rate={} min_samples_leaf={} \
             row_subsample={} feature_subsample={} histogram_bins={} seed={} early_stopping_rounds={}",
            p.num_trees,
            p.max_depth,
            p.learning_rate,
            p.min_samples_leaf,
            p.row_subsample,
            p.feature_subsample,
            p.histogram_bins,
            p.seed,
            p.early_stopping_rounds
        );
        let _ = writeln!(s, "base_score {}", self.base_score);
        let _ = writeln!(s, "learning_rate {}", self.learning_rate);
        let _ = writeln!(s, "columns {}", self.columns.len());
        for c in &self.columns {
            let _ = writeln!(s, "{c}");
        }
        let _ = writeln!(s, "trees {}", self.trees.len());
        for t in &self.trees {
            let _ = writeln!(s, "tree {}", t.nodes.len());
            write_preorder(&mut s, t, 0);
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<GbdtModel> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |what: &str| Error::Schema(format!("model file: {what}"));
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(MODEL_MAGIC) {
            return Err(bad("missing magic"));
        }
        let version: u32 = h.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad version"))?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let params = parse_params(lines.next().ok_or_else(|| bad("missing params"))?)?;
        let base_score = keyed_f64(lines.next(), "base_score")?;
        let learning_rate = keyed_f64(lines.next(), "learning_rate")?;
        let n_cols = keyed_usize(lines.next(), "columns")?;
        let columns: Vec<String> = (0..n_cols)
            .map(|_| lines.next().map(str::to_string).ok_or_else(|| bad("truncated columns")))
            .collect::<Result<_>>()?;
        let n_trees = keyed_usize(lines.next(), "trees")?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = keyed_usize(lines.next(), "tree")?;
            let raw: Vec<&str> = (0..n_nodes)
                .map(|_| lines.next().ok_or_else(|| bad("truncated tree")))
                .collect::<Result<_>>()?;
            let mut nodes = Vec::with_capacity(n_nodes);
            let mut pos = 0;
            read_preorder(&raw, &mut pos, &mut nodes, n_cols)?;
            if pos != raw.len() {
                return Err(bad("tree node count mismatch"));
            }
            trees.push(Tree { nodes });
        }
        if lines.next() != Some("end") {
            return Err(bad("missing end marker"));
        }
        Ok(GbdtModel {
            base_score,
            learning_rate,
            params,
            columns,
            trees,
            train_mse: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path, comments: &[String]) -> Result<()> {
        std::fs::write(path, self.to_text(comments)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<GbdtModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GbdtModel::from_text(&text)
    }
}

fn write_preorder(s: &mut String, t: &Tree, i: usize) {
    match &t.nodes[i] {
        TreeNode::Leaf { value, n_samples } => {
            let _ = writeln!(s, "L {value} {n_samples}");
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            gain,
            n_samples,
        } => {
            let _ = writeln!(s, "S {feature} {threshold} {gain} {n_samples}");
            write_preorder(s, t, *left);
            write_preorder(s, t, *right);
        }
    }
}

fn read_preorder(raw: &[&str], pos: &mut usize, nodes: &mut Vec<TreeNode>, n_cols: usize) -> Result<()> {
    let line = raw
        .get(*pos)
        .ok_or_else(|| Error::Schema("model file: truncated tree".into()))?;
    *pos += 1;
    let f: Vec<&str> = line.split_whitespace().collect();
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Schema(format!("model file: bad number `{s}`")))
    };
    let int = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Schema(format!("model file: bad integer `{s}`")))
    };
    match f.as_slice() {
        ["L", v, n] => {
            nodes.push(TreeNode::Leaf {
                value: num(v)?,
                n_samples: int(n)?,
            });
            Ok(())
        }
        ["S", feat, thr, gain, n] => {
            let feature = int(feat)?;
            if feature >= n_cols {
                return Err(Error::Schema(format!("model file: feature {feature} out of range")));
            }
            let me = nodes.len();
            nodes.push(TreeNode::Leaf {
                value: 0.0,
                n_samples: 0,
            });
            let left = nodes.len();
            read_preorder(raw, pos, nodes, n_cols)?;
            let right = nodes.len();
            read_preorder(raw, pos, nodes, n_cols)?;
            nodes[me] = TreeNode::Split {
                feature,
                threshold: num(thr)?,
                left,
                right,
                gain: num(gain)?,
                n_samples: int(n)?,
            };
            Ok(())
        }
        _ => Err(Error::Schema(format!("model file: bad node line `{line}`"))),
    }
}

fn keyed<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::Schema(format!("model file: missing `{key}`")))?;
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::Schema(format!("model file: expected `{key}`, got `{line}`")))
}

fn keyed_f64(line: Option<&str>, key: &str) -> Result<f64> {
    let v = keyed(line, key)?;
    v.parse()
        .map_err(|_| Error::Schema(format!("model file: bad `{key}` value `{v}`")))
}

fn keyed_usize(line: Option<&str>, key: &str) -> Result<usize> {
    let v = keyed(line, key)?;
    v.parse()
        .map_err(|_| Error::Schema(format!("model file: bad `{key}` value `{v}`")))
}

fn parse_params(line: &str) -> Result<GbdtParams> {
    let rest = keyed(Some(line), "params")?;
    let mut p = GbdtParams::default();
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("model file: bad param `{kv}`")))?;
        let bad = || Error::Schema(format!("model file: bad value for `{k}`"));
        match k {
            "num_trees" => p.num_trees = v.parse().map_err(|_| bad())?,
            "max_depth" => p.max_depth = v.parse().map_err(|_| bad())?,
            "learning_rate" => p.learning_rate = v.parse().map_err(|_| bad())?,
            "min_samples_leaf" => p.min_samples_leaf = v.parse().map_err(|_| bad())?,
            "row_subsample" => p.row_subsample = v.parse().map_err(|_| bad())?,
            "feature_subsample" => p.feature_subsample = v.parse().map_err(|_| bad())?,
            "histogram_bins" => p.histogram_bins = v.parse().map_err(|_| bad())?,
            "seed" => p.seed = v.parse().map_err(|_| bad())?,
            "early_stopping_rounds" => p.early_stopping_rounds = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::Schema(format!("model file: unknown param `{k}`"))),
        }
    }
    Ok(p)
}
