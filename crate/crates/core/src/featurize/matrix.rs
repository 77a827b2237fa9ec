use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::conv::MapVolume;
use super::filters::NeighborBanks;
use super::macros::{macro_feature_rows, MacroConfig, MacroSeries};
use super::{Category, DynamicSeries, FeatureSet, Group, StaticVolume};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SampleKey};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub name: String,
    pub group: Group,
    pub category: Category,
}

/// Sample rows keyed by grid-hour, with named and tagged columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<ColumnMeta>,
    keys: Vec<SampleKey>,
    /// Row-major.
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<ColumnMeta>, keys: Vec<SampleKey>, data: Vec<f64>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        if data.len() != keys.len() * columns.len() {
            return Err(Error::Shape(format!(
                "{} rows x {} columns does not match {} values",
                keys.len(),
                columns.len(),
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            columns,
            keys,
            data,
        })
    }

    /// Matrix from plain rows; keys are synthetic `(row, 0, 0)` and every
    /// column is tagged local/other.
    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| ColumnMeta {
                name: n.to_string(),
                group: Group::Local,
                category: Category::Other,
            })
            .collect();
        let keys = (0..rows.len())
            .map(|i| SampleKey::new(crate::grid::CellIndex::new(i, 0), 0))
            .collect();
        let mut data = Vec::with_capacity(rows.len() * names.len());
        for r in rows {
            if r.len() != names.len() {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(columns, keys, data)
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn keys(&self) -> &[SampleKey] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.columns.len();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.columns.len() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    /// Rows at the given positions, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let p = self.columns.len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            keys: rows.iter().map(|&i| self.keys[i]).collect(),
            data,
        }
    }

    /// Keep only the columns whose group is in `set`.
    pub fn select_groups(&self, set: FeatureSet) -> Result<FeatureMatrix> {
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&j| set.contains(self.columns[j].group))
            .collect();
        if keep.is_empty() {
            return Err(Error::Config(format!("no columns for feature set {set}")));
        }
        let mut data = Vec::with_capacity(self.n_rows() * keep.len());
        for i in 0..self.n_rows() {
            let r = self.row(i);
            data.extend(keep.iter().map(|&j| r[j]));
        }
        Ok(FeatureMatrix {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            keys: self.keys.clone(),
            data,
        })
    }

    /// Column → category map used for importance rollups.
    pub fn categories(&self) -> BTreeMap<String, Category> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.category))
            .collect()
    }

    /// CSV `x,y,t,<columns...>`; `header_comment` lines are written first
    /// prefixed by `#`.
    pub fn write_csv(&self, path: &Path, header_comment: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for line in header_comment {
            writeln!(out, "# {line}").map_err(io)?;
        }
        write!(out, "x,y,t").map_err(io)?;
        for c in &self.columns {
            write!(out, ",{}", c.name).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
        for (i, k) in self.keys.iter().enumerate() {
            write!(out, "{},{},{}", k.cell.x, k.cell.y, k.t).map_err(io)?;
            for v in self.row(i) {
                write!(out, ",{v}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Sidecar CSV `column,group,category`.
    pub fn write_metadata(&self, path: &Path, header_comment: &[String]) -> Result<()> {
        let mut s = String::new();
        for line in header_comment {
            s.push_str(&format!("# {line}\n"));
        }
        s.push_str("column,group,category\n");
        for c in &self.columns {
            s.push_str(&format!("{},{},{}\n", c.name, c.group.tag(), c.category));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Inverse of [`FeatureMatrix::write_csv`] plus its metadata sidecar.
    pub fn read_csv(path: &Path, metadata: &Path) -> Result<FeatureMatrix> {
        let mut meta = BTreeMap::new();
        let mut rdr = csv_reader(metadata)?;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Schema(format!("{}: expected 3 fields", metadata.display())));
            }
            meta.insert(
                rec[0].to_string(),
                (Group::from_tag(&rec[1])?, rec[2].parse::<Category>()?),
            );
        }
        let mut rdr = csv_reader(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "x" || &headers[1] != "y" || &headers[2] != "t" {
            return Err(Error::Schema(format!("{}: header must start x,y,t", path.display())));
        }
        let columns: Vec<ColumnMeta> = headers
            .iter()
            .skip(3)
            .map(|name| {
                let (group, category) = meta.get(name).copied().ok_or_else(|| {
                    Error::Schema(format!("column `{name}` missing from metadata"))
                })?;
                Ok(ColumnMeta {
                    name: name.to_string(),
                    group,
                    category,
                })
            })
            .collect::<Result<_>>()?;
        let mut keys = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("bad number `{}`", &rec[i])))
            };
            let idx = |i: usize| -> Result<usize> {
                rec[i]
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Schema(format!("bad index `{}`", &rec[i])))
            };
            keys.push(SampleKey::new(crate::grid::CellIndex::new(idx(0)?, idx(1)?), idx(2)?));
            for i in 3..rec.len() {
                data.push(num(i)?);
            }
        }
        FeatureMatrix::new(columns, keys, data)
    }
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

/// Everything needed to featurize any grid-hour.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub spec: GridSpec,
    pub static_volume: StaticVolume,
    pub dynamic: DynamicSeries,
    banks: Option<NeighborBanks>,
    static_map: Option<MapVolume>,
    macro_inputs: Option<(MacroConfig, MacroSeries)>,
}

impl FeatureContext {
    pub fn new(spec: GridSpec, static_volume: StaticVolume, dynamic: DynamicSeries) -> Result<Self> {
        if static_volume.width != spec.width
            || static_volume.height != spec.height
            || dynamic.width != spec.width
            || dynamic.height != spec.height
        {
            return Err(Error::Shape("feature volumes do not match the grid".into()));
        }
        if dynamic.hours != spec.num_hours {
            return Err(Error::Shape(format!(
                "dynamic series covers {} hours, grid has {}",
                dynamic.hours, spec.num_hours
            )));
        }
        Ok(FeatureContext {
            spec,
            static_volume,
            dynamic,
            banks: None,
            static_map: None,
            macro_inputs: None,
        })
    }

    /// Attach neighbouring-feature filter banks and precompute the static map.
    pub fn with_banks(mut self, banks: NeighborBanks) -> Result<Self> {
        self.static_map = Some(banks.static_map(&self.static_volume)?);
        if banks.c.channels != 2 * self.dynamic.channels() {
            return Err(Error::Shape(format!(
                "dynamic banks expect depth {}, volume depth is {}",
                banks.c.channels,
                2 * self.dynamic.channels()
            )));
        }
        self.banks = Some(banks);
        Ok(self)
    }

    pub fn with_macro(mut self, config: MacroConfig, series: MacroSeries) -> Self {
        self.macro_inputs = Some((config, series));
        self
    }

    pub fn macro_config(&self) -> Option<&MacroConfig> {
        self.macro_inputs.as_ref().map(|(c, _)| c)
    }

    pub fn banks(&self) -> Option<&NeighborBanks> {
        self.banks.as_ref()
    }

    /// Column metadata for a selection, in assembly order.
    pub fn columns(&self, selection: FeatureSet) -> Result<Vec<ColumnMeta>> {
        if selection.is_empty() {
            return Err(Error::Config("empty feature selection".into()));
        }
        let mut cols = Vec::new();
        if selection.local {
            for (n, c) in self.static_volume.names.iter().zip(&self.static_volume.categories) {
                cols.push(ColumnMeta {
                    name: n.clone(),
                    group: Group::Local,
                    category: *c,
                });
            }
            for (n, c) in self.dynamic.names.iter().zip(&self.dynamic.categories) {
                cols.push(ColumnMeta {
                    name: n.clone(),
                    group: Group::Local,
                    category: *c,
                });
            }
        }
        if selection.neighboring {
            let banks = self.banks.as_ref().ok_or_else(|| {
                Error::Config("neighbouring features requested without filter banks".into())
            })?;
            for bank in [&banks.a, &banks.b, &banks.c, &banks.d, &banks.e] {
                for i in 0..bank.count {
                    cols.push(ColumnMeta {
                        name: format!("nbr_{}{}", bank.family, i + 1),
                        group: Group::Neighboring,
                        category: Category::Neighboring,
                    });
                }
            }
        }
        if selection.macro_ {
            let (cfg, _) = self.macro_inputs.as_ref().ok_or_else(|| {
                Error::Config("macro features requested without external stations".into())
            })?;
            for name in cfg.column_names() {
                cols.push(ColumnMeta {
                    name,
                    group: Group::Macro,
                    category: Category::Macro,
                });
            }
        }
        Ok(cols)
    }

    /// Build the matrix for `keys` (sorted t, y, x). Keys whose macro row is
    /// unavailable are returned separately instead of as rows.
    pub fn assemble_masked(
        &self,
        keys: &[SampleKey],
        selection: FeatureSet,
    ) -> Result<(FeatureMatrix, Vec<SampleKey>)> {
        let columns = self.columns(selection)?;
        let p = columns.len();
        let mut sorted: Vec<SampleKey> = keys.to_vec();
        sorted.sort_by_key(SampleKey::order_key);
        for k in &sorted {
            if !self.spec.contains(k.cell) || k.t >= self.spec.num_hours {
                return Err(Error::Input(format!("sample {k} outside the grid")));
            }
        }
        let mut by_hour: BTreeMap<usize, Vec<SampleKey>> = BTreeMap::new();
        for k in sorted {
            by_hour.entry(k.t).or_default().push(k);
        }
        let hours: Vec<(usize, Vec<SampleKey>)> = by_hour.into_iter().collect();
        let blocks: Vec<Result<(Vec<SampleKey>, Vec<f64>, Vec<SampleKey>)>> = hours
            .par_iter()
            .map(|(t, hour_keys)| self.hour_block(*t, hour_keys, selection, p))
            .collect();
        let mut all_keys = Vec::with_capacity(keys.len());
        let mut data = Vec::with_capacity(keys.len() * p);
        let mut masked = Vec::new();
        for b in blocks {
            let (k, d, m) = b?;
            all_keys.extend(k);
            data.extend(d);
            masked.extend(m);
        }
        Ok((FeatureMatrix::new(columns, all_keys, data)?, masked))
    }

    /// Like [`FeatureContext::assemble_masked`] but every key must be
    /// featurizable.
    pub fn assemble(&self, keys: &[SampleKey], selection: FeatureSet) -> Result<FeatureMatrix> {
        let (m, masked) = self.assemble_masked(keys, selection)?;
        if let Some(first) = masked.first() {
            return Err(Error::Coverage {
                count: masked.len(),
                first: first.to_string(),
            });
        }
        Ok(m)
    }

    /// Every cell of hour `t`, row order y then x.
    pub fn hour_keys(&self, t: usize) -> Vec<SampleKey> {
        self.spec.cells().map(|c| SampleKey::new(c, t)).collect()
    }

    fn hour_block(
        &self,
        t: usize,
        keys: &[SampleKey],
        sel: FeatureSet,
        p: usize,
    ) -> Result<(Vec<SampleKey>, Vec<f64>, Vec<SampleKey>)> {
        let macro_row = if sel.macro_ {
            let (cfg, series) = self.macro_inputs.as_ref().expect("checked in columns()");
            macro_feature_rows(series, cfg, t as i64)
        } else {
            Some(Vec::new())
        };
        let Some(macro_row) = macro_row else {
            return Ok((Vec::new(), Vec::new(), keys.to_vec()));
        };
        let dyn_map = if sel.neighboring {
            let banks = self.banks.as_ref().expect("checked in columns()");
            Some(banks.dynamic_map(&self.dynamic, t)?)
        } else {
            None
        };
        let mut data = Vec::with_capacity(keys.len() * p);
        for k in keys {
            let (x, y) = (k.cell.x, k.cell.y);
            if sel.local {
                for c in 0..self.static_volume.channels() {
                    data.push(self.static_volume.get(c, x, y));
                }
                for c in 0..self.dynamic.channels() {
                    data.push(self.dynamic.get(t, c, x, y));
                }
            }
            if let Some(dm) = &dyn_map {
                let sm = self.static_map.as_ref().expect("static map built with banks");
                for c in 0..sm.channels {
                    data.push(sm.get(c, x, y));
                }
                for c in 0..dm.channels {
                    data.push(dm.get(c, x, y));
                }
            }
            data.extend_from_slice(&macro_row);
        }
        Ok((keys.to_vec(), data, Vec::new()))
    }
}
