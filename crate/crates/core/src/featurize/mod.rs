//! Local, neighbouring and macro feature extraction.
//!
//! Static and dynamic urban covariates are held as raster volumes. The
//! neighbouring features come from banks of randomly weighted mean filters
//! followed by a rectifier; macro features are time-shifted readings from
//! stations outside the study area, broadcast to every cell.

mod conv;
mod filters;
mod macros;
mod matrix;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use conv::{convolve, convolve_dynamic, convolve_static, DynamicMap, StaticMap};
pub use filters::{build_filter_bank, FilterBank, FilterFamily, NeighborBanks};
pub use macros::{macro_column_name, macro_column_station, macro_feature_rows, station_shift, MacroConfig, MacroSeries, MacroStation};
pub use matrix::{ColumnMeta, FeatureContext, FeatureMatrix};
pub(crate) use matrix::csv_reader;

/// Source category of a feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Geography,
    LandUse,
    Transport,
    Vitality,
    Meteorology,
    Neighboring,
    Macro,
    Other,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Geography,
        Category::LandUse,
        Category::Transport,
        Category::Vitality,
        Category::Meteorology,
        Category::Neighboring,
        Category::Macro,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Geography => "geography",
            Category::LandUse => "land_use",
            Category::Transport => "transport",
            Category::Vitality => "vitality",
            Category::Meteorology => "meteorology",
            Category::Neighboring => "neighboring",
            Category::Macro => "macro",
            Category::Other => "other",
        }
    }

    /// Category implied by a channel-name prefix (`geo_`, `landuse_`,
    /// `transport_`, `vitality_`, `meteo_`).
    pub fn from_channel_name(name: &str) -> Category {
        let prefix = name.split('_').next().unwrap_or("");
        match prefix {
            "geo" | "geography" => Category::Geography,
            "landuse" | "lu" => Category::LandUse,
            "transport" => Category::Transport,
            "vitality" => Category::Vitality,
            "meteo" => Category::Meteorology,
            _ => Category::Other,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown category `{s}`")))
    }
}

/// Feature group: local, neighbouring or macro.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Local,
    Neighboring,
    Macro,
}

impl Group {
    pub fn tag(self) -> &'static str {
        match self {
            Group::Local => "L",
            Group::Neighboring => "N",
            Group::Macro => "M",
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Group::Local),
            "N" => Ok(Group::Neighboring),
            "M" => Ok(Group::Macro),
            other => Err(Error::Schema(format!("unknown feature group `{other}`"))),
        }
    }
}

/// A subset of `{L, N, M}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FeatureSet {
    pub local: bool,
    pub neighboring: bool,
    pub macro_: bool,
}

impl FeatureSet {
    pub const L: FeatureSet = FeatureSet::new(true, false, false);
    pub const N: FeatureSet = FeatureSet::new(false, true, false);
    pub const LM: FeatureSet = FeatureSet::new(true, false, true);
    pub const NM: FeatureSet = FeatureSet::new(false, true, true);
    pub const LMN: FeatureSet = FeatureSet::new(true, true, true);
    pub const EMPTY: FeatureSet = FeatureSet::new(false, false, false);

    pub const fn new(local: bool, neighboring: bool, macro_: bool) -> Self {
        FeatureSet {
            local,
            neighboring,
            macro_,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.local || self.neighboring || self.macro_)
    }

    pub fn contains(&self, g: Group) -> bool {
        match g {
            Group::Local => self.local,
            Group::Neighboring => self.neighboring,
            Group::Macro => self.macro_,
        }
    }
}

impl fmt::Display for FeatureSet {
    /// Renders the subsets the way result tables label them: `L`, `L+M`,
    /// `N`, `N+M`, `L+M+N`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.local {
            parts.push("L");
            if self.macro_ {
                parts.push("M");
            }
            if self.neighboring {
                parts.push("N");
            }
        } else {
            if self.neighboring {
                parts.push("N");
            }
            if self.macro_ {
                parts.push("M");
            }
        }
        if parts.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "-" {
            return Ok(FeatureSet::EMPTY);
        }
        let mut set = FeatureSet::EMPTY;
        for part in s.split('+') {
            match Group::from_tag(part.trim())? {
                Group::Local => set.local = true,
                Group::Neighboring => set.neighboring = true,
                Group::Macro => set.macro_ = true,
            }
        }
        Ok(set)
    }
}

/// Per-cell static covariates, `width × height × channels`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticVolume {
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
    pub categories: Vec<Category>,
    data: Vec<f64>,
}

impl StaticVolume {
    pub fn new(
        width: usize,
        height: usize,
        names: Vec<String>,
        categories: Vec<Category>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let channels = names.len();
        if channels == 0 {
            return Err(Error::Shape("static volume needs at least one channel".into()));
        }
        if categories.len() != channels || data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "static volume {}x{}x{} does not match {} values",
                width,
                height,
                channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("static volume has non-finite entries".into()));
        }
        Ok(StaticVolume {
            width,
            height,
            names,
            categories,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.plane(c)[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Hourly covariates, `hours × channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSeries {
    pub width: usize,
    pub height: usize,
    pub hours: usize,
    pub names: Vec<String>,
    pub categories: Vec<Category>,
    data: Vec<f64>,
}

impl DynamicSeries {
    pub fn new(
        width: usize,
        height: usize,
        hours: usize,
        names: Vec<String>,
        categories: Vec<Category>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let channels = names.len();
        if channels == 0 || hours == 0 {
            return Err(Error::Shape("dynamic series needs channels and hours".into()));
        }
        if categories.len() != channels || data.len() != width * height * channels * hours {
            return Err(Error::Shape(format!(
                "dynamic series {}x{}x{}x{} does not match {} values",
                hours,
                channels,
                height,
                width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("dynamic series has non-finite entries".into()));
        }
        Ok(DynamicSeries {
            width,
            height,
            hours,
            names,
            categories,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn plane(&self, t: usize, c: usize) -> &[f64] {
        let n = self.width * self.height;
        let base = (t * self.channels() + c) * n;
        &self.data[base..base + n]
    }

    pub fn get(&self, t: usize, c: usize, x: usize, y: usize) -> f64 {
        self.plane(t, c)[y * self.width + x]
    }

    /// Append the channels of `other` (same geometry and hours).
    pub fn concat(self, other: DynamicSeries) -> Result<DynamicSeries> {
        if self.width != other.width || self.height != other.height || self.hours != other.hours {
            return Err(Error::Shape("dynamic series geometry mismatch".into()));
        }
        let n = self.width * self.height;
        let (ca, cb) = (self.channels(), other.channels());
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for t in 0..self.hours {
            data.extend_from_slice(&self.data[t * ca * n..(t + 1) * ca * n]);
            data.extend_from_slice(&other.data[t * cb * n..(t + 1) * cb * n]);
        }
        let mut names = self.names;
        names.extend(other.names);
        let mut categories = self.categories;
        categories.extend(other.categories);
        DynamicSeries::new(self.width, self.height, self.hours, names, categories, data)
    }

    /// Input volume for hour `t`: the hour's channels followed by the
    /// previous hour's; hour 0 reuses itself as its predecessor.
    pub fn volume_at(&self, t: usize) -> DynamicVolume<'_> {
        DynamicVolume {
            series: self,
            t,
            prev: t.saturating_sub(1),
        }
    }
}

/// Borrowed `width × height × 2N_d` view stacking hour `t` and `t − 1`.
#[derive(Debug, Clone, Copy)]
pub struct DynamicVolume<'a> {
    series: &'a DynamicSeries,
    pub t: usize,
    prev: usize,
}

impl<'a> DynamicVolume<'a> {
    pub fn depth(&self) -> usize {
        2 * self.series.channels()
    }

    pub fn width(&self) -> usize {
        self.series.width
    }

    pub fn height(&self) -> usize {
        self.series.height
    }

    pub fn plane(&self, c: usize) -> &'a [f64] {
        let nd = self.series.channels();
        if c < nd {
            self.series.plane(self.t, c)
        } else {
            self.series.plane(self.prev, c - nd)
        }
    }
}

/// Read access to a `width × height × depth` volume by channel plane.
pub trait Planes {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn depth(&self) -> usize;
    fn plane(&self, c: usize) -> &[f64];
}

impl Planes for StaticVolume {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        self.channels()
    }
    fn plane(&self, c: usize) -> &[f64] {
        StaticVolume::plane(self, c)
    }
}

impl Planes for DynamicVolume<'_> {
    fn width(&self) -> usize {
        DynamicVolume::width(self)
    }
    fn height(&self) -> usize {
        DynamicVolume::height(self)
    }
    fn depth(&self) -> usize {
        DynamicVolume::depth(self)
    }
    fn plane(&self, c: usize) -> &[f64] {
        DynamicVolume::plane(self, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_set_labels_match_table_rows() {
        for (set, s) in [
            (FeatureSet::L, "L"),
            (FeatureSet::LM, "L+M"),
            (FeatureSet::N, "N"),
            (FeatureSet::NM, "N+M"),
            (FeatureSet::LMN, "L+M+N"),
        ] {
            assert_eq!(set.to_string(), s);
            assert_eq!(s.parse::<FeatureSet>().unwrap(), set);
        }
        assert_eq!("M+N+L".parse::<FeatureSet>().unwrap(), FeatureSet::LMN);
        assert!("Q".parse::<FeatureSet>().is_err());
    }

    #[test]
    fn categories_from_prefix() {
        assert_eq!(Category::from_channel_name("geo_elevation"), Category::Geography);
        assert_eq!(Category::from_channel_name("transport_traffic"), Category::Transport);
        assert_eq!(Category::from_channel_name("mystery"), Category::Other);
    }

    #[test]
    fn first_hour_replicates_itself() {
        let s = DynamicSeries::new(
            2,
            1,
            2,
            vec!["a".into()],
            vec![Category::Other],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let v0 = s.volume_at(0);
        assert_eq!(v0.depth(), 2);
        assert_eq!(v0.plane(0), v0.plane(1));
        let v1 = s.volume_at(1);
        assert_eq!(v1.plane(0), &[3.0, 4.0]);
        assert_eq!(v1.plane(1), &[1.0, 2.0]);
    }
}
