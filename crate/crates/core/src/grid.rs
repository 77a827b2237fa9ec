//! Grid geometry, time indexing and the value types shared by all stages.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Kilometres per degree of latitude on the mean-radius sphere.
pub const KM_PER_DEGREE: f64 = 6371.0088 * std::f64::consts::PI / 180.0;

/// Geometry and time axis of the study raster.
///
/// The origin is the south-west corner of cell `(0, 0)`; `x` grows east and
/// `y` grows north. Time is counted in whole UTC hours since the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_km: f64,
    pub width: usize,
    pub height: usize,
    /// Epoch hours (UTC) of the first study hour.
    pub start_time: i64,
    pub num_hours: usize,
}

impl GridSpec {
    pub fn new(
        origin_lat: f64,
        origin_lon: f64,
        cell_size_km: f64,
        width: usize,
        height: usize,
        start_time: i64,
        num_hours: usize,
    ) -> Result<Self> {
        let spec = GridSpec {
            origin_lat,
            origin_lon,
            cell_size_km,
            width,
            height,
            start_time,
            num_hours,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::Config("grid width and height must be >= 1".into()));
        }
        if !(self.cell_size_km > 0.0 && self.cell_size_km.is_finite()) {
            return Err(Error::Config("cell_size_km must be positive".into()));
        }
        if self.num_hours < 1 {
            return Err(Error::Config("num_hours must be >= 1".into()));
        }
        if !self.origin_lat.is_finite()
            || !self.origin_lon.is_finite()
            || self.origin_lat.abs() >= 89.0
        {
            return Err(Error::Config("grid origin must be a finite non-polar point".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    /// Row-major raster offset of a cell.
    pub fn offset(&self, cell: CellIndex) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn cell_at(&self, offset: usize) -> CellIndex {
        CellIndex {
            x: offset % self.width,
            y: offset / self.width,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| CellIndex { x, y }))
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    /// Kilometres east and north of the origin (local equirectangular).
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let mean_lat = 0.5 * (lat + self.origin_lat);
        let east = (lon - self.origin_lon) * mean_lat.to_radians().cos() * KM_PER_DEGREE;
        let north = (lat - self.origin_lat) * KM_PER_DEGREE;
        (east, north)
    }

    /// Inverse of [`GridSpec::project`].
    pub fn unproject(&self, east_km: f64, north_km: f64) -> (f64, f64) {
        let lat = self.origin_lat + north_km / KM_PER_DEGREE;
        let mean_lat = 0.5 * (lat + self.origin_lat);
        let lon = self.origin_lon + east_km / (mean_lat.to_radians().cos() * KM_PER_DEGREE);
        (lat, lon)
    }

    /// Cell centre in kilometres from the origin.
    pub fn cell_center_km(&self, cell: CellIndex) -> (f64, f64) {
        (
            (cell.x as f64 + 0.5) * self.cell_size_km,
            (cell.y as f64 + 0.5) * self.cell_size_km,
        )
    }

    pub fn cell_center_latlon(&self, cell: CellIndex) -> (f64, f64) {
        let (e, n) = self.cell_center_km(cell);
        self.unproject(e, n)
    }

    /// Centre of the whole raster in kilometres from the origin.
    pub fn centroid_km(&self) -> (f64, f64) {
        (
            0.5 * self.width as f64 * self.cell_size_km,
            0.5 * self.height as f64 * self.cell_size_km,
        )
    }

    /// Snap a coordinate to its cell.
    pub fn grid_index(&self, lat: f64, lon: f64) -> Result<GridLookup> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Input(format!("non-finite coordinate ({lat}, {lon})")));
        }
        let (east, north) = self.project(lat, lon);
        let fx = (east / self.cell_size_km).floor();
        let fy = (north / self.cell_size_km).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return Ok(GridLookup::OutOfBounds);
        }
        Ok(GridLookup::Cell(CellIndex {
            x: fx as usize,
            y: fy as usize,
        }))
    }

    /// Signed hour offset of a timestamp relative to the study start.
    pub fn hour_offset(&self, timestamp: i64) -> i64 {
        (timestamp - self.start_time * 3600).div_euclid(3600)
    }

    pub fn hour_index(&self, timestamp: i64) -> Option<usize> {
        let t = self.hour_offset(timestamp);
        if t >= 0 && (t as usize) < self.num_hours {
            Some(t as usize)
        } else {
            None
        }
    }

    /// Epoch seconds at the start of study hour `t` (which may be negative).
    pub fn hour_start_timestamp(&self, t: i64) -> i64 {
        (self.start_time + t) * 3600
    }
}

/// Result of snapping a coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLookup {
    Cell(CellIndex),
    OutOfBounds,
}

impl GridLookup {
    pub fn cell(self) -> Option<CellIndex> {
        match self {
            GridLookup::Cell(c) => Some(c),
            GridLookup::OutOfBounds => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub x: usize,
    pub y: usize,
}

impl CellIndex {
    pub fn new(x: usize, y: usize) -> Self {
        CellIndex { x, y }
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorKind {
    Fixed,
    Mobile,
}

/// One raw sensor reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub source: SensorKind,
    pub sensor_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    pub pm25: f64,
    pub temp: Option<f64>,
    pub rh: Option<f64>,
}

impl Observation {
    pub fn is_valid(&self) -> bool {
        self.pm25.is_finite()
            && self.pm25 >= 0.0
            && self.lat.is_finite()
            && self.lon.is_finite()
            && self.rh.is_none_or(|rh| (0.0..=100.0).contains(&rh))
            && self.temp.is_none_or(f64::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    Fixed,
    MobileCalibrated,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Fixed => "fixed",
            LabelSource::MobileCalibrated => "mobile_calibrated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(LabelSource::Fixed),
            "mobile_calibrated" | "mobile" => Ok(LabelSource::MobileCalibrated),
            other => Err(Error::Schema(format!("unknown label source `{other}`"))),
        }
    }
}

/// Key of one grid-hour sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub t: usize,
    pub cell: CellIndex,
}

impl SampleKey {
    pub fn new(cell: CellIndex, t: usize) -> Self {
        SampleKey { t, cell }
    }

    /// Ordering used for every feature matrix: t-major, then y, then x.
    pub fn order_key(&self) -> (usize, usize, usize) {
        (self.t, self.cell.y, self.cell.x)
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x={} y={} t={}", self.cell.x, self.cell.y, self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub cell: CellIndex,
    pub t: usize,
    pub pm25: f64,
    pub source: LabelSource,
}

impl Label {
    pub fn key(&self) -> SampleKey {
        SampleKey::new(self.cell, self.t)
    }
}

/// Grid-hour labels with unique keys, kept in sample order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    labels: Vec<Label>,
}

impl LabelSet {
    pub fn new(mut labels: Vec<Label>) -> Result<Self> {
        labels.sort_by_key(|l| l.key().order_key());
        let mut seen = HashSet::with_capacity(labels.len());
        for l in &labels {
            if !(l.pm25.is_finite() && l.pm25 >= 0.0) {
                return Err(Error::Input(format!("label at {} has invalid pm25 {}", l.key(), l.pm25)));
            }
            if !seen.insert(l.key()) {
                return Err(Error::Input(format!("duplicate label at {}", l.key())));
            }
        }
        Ok(LabelSet { labels })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn keys(&self) -> Vec<SampleKey> {
        self.labels.iter().map(Label::key).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.pm25).collect()
    }

    pub fn count_source(&self, source: LabelSource) -> usize {
        self.labels.iter().filter(|l| l.source == source).count()
    }

    pub fn subset(&self, indices: &[usize]) -> LabelSet {
        let mut labels: Vec<Label> = indices.iter().map(|&i| self.labels[i]).collect();
        labels.sort_by_key(|l| l.key().order_key());
        LabelSet { labels }
    }

    pub fn filter(&self, keep: impl Fn(&Label) -> bool) -> LabelSet {
        LabelSet {
            labels: self.labels.iter().filter(|l| keep(l)).copied().collect(),
        }
    }
}

/// One hourly raster of concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    pub t: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major, `y * width + x`.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GridFrame {
    pub fn filled(spec: &GridSpec, t: usize, value: f64) -> Self {
        GridFrame {
            t,
            width: spec.width,
            height: spec.height,
            values: vec![value; spec.num_cells()],
            mask: vec![true; spec.num_cells()],
        }
    }

    pub fn get(&self, cell: CellIndex) -> Option<f64> {
        let i = cell.y * self.width + cell.x;
        self.mask[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn beijing() -> GridSpec {
        GridSpec::new(39.65, 116.10, 1.0, 55, 55, 424_056, 672).unwrap()
    }

    #[test]
    fn origin_maps_to_first_cell() {
        let spec = beijing();
        assert_eq!(
            spec.grid_index(spec.origin_lat, spec.origin_lon).unwrap(),
            GridLookup::Cell(CellIndex::new(0, 0))
        );
    }

    #[test]
    fn floor_semantics() {
        let spec = beijing();
        let (lat, lon) = spec.unproject(1.5, 0.5);
        assert_eq!(spec.grid_index(lat, lon).unwrap().cell(), Some(CellIndex::new(1, 0)));
    }

    #[test]
    fn far_east_is_out_of_bounds() {
        let spec = beijing();
        let (lat, lon) = spec.unproject(60.0, 0.5);
        assert_eq!(spec.grid_index(lat, lon).unwrap(), GridLookup::OutOfBounds);
        let (lat, lon) = spec.unproject(-0.2, 3.0);
        assert_eq!(spec.grid_index(lat, lon).unwrap(), GridLookup::OutOfBounds);
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let spec = beijing();
        assert!(matches!(spec.grid_index(f64::NAN, 116.0), Err(Error::Input(_))));
        assert!(spec.grid_index(39.0, f64::INFINITY).is_err());
    }

    #[test]
    fn hour_index_bounds() {
        let spec = beijing();
        let start = spec.start_time * 3600;
        assert_eq!(spec.hour_index(start), Some(0));
        assert_eq!(spec.hour_index(start + 3599), Some(0));
        assert_eq!(spec.hour_index(start + 3600 * 671), Some(671));
        assert_eq!(spec.hour_index(start + 3600 * 672), None);
        assert_eq!(spec.hour_index(start - 1), None);
        assert_eq!(spec.hour_offset(start - 1), -1);
    }

    #[test]
    fn beijing_grid_inference_count() {
        let spec = beijing();
        assert_eq!(spec.num_cells() * spec.num_hours, 2_032_800);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GridSpec::new(39.0, 116.0, 0.0, 5, 5, 0, 1).is_err());
        assert!(GridSpec::new(39.0, 116.0, 1.0, 0, 5, 0, 1).is_err());
        assert!(GridSpec::new(39.0, 116.0, 1.0, 5, 5, 0, 0).is_err());
    }

    #[test]
    fn label_set_rejects_duplicates() {
        let l = Label {
            cell: CellIndex::new(1, 1),
            t: 0,
            pm25: 3.0,
            source: LabelSource::Fixed,
        };
        assert!(LabelSet::new(vec![l, l]).is_err());
        assert_eq!(LabelSet::new(vec![l]).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn cell_centers_round_trip(x in 0usize..55, y in 0usize..55) {
            let spec = beijing();
            let c = CellIndex::new(x, y);
            let (lat, lon) = spec.cell_center_latlon(c);
            prop_assert_eq!(spec.grid_index(lat, lon).unwrap().cell(), Some(c));
        }

        #[test]
        fn hour_index_monotone(a in -10_000i64..3_000_000, b in -10_000i64..3_000_000) {
            let spec = beijing();
            let start = spec.start_time * 3600;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(spec.hour_offset(start + lo) <= spec.hour_offset(start + hi));
        }
    }
}
