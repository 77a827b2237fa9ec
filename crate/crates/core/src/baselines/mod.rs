//! Comparison methods: inverse distance weighting, ordinary kriging and
//! k-nearest-neighbour regression.

mod idw;
mod knn;
mod kriging;

pub use idw::{idw_interpolate, IDW_SNAP_KM};
pub use knn::KnnRegressor;
pub use kriging::{
    empirical_variogram, empirical_variogram_pooled, fit_variogram, fit_variogram_pooled,
    kriging_predict, EmpiricalBin, Kriging, VariogramModel,
};

/// Planar location in kilometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A located measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub at: Point,
    pub value: f64,
}

impl Sample {
    pub fn new(x: f64, y: f64, value: f64) -> Self {
        Sample {
            at: Point::new(x, y),
            value,
        }
    }
}
