use super::{Point, Sample};
use crate::error::{Error, Result};

/// Distance below which a query is treated as sitting on a source.
pub const IDW_SNAP_KM: f64 = 1e-9;

/// `Σ wᵢvᵢ / Σ wᵢ` with `wᵢ = dᵢ^(−power)`.
pub fn idw_interpolate(sources: &[Sample], query: Point, power: f64) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::Input("inverse distance weighting needs at least one source".into()));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::Input(format!("IDW power must be positive, got {power}")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in sources {
        let d = s.at.dist(&query);
        if d < IDW_SNAP_KM {
            return Ok(s.value);
        }
        let w = d.powf(-power);
        num += w * s.value;
        den += w;
    }
    Ok(num / den)
}
