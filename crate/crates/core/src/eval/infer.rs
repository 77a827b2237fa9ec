use std::ops::Range;

use crate::error::{Error, Result};
use crate::featurize::{FeatureContext, FeatureSet};
use crate::gbdt::GbdtModel;
use crate::grid::{GridFrame, SampleKey};

/// Hours featurized and predicted together.
const HOUR_BATCH: usize = 24;

/// Predict every cell of the given hours and hand each frame to `sink` in
/// hour order. Values are clamped at zero; cells whose features are
/// unavailable are masked.
pub fn infer_hours(
    model: &GbdtModel,
    ctx: &FeatureContext,
    selection: FeatureSet,
    hours: Range<usize>,
    mut sink: impl FnMut(GridFrame) -> Result<()>,
) -> Result<()> {
    if hours.end > ctx.spec.num_hours {
        return Err(Error::Input(format!(
            "hours {hours:?} exceed the {}-hour study window",
            ctx.spec.num_hours
        )));
    }
    let spec = &ctx.spec;
    let cells = spec.num_cells();
    let mut start = hours.start;
    while start < hours.end {
        let end = (start + HOUR_BATCH).min(hours.end);
        let keys: Vec<SampleKey> = (start..end).flat_map(|t| ctx.hour_keys(t)).collect();
        let (matrix, _) = ctx.assemble_masked(&keys, selection)?;
        let preds = model.predict(&matrix)?;
        let mut frames: Vec<GridFrame> = (start..end)
            .map(|t| GridFrame {
                t,
                width: spec.width,
                height: spec.height,
                values: vec![0.0; cells],
                mask: vec![false; cells],
            })
            .collect();
        for (k, p) in matrix.keys().iter().zip(preds) {
            let f = &mut frames[k.t - start];
            let i = spec.offset(k.cell);
            f.values[i] = p.max(0.0);
            f.mask[i] = true;
        }
        for f in frames {
            let masked = cells - f.valid_count();
            if masked > 0 {
                log::warn!("hour {}: {masked} cells masked (features unavailable)", f.t);
            }
            sink(f)?;
        }
        start = end;
    }
    Ok(())
}

/// One frame per study hour.
pub fn infer_city(model: &GbdtModel, ctx: &FeatureContext, selection: FeatureSet) -> Result<Vec<GridFrame>> {
    let mut out = Vec::with_capacity(ctx.spec.num_hours);
    infer_hours(model, ctx, selection, 0..ctx.spec.num_hours, |f| {
        out.push(f);
        Ok(())
    })?;
    Ok(out)
}
