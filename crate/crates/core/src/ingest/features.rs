use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::featurize::{Category, DynamicSeries, StaticVolume};
use crate::grid::GridSpec;

use super::read_rows;

fn index_of(names: &mut Vec<String>, lookup: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&i) = lookup.get(name) {
        return i;
    }
    names.push(name.to_string());
    lookup.insert(name.to_string(), names.len() - 1);
    names.len() - 1
}

fn check_complete(seen: &[bool], what: &str, path: &Path) -> Result<()> {
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 {
        return Err(Error::Schema(format!(
            "{}: {missing} {what} entries missing",
            path.display()
        )));
    }
    Ok(())
}

/// `x,y,feature_name,value`, one row per cell and feature. Channels keep
/// their first-appearance order; every cell must be present.
pub fn load_static_features(path: &Path, spec: &GridSpec) -> Result<StaticVolume> {
    let (rows, _) = read_rows(path, &["x", "y", "feature_name", "value"], |h, r| {
        let x: usize = h.field(r, 0)?.parse().ok()?;
        let y: usize = h.field(r, 1)?.parse().ok()?;
        (x < spec.width && y < spec.height).then_some(())?;
        Some((x, y, h.field(r, 2)?.to_string(), h.num(r, 3)?))
    })?;
    let mut names = Vec::new();
    let mut lookup = HashMap::new();
    let ids: Vec<usize> = rows.iter().map(|r| index_of(&mut names, &mut lookup, &r.2)).collect();
    let n = spec.num_cells();
    let mut data = vec![0.0; names.len() * n];
    let mut seen = vec![false; data.len()];
    for (r, c) in rows.iter().zip(ids) {
        let i = c * n + r.1 * spec.width + r.0;
        data[i] = r.3;
        seen[i] = true;
    }
    check_complete(&seen, "static feature", path)?;
    let categories = names.iter().map(|s| Category::from_channel_name(s)).collect();
    StaticVolume::new(spec.width, spec.height, names, categories, data)
}

/// `x,y,t,feature_name,value`, covering every cell and study hour.
pub fn load_dynamic_features(path: &Path, spec: &GridSpec) -> Result<DynamicSeries> {
    let (rows, _) = read_rows(path, &["x", "y", "t", "feature_name", "value"], |h, r| {
        let x: usize = h.field(r, 0)?.parse().ok()?;
        let y: usize = h.field(r, 1)?.parse().ok()?;
        let t: usize = h.field(r, 2)?.parse().ok()?;
        (x < spec.width && y < spec.height && t < spec.num_hours).then_some(())?;
        Some((x, y, t, h.field(r, 3)?.to_string(), h.num(r, 4)?))
    })?;
    let mut names = Vec::new();
    let mut lookup = HashMap::new();
    let ids: Vec<usize> = rows.iter().map(|r| index_of(&mut names, &mut lookup, &r.3)).collect();
    let n = spec.num_cells();
    let ch = names.len();
    let mut data = vec![0.0; spec.num_hours * ch * n];
    let mut seen = vec![false; data.len()];
    for (r, c) in rows.iter().zip(ids) {
        let i = (r.2 * ch + c) * n + r.1 * spec.width + r.0;
        data[i] = r.4;
        seen[i] = true;
    }
    check_complete(&seen, "dynamic feature", path)?;
    let categories = names.iter().map(|s| Category::from_channel_name(s)).collect();
    DynamicSeries::new(spec.width, spec.height, spec.num_hours, names, categories, data)
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub(crate) fn comments(w: &mut impl Write, header_comment: &[String]) -> std::io::Result<()> {
    for c in header_comment {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

/// Inverse of [`load_static_features`].
pub fn write_static_features(path: &Path, vol: &StaticVolume, header_comment: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    comments(&mut w, header_comment).map_err(io)?;
    writeln!(w, "x,y,feature_name,value").map_err(io)?;
    for y in 0..vol.height {
        for x in 0..vol.width {
            for (c, name) in vol.names.iter().enumerate() {
                writeln!(w, "{x},{y},{name},{}", vol.get(c, x, y)).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Inverse of [`load_dynamic_features`].
pub fn write_dynamic_features(path: &Path, ds: &DynamicSeries, header_comment: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    comments(&mut w, header_comment).map_err(io)?;
    writeln!(w, "x,y,t,feature_name,value").map_err(io)?;
    for t in 0..ds.hours {
        for y in 0..ds.height {
            for x in 0..ds.width {
                for (c, name) in ds.names.iter().enumerate() {
                    writeln!(w, "{x},{y},{t},{name},{}", ds.get(t, c, x, y)).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_round_trip() {
        let spec = GridSpec::new(40.0, 116.0, 1.0, 3, 2, 0, 2).unwrap();
        let names = vec!["geo_elev".to_string(), "transport_roads".to_string()];
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.37 - 1.0).collect();
        let vol = StaticVolume::new(
            3,
            2,
            names,
            vec![Category::Geography, Category::Transport],
            data,
        )
        .unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("s.csv");
        write_static_features(&p, &vol, &["seed=1".into()]).unwrap();
        assert_eq!(load_static_features(&p, &spec).unwrap(), vol);
    }

    #[test]
    fn dynamic_round_trip_and_gaps() {
        let spec = GridSpec::new(40.0, 116.0, 1.0, 2, 2, 0, 3).unwrap();
        let data: Vec<f64> = (0..24).map(|i| (i as f64).sqrt()).collect();
        let ds = DynamicSeries::new(
            2,
            2,
            3,
            vec!["vitality_pop".into(), "transport_speed".into()],
            vec![Category::Vitality, Category::Transport],
            data,
        )
        .unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("d.csv");
        write_dynamic_features(&p, &ds, &[]).unwrap();
        assert_eq!(load_dynamic_features(&p, &spec).unwrap(), ds);
        let short = GridSpec::new(40.0, 116.0, 1.0, 2, 2, 0, 4).unwrap();
        assert!(load_dynamic_features(&p, &short).is_err());
    }
}
