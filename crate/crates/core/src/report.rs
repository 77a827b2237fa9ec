//! Human-readable outputs: hourly raster files, grayscale images and the
//! markdown summary.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::featurize::{csv_reader, macro_column_station, Category};
use crate::grid::GridFrame;
use crate::ingest;

pub const TABLE_FILE: &str = "table.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SUMMARY_FILE: &str = "summary.md";
pub const RASTER_DIR: &str = "rasters";
pub const SCALE_FILE: &str = "scale.csv";

pub const COMPASS16: [&str; 16] = [
    "N", "NNE", "NE", "ENE", "E", "ESE", "SE", "SSE", "S", "SSW", "SW", "WSW", "W", "WNW", "NW", "NNW",
];

/// Counts of directions in 16 compass sectors of 22.5°, each centred on its
/// named direction.
pub fn wind_histogram(directions_deg: impl IntoIterator<Item = f64>) -> [usize; 16] {
    let mut h = [0; 16];
    for d in directions_deg {
        if d.is_finite() {
            let k = ((d + 11.25).rem_euclid(360.0) / 22.5) as usize;
            h[k.min(15)] += 1;
        }
    }
    h
}

/// Shortest decimal form with at least one fractional digit.
pub fn fmt_weight(w: f64) -> String {
    let s = format!("{w}");
    if s.contains(['.', 'e', 'N', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

/// `name weight` lines for the `k` largest weights (input already sorted).
pub fn top_importances(columns: &[(String, f64)], k: usize) -> Vec<String> {
    columns
        .iter()
        .take(k)
        .map(|(c, w)| format!("{c} {}", fmt_weight(*w)))
        .collect()
}

pub fn raster_file(t: usize) -> String {
    format!("hour_{t:04}.csv")
}

pub fn pgm_file(t: usize) -> String {
    format!("hour_{t:04}.pgm")
}

/// `x,y,value` for every cell; masked cells have an empty value.
pub fn write_raster_csv(path: &Path, frame: &GridFrame, header_comment: &[String]) -> Result<()> {
    let mut w = ingest::create(path)?;
    let io = |e| Error::io(path, e);
    ingest::comments(&mut w, header_comment).map_err(io)?;
    writeln!(w, "# t={}", frame.t).map_err(io)?;
    writeln!(w, "x,y,value").map_err(io)?;
    for y in 0..frame.height {
        for x in 0..frame.width {
            let i = y * frame.width + x;
            if frame.mask[i] {
                writeln!(w, "{x},{y},{}", frame.values[i]).map_err(io)?;
            } else {
                writeln!(w, "{x},{y},").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_raster_csv(path: &Path, t: usize) -> Result<GridFrame> {
    let mut rdr = csv_reader(path)?;
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<usize> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Schema(format!("{}: bad cell index", path.display())))
        };
        let v = match rec.get(2).unwrap_or("") {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| Error::Schema(format!("{}: bad value `{s}`", path.display())))?,
            ),
        };
        cells.push((num(0)?, num(1)?, v));
    }
    let width = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let height = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if width * height != cells.len() || cells.is_empty() {
        return Err(Error::Schema(format!("{}: incomplete raster", path.display())));
    }
    let mut frame = GridFrame {
        t,
        width,
        height,
        values: vec![0.0; width * height],
        mask: vec![false; width * height],
    };
    for (x, y, v) in cells {
        if let Some(v) = v {
            frame.values[y * width + x] = v;
            frame.mask[y * width + x] = true;
        }
    }
    Ok(frame)
}

/// Plain (P2) graymap, north row first. Valid values map linearly from
/// `[lo, hi]` onto `[0, 255]`; masked cells are 0.
pub fn frame_to_pgm(frame: &GridFrame, lo: f64, hi: f64, header_comment: &[String]) -> String {
    let mut s = String::from("P2\n");
    for c in header_comment {
        let _ = writeln!(s, "# {c}");
    }
    let _ = write!(s, "# t={} min={lo} max={hi}\n{} {}\n255\n", frame.t, frame.width, frame.height);
    let span = hi - lo;
    for y in (0..frame.height).rev() {
        let row: Vec<String> = (0..frame.width)
            .map(|x| {
                let i = y * frame.width + x;
                if !frame.mask[i] {
                    return "0".to_string();
                }
                let g = if span > 0.0 { 255.0 * (frame.values[i] - lo) / span } else { 0.0 };
                (g.round().clamp(0.0, 255.0) as u8).to_string()
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Range of the valid cells, `(0, 0)` when none are valid.
pub fn frame_range(frame: &GridFrame) -> (f64, f64) {
    let mut it = frame.values.iter().zip(&frame.mask).filter(|(_, m)| **m).map(|(v, _)| *v);
    match it.next() {
        None => (0.0, 0.0),
        Some(first) => it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))),
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn markdown_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

/// What [`emit_report`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub summary: PathBuf,
    pub images: usize,
}

/// Hourly raster CSVs present in `dir`, in hour order.
fn raster_hours(dir: &Path) -> Result<Vec<usize>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut hours = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(t) = name
            .strip_prefix("hour_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|n| n.parse::<usize>().ok())
        {
            hours.push(t);
        }
    }
    hours.sort_unstable();
    Ok(hours)
}

/// Build `summary.md` (and grayscale images for any hourly rasters) from
/// the artifacts in `out_dir` and the weather file in `data_dir`.
pub fn emit_report(out_dir: &Path, meteo_path: &Path, header_comment: &[String]) -> Result<ReportOutput> {
    let table = out_dir.join(TABLE_FILE);
    let importance = out_dir.join(IMPORTANCE_FILE);
    let missing: Vec<String> = [&table, &importance, &meteo_path.to_path_buf()]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }

    let mut md = String::new();
    for c in header_comment {
        let _ = writeln!(md, "<!-- {c} -->");
    }
    md.push_str("# Deep-MAPS run summary\n\n## Cross-validated metrics\n\n");
    let (h, rows) = read_table(&table)?;
    markdown_table(&mut md, &h, &rows);

    let ablation = out_dir.join(ABLATION_FILE);
    if ablation.is_file() {
        md.push_str("\n## Mobile coverage ablation\n\n");
        let (h, rows) = read_table(&ablation)?;
        markdown_table(&mut md, &h, &rows);
    }

    let (_, rows) = read_table(&importance)?;
    let mut weights: Vec<(String, Category, f64)> = Vec::with_capacity(rows.len());
    for r in &rows {
        if r.len() != 3 {
            return Err(Error::Schema(format!("{}: expected column,category,weight", importance.display())));
        }
        let w: f64 = r[2]
            .parse()
            .map_err(|_| Error::Schema(format!("{}: bad weight `{}`", importance.display(), r[2])))?;
        weights.push((r[0].clone(), r[1].parse()?, w));
    }
    weights.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let columns: Vec<(String, f64)> = weights.iter().map(|(c, _, w)| (c.clone(), *w)).collect();
    md.push_str("\n## Top feature importances\n\n```\n");
    for line in top_importances(&columns, 20) {
        let _ = writeln!(md, "{line}");
    }
    md.push_str("```\n\n## Importance by category\n\n| category | weight |\n|---|---|\n");
    for cat in Category::ALL {
        let w: f64 = weights.iter().filter(|(_, c, _)| *c == cat).map(|(_, _, w)| w).sum();
        if w > 0.0 {
            let _ = writeln!(md, "| {cat} | {w:.4} |");
        }
    }
    let mut stations: std::collections::BTreeMap<&str, f64> = Default::default();
    for (c, _, w) in &weights {
        if let Some(s) = macro_column_station(c) {
            *stations.entry(s).or_insert(0.0) += w;
        }
    }
    let mut stations: Vec<(&str, f64)> = stations.into_iter().collect();
    stations.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    md.push_str("\n## External station weights\n\n| station | weight |\n|---|---|\n");
    for (s, w) in &stations {
        let _ = writeln!(md, "| {s} | {w:.4} |");
    }

    let (records, _) = ingest::load_meteo(meteo_path)?;
    let hist = wind_histogram(records.iter().filter_map(|r| r.get(ingest::MeteoVariable::WindDir)));
    let total: usize = hist.iter().sum();
    md.push_str("\n## Wind direction (blowing from)\n\n| sector | count | share |\n|---|---|---|\n");
    for (name, n) in COMPASS16.iter().zip(hist) {
        let share = if total > 0 { n as f64 / total as f64 } else { 0.0 };
        let _ = writeln!(md, "| {name} | {n} | {share:.3} |");
    }

    let rdir = out_dir.join(RASTER_DIR);
    let hours = raster_hours(&rdir)?;
    if !hours.is_empty() {
        let mut scale = String::new();
        for c in header_comment {
            let _ = writeln!(scale, "# {c}");
        }
        scale.push_str("hour,min,max\n");
        for &t in &hours {
            let frame = read_raster_csv(&rdir.join(raster_file(t)), t)?;
            let (lo, hi) = frame_range(&frame);
            let p = rdir.join(pgm_file(t));
            std::fs::write(&p, frame_to_pgm(&frame, lo, hi, header_comment)).map_err(|e| Error::io(&p, e))?;
            let _ = writeln!(scale, "{t},{lo},{hi}");
        }
        let p = rdir.join(SCALE_FILE);
        std::fs::write(&p, scale).map_err(|e| Error::io(&p, e))?;
        let _ = writeln!(
            md,
            "\n## Rasters\n\n{} hourly rasters; images in `{RASTER_DIR}/`, grey levels map each hour's min..max (see `{SCALE_FILE}`).",
            hours.len()
        );
    }

    let summary = out_dir.join(SUMMARY_FILE);
    std::fs::write(&summary, md).map_err(|e| Error::io(&summary, e))?;
    Ok(ReportOutput {
        summary,
        images: hours.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_importance_line() {
        assert_eq!(top_importances(&[("a".into(), 1.0)], 20), vec!["a 1.0"]);
        assert_eq!(fmt_weight(0.25), "0.25");
    }

    #[test]
    fn east_wind_fills_east_bin() {
        let h = wind_histogram(vec![90.0; 10]);
        assert_eq!(h[4], 10);
        assert_eq!(h.iter().sum::<usize>(), 10);
        let edges = wind_histogram([359.0, 11.0, 11.3, 315.0]);
        assert_eq!((edges[0], edges[1], edges[14]), (2, 1, 1));
    }

    #[test]
    fn pgm_maps_range_and_masks() {
        let f = GridFrame {
            t: 3,
            width: 2,
            height: 2,
            values: vec![10.0, 20.0, 15.0, 0.0],
            mask: vec![true, true, true, false],
        };
        let (lo, hi) = frame_range(&f);
        assert_eq!((lo, hi), (10.0, 20.0));
        let p = frame_to_pgm(&f, lo, hi, &["config_hash=ab".into()]);
        let lines: Vec<&str> = p.lines().skip(1).collect();
        assert_eq!(p.lines().next(), Some("P2"));
        assert_eq!(lines[0], "# config_hash=ab");
        assert_eq!(lines[2], "2 2");
        assert_eq!(lines[3], "255");
        assert_eq!(lines[4], "128 0");
        assert_eq!(lines[5], "0 255");
    }

    #[test]
    fn raster_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = GridFrame {
            t: 7,
            width: 3,
            height: 2,
            values: vec![1.5, 0.0, 2.25, 3.0, 4.0, 5.0],
            mask: vec![true, false, true, true, true, true],
        };
        let p = dir.path().join(raster_file(7));
        write_raster_csv(&p, &f, &["config_hash=x".into()]).unwrap();
        assert_eq!(read_raster_csv(&p, 7).unwrap(), f);
    }

    #[test]
    fn missing_artifacts_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let e = emit_report(dir.path(), &dir.path().join("meteo.csv"), &[]).unwrap_err();
        match e {
            Error::MissingArtifacts(v) => {
                assert_eq!(v.len(), 3);
                assert!(v[0].ends_with(TABLE_FILE));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn report_from_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join(TABLE_FILE), "method,features,rmse,smape,r2\nidw,-,1.0,2.0,0.5\n").unwrap();
        std::fs::write(
            d.join(IMPORTANCE_FILE),
            "column,category,weight\nmacro_ext_NW_3,macro,0.5\ngeo_a,geography,0.3\nmacro_ext_N_1,macro,0.2\n",
        )
        .unwrap();
        let meteo = d.join("meteo.csv");
        std::fs::write(
            &meteo,
            "station_id,lat,lon,timestamp,temp,pressure,vapor_pressure,rh,wind_speed,wind_dir\n\
             w,40,116,0,,,,,2,90\nw,40,116,3600,,,,,2,91\n",
        )
        .unwrap();
        std::fs::create_dir(d.join(RASTER_DIR)).unwrap();
        let f = GridFrame::filled(&crate::grid::GridSpec::new(40.0, 116.0, 1.0, 2, 2, 0, 1).unwrap(), 0, 4.0);
        write_raster_csv(&d.join(RASTER_DIR).join(raster_file(0)), &f, &[]).unwrap();
        let out = emit_report(d, &meteo, &["config_hash=abc".into()]).unwrap();
        assert_eq!(out.images, 1);
        let md = std::fs::read_to_string(out.summary).unwrap();
        assert!(md.contains("| idw | - | 1.0 | 2.0 | 0.5 |"));
        assert!(md.contains("macro_ext_NW_3 0.5\n"));
        let nw = md.find("| ext_NW | 0.5000 |").unwrap();
        let n = md.find("| ext_N | 0.2000 |").unwrap();
        assert!(nw < n);
        assert!(md.contains("| E | 2 | 1.000 |"));
        assert!(d.join(RASTER_DIR).join(pgm_file(0)).is_file());
        assert!(d.join(RASTER_DIR).join(SCALE_FILE).is_file());
    }
}
