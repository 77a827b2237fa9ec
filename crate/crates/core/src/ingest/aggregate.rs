use std::collections::BTreeMap;

use crate::grid::{CellIndex, GridSpec, Label, LabelSource, Observation, SensorKind};

use super::StationMeta;

/// Robust grid-hour summary of mobile readings.
#[derive(Debug, Clone, PartialEq)]
pub struct MobileAggregate {
    pub cell: CellIndex,
    pub t: usize,
    pub pm25_median: f64,
    pub temp_mean: Option<f64>,
    pub rh_mean: Option<f64>,
    pub sample_count: usize,
}

/// Median of a non-empty slice (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const HAMPEL_K: f64 = 3.0;
const MAD_SCALE: f64 = 1.4826;
const HAMPEL_MIN_GROUP: usize = 5;

/// Indices of values that survive the Hampel filter. Groups smaller than
/// five are returned whole.
pub fn hampel_filter(values: &[f64]) -> Vec<usize> {
    if values.len() < HAMPEL_MIN_GROUP {
        return (0..values.len()).collect();
    }
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    let limit = HAMPEL_K * MAD_SCALE * median(&dev);
    (0..values.len()).filter(|&i| dev[i] <= limit).collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Group mobile points by grid-hour, drop Hampel outliers, and summarise
/// survivors by their pm25 median and temperature and humidity means.
/// Points outside the raster or study window are ignored.
pub fn aggregate_mobile(points: &[Observation], spec: &GridSpec) -> Vec<MobileAggregate> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<&Observation>> = BTreeMap::new();
    for p in points {
        let Some(t) = spec.hour_index(p.timestamp) else {
            continue;
        };
        let Ok(lookup) = spec.grid_index(p.lat, p.lon) else {
            continue;
        };
        if let Some(c) = lookup.cell() {
            groups.entry((t, c.y, c.x)).or_default().push(p);
        }
    }
    groups
        .into_iter()
        .filter_map(|((t, y, x), g)| {
            let pm: Vec<f64> = g.iter().map(|o| o.pm25).collect();
            let keep = hampel_filter(&pm);
            if keep.is_empty() {
                return None;
            }
            let kept: Vec<f64> = keep.iter().map(|&i| pm[i]).collect();
            Some(MobileAggregate {
                cell: CellIndex::new(x, y),
                t,
                pm25_median: median(&kept),
                temp_mean: mean_of(keep.iter().filter_map(|&i| g[i].temp)),
                rh_mean: mean_of(keep.iter().filter_map(|&i| g[i].rh)),
                sample_count: keep.len(),
            })
        })
        .collect()
}

/// Mean fixed-station reading per grid-hour inside the raster and window.
/// Stations flagged outside the study area never become labels.
pub fn fixed_labels(observations: &[Observation], spec: &GridSpec, stations: &[StationMeta]) -> Vec<Label> {
    let outside: std::collections::HashSet<&str> = stations
        .iter()
        .filter(|s| !s.inside_study_area)
        .map(|s| s.station_id.as_str())
        .collect();
    let mut groups: BTreeMap<(usize, usize, usize), (f64, usize)> = BTreeMap::new();
    for o in observations {
        if o.source != SensorKind::Fixed || outside.contains(o.sensor_id.as_str()) {
            continue;
        }
        let (Some(t), Ok(lookup)) = (spec.hour_index(o.timestamp), spec.grid_index(o.lat, o.lon)) else {
            continue;
        };
        if let Some(c) = lookup.cell() {
            let e = groups.entry((t, c.y, c.x)).or_insert((0.0, 0));
            e.0 += o.pm25;
            e.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((t, y, x), (s, n))| Label {
            cell: CellIndex::new(x, y),
            t,
            pm25: s / n as f64,
            source: LabelSource::Fixed,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new(40.0, 116.0, 1.0, 10, 10, 0, 24).unwrap()
    }

    fn point(spec: &GridSpec, x: usize, y: usize, t: i64, pm: f64) -> Observation {
        let (lat, lon) = spec.cell_center_latlon(CellIndex::new(x, y));
        Observation {
            source: SensorKind::Mobile,
            sensor_id: "v".into(),
            lat,
            lon,
            timestamp: t * 3600 + 10,
            pm25: pm,
            temp: Some(20.0),
            rh: Some(40.0),
        }
    }

    #[test]
    fn small_group_median() {
        let s = spec();
        let pts: Vec<_> = [10.0, 11.0, 12.0].iter().map(|v| point(&s, 1, 1, 0, *v)).collect();
        let a = aggregate_mobile(&pts, &s);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].pm25_median, 11.0);
        assert_eq!(a[0].sample_count, 3);
    }

    #[test]
    fn hampel_drops_spike() {
        let s = spec();
        let pts: Vec<_> = [10.0, 10.0, 10.0, 10.0, 1000.0]
            .iter()
            .map(|v| point(&s, 1, 1, 0, *v))
            .collect();
        let a = aggregate_mobile(&pts, &s);
        assert_eq!(a[0].pm25_median, 10.0);
        assert_eq!(a[0].sample_count, 4);
    }

    #[test]
    fn hampel_threshold_by_hand() {
        // median 5.5, |dev| = {4.5,2.5,0.5,0.5,2.5,44.5}, MAD 2.5, limit 11.1195.
        let v = [1.0, 3.0, 5.0, 6.0, 8.0, 50.0];
        assert_eq!(median(&v), 5.5);
        let keep = hampel_filter(&v);
        assert_eq!(keep, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn one_point_per_cell() {
        let s = spec();
        let pts = vec![point(&s, 1, 1, 0, 5.0), point(&s, 2, 1, 0, 7.0)];
        let a = aggregate_mobile(&pts, &s);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|g| g.sample_count == 1));
        assert!(aggregate_mobile(&[], &s).is_empty());
    }

    #[test]
    fn missing_covariates_stay_missing() {
        let s = spec();
        let mut p = point(&s, 0, 0, 3, 9.0);
        p.temp = None;
        let a = aggregate_mobile(&[p], &s);
        assert_eq!(a[0].temp_mean, None);
        assert_eq!(a[0].rh_mean, Some(40.0));
    }

    #[test]
    fn fixed_labels_average_per_hour() {
        let s = spec();
        let mut a = point(&s, 2, 2, 1, 10.0);
        a.source = SensorKind::Fixed;
        let mut b = a.clone();
        b.pm25 = 20.0;
        let mut far = a.clone();
        far.sensor_id = "far".into();
        let meta = vec![StationMeta {
            station_id: "far".into(),
            lat: 0.0,
            lon: 0.0,
            inside_study_area: false,
        }];
        let l = fixed_labels(&[a, b, far], &s, &meta);
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].pm25, 15.0);
        assert_eq!((l[0].cell, l[0].t), (CellIndex::new(2, 2), 1));
    }
}
