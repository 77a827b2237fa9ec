use super::filters::{FilterBank, NeighborBanks};
use super::{DynamicSeries, Planes, StaticVolume};
use crate::error::{Error, Result};

/// Rectified filter responses, `width × height × channels`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MapVolume {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    data: Vec<f64>,
}

pub type StaticMap = MapVolume;
pub type DynamicMap = MapVolume;

impl MapVolume {
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

    fn concat(parts: Vec<MapVolume>) -> MapVolume {
        let width = parts[0].width;
        let height = parts[0].height;
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(width * height * channels);
        for p in parts {
            data.extend(p.data);
        }
        MapVolume {
            width,
            height,
            channels,
            data,
        }
    }
}

/// Zero-padded `k × k` window sums of one plane via a summed-area table.
fn box_sums(plane: &[f64], width: usize, height: usize, k: usize) -> Vec<f64> {
    if k == 1 {
        return plane.to_vec();
    }
    let w1 = width + 1;
    let mut sat = vec![0.0; w1 * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += plane[y * width + x];
            sat[(y + 1) * w1 + x + 1] = sat[y * w1 + x + 1] + row;
        }
    }
    let r = k / 2;
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(width);
            out[y * width + x] =
                sat[y1 * w1 + x1] - sat[y0 * w1 + x1] - sat[y1 * w1 + x0] + sat[y0 * w1 + x0];
        }
    }
    out
}

/// Cross-correlate a volume with every filter of a bank (stride 1, zero
/// padding that preserves `width × height`) and apply `max(0, ·)`.
///
/// Because each channel of a filter is a scaled mean filter, the response
/// is `Σ_c w_c / k² · boxsum_c`, so window sums are computed once per channel.
pub fn convolve<V: Planes + ?Sized>(volume: &V, bank: &FilterBank) -> Result<MapVolume> {
    if volume.depth() != bank.channels {
        return Err(Error::Shape(format!(
            "filter bank {} expects depth {}, volume has {}",
            bank.family,
            bank.channels,
            volume.depth()
        )));
    }
    let (w, h) = (volume.width(), volume.height());
    let k = bank.kernel_size();
    let norm = 1.0 / (k * k) as f64;
    let sums: Vec<Vec<f64>> = (0..volume.depth())
        .map(|c| box_sums(volume.plane(c), w, h, k))
        .collect();
    let n = w * h;
    let mut data = vec![0.0; bank.count * n];
    for (i, out) in data.chunks_mut(n).enumerate() {
        for (c, s) in sums.iter().enumerate() {
            let wc = bank.weight(i, c) * norm;
            for (o, v) in out.iter_mut().zip(s) {
                *o += wc * v;
            }
        }
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
    }
    Ok(MapVolume {
        width: w,
        height: h,
        channels: bank.count,
        data,
    })
}

/// Static neighbouring map: A responses then B responses (`2L` channels).
pub fn convolve_static(
    volume: &StaticVolume,
    a: &FilterBank,
    b: &FilterBank,
) -> Result<StaticMap> {
    Ok(MapVolume::concat(vec![convolve(volume, a)?, convolve(volume, b)?]))
}

/// Dynamic neighbouring map at hour `t`: C, D then E responses (`3M`
/// channels) over the stacked present/previous-hour volume.
pub fn convolve_dynamic(
    series: &DynamicSeries,
    t: usize,
    c: &FilterBank,
    d: &FilterBank,
    e: &FilterBank,
) -> Result<DynamicMap> {
    if t >= series.hours {
        return Err(Error::Shape(format!("hour {t} outside series of {} hours", series.hours)));
    }
    let v = series.volume_at(t);
    Ok(MapVolume::concat(vec![
        convolve(&v, c)?,
        convolve(&v, d)?,
        convolve(&v, e)?,
    ]))
}

impl NeighborBanks {
    pub fn static_map(&self, volume: &StaticVolume) -> Result<StaticMap> {
        convolve_static(volume, &self.a, &self.b)
    }

    pub fn dynamic_map(&self, series: &DynamicSeries, t: usize) -> Result<DynamicMap> {
        convolve_dynamic(series, t, &self.c, &self.d, &self.e)
    }
}
