use crate::error::{Error, Result};

/// Uniform flow for one hour, km/h toward the east (`u`) and north (`v`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wind {
    pub u_kmh: f64,
    pub v_kmh: f64,
}

impl Wind {
    /// From a meteorological direction (degrees the wind blows from) and a
    /// speed in m/s.
    pub fn from_met(dir_from_deg: f64, speed_ms: f64) -> Wind {
        let s = speed_ms * 3.6;
        let r = dir_from_deg.to_radians();
        Wind {
            u_kmh: -s * r.sin(),
            v_kmh: -s * r.cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Zero-flux walls.
    Closed,
    /// Inflow edges see the given concentration per simulated hour;
    /// outflow edges are zero-gradient.
    Inflow(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionParams {
    pub cell_size_km: f64,
    pub diffusion_km2h: f64,
    pub decay_per_hour: f64,
    /// Sub-steps per hour; `0` picks the smallest count that keeps the
    /// explicit update positive.
    pub substeps: usize,
}

/// Hourly mean concentrations, `hours × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthField {
    pub width: usize,
    pub height: usize,
    pub hours: usize,
    pub data: Vec<f64>,
    /// Mass removed by clipping negative values, summed over cells.
    pub clipped_mass: f64,
    pub clipped_cells: usize,
}

impl TruthField {
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, x: usize, y: usize) -> f64 {
        self.frame(t)[y * self.width + x]
    }
}

/// Explicit 2-D advection-diffusion on a uniform grid: first-order upwind
/// advection in flux form, five-point diffusion, source injection and
/// linear decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispersion {
    pub width: usize,
    pub height: usize,
    pub params: DispersionParams,
}

impl Dispersion {
    pub fn new(width: usize, height: usize, params: DispersionParams) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("dispersion grid must be non-empty".into()));
        }
        let p = &params;
        if !(p.cell_size_km > 0.0) || !(p.diffusion_km2h >= 0.0) || !(p.decay_per_hour >= 0.0) {
            return Err(Error::Config(
                "cell size must be positive; diffusion and decay non-negative".into(),
            ));
        }
        Ok(Dispersion { width, height, params })
    }

    /// Sub-steps per hour for the given winds. A fixed count is checked
    /// against the diffusion-number (≤ 0.25) and Courant (≤ 1) limits.
    pub fn substeps(&self, winds: &[Wind]) -> Result<usize> {
        let dx = self.params.cell_size_km;
        let d = self.params.diffusion_km2h;
        let max_u = winds.iter().map(|w| w.u_kmh.abs().max(w.v_kmh.abs())).fold(0.0, f64::max);
        let max_sum = winds.iter().map(|w| w.u_kmh.abs() + w.v_kmh.abs()).fold(0.0, f64::max);
        if winds.iter().any(|w| !w.u_kmh.is_finite() || !w.v_kmh.is_finite()) {
            return Err(Error::Config("non-finite wind".into()));
        }
        if self.params.substeps > 0 {
            let dt = 1.0 / self.params.substeps as f64;
            let diff_num = d * dt / (dx * dx);
            let courant = max_u * dt / dx;
            if diff_num > 0.25 + 1e-12 || courant > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "unstable explicit step: diffusion number {diff_num:.3} (max 0.25), \
                     Courant number {courant:.3} (max 1)"
                )));
            }
            return Ok(self.params.substeps);
        }
        // Keeps every update a convex combination of old values.
        let rate = max_sum / dx + 4.0 * d / (dx * dx) + self.params.decay_per_hour;
        Ok(((rate / 0.9).ceil() as usize).max(1))
    }

    /// One sub-step of length `dt` hours. Returns `(clipped mass, clipped
    /// cells)`.
    pub fn step(
        &self,
        field: &mut Vec<f64>,
        emission: &[f64],
        wind: Wind,
        inflow: Option<f64>,
        dt: f64,
    ) -> (f64, usize) {
        let (w, h) = (self.width, self.height);
        let dx = self.params.cell_size_km;
        let lam = dt / dx;
        let mu = self.params.diffusion_km2h * dt / (dx * dx);
        let decay = self.params.decay_per_hour * dt;
        let (u, v) = (wind.u_kmh, wind.v_kmh);
        let old = field.clone();
        let at = |x: usize, y: usize| old[y * w + x];
        // Value beyond an edge: inflow value on an inflow edge, the edge
        // cell itself (zero gradient, zero flux) otherwise.
        let ghost = |inside: f64, entering: bool| match (inflow, entering) {
            (Some(b), true) => b,
            _ => inside,
        };
        for y in 0..h {
            for x in 0..w {
                let c = at(x, y);
                let west = if x > 0 { at(x - 1, y) } else { ghost(c, u > 0.0) };
                let east = if x + 1 < w { at(x + 1, y) } else { ghost(c, u < 0.0) };
                let south = if y > 0 { at(x, y - 1) } else { ghost(c, v > 0.0) };
                let north = if y + 1 < h { at(x, y + 1) } else { ghost(c, v < 0.0) };
                // Upwind face fluxes; walls carry no advective flux when closed.
                let closed = inflow.is_none();
                let flux = |left: f64, right: f64, vel: f64, wall: bool| -> f64 {
                    if wall && closed {
                        0.0
                    } else if vel > 0.0 {
                        vel * left
                    } else {
                        vel * right
                    }
                };
                let fw = flux(west, c, u, x == 0);
                let fe = flux(c, east, u, x + 1 == w);
                let fs = flux(south, c, v, y == 0);
                let fn_ = flux(c, north, v, y + 1 == h);
                let adv = -lam * (fe - fw + fn_ - fs);
                let diff = mu * (west + east + south + north - 4.0 * c);
                field[y * w + x] = c + adv + diff + emission[y * w + x] * dt - decay * c;
            }
        }
        let mut clipped = (0.0, 0);
        for c in field.iter_mut() {
            if *c < 0.0 {
                clipped.0 -= *c;
                clipped.1 += 1;
                *c = 0.0;
            }
        }
        clipped
    }

    /// Run `winds.len()` hours from `initial`, returning the hourly means of
    /// the last `record` hours. `emissions[t]` is the source rate
    /// (concentration per hour) during hour `t`.
    pub fn simulate(
        &self,
        initial: &[f64],
        emissions: &[Vec<f64>],
        winds: &[Wind],
        boundary: &Boundary,
        record: usize,
    ) -> Result<TruthField> {
        let n = self.width * self.height;
        let hours = winds.len();
        if initial.len() != n || emissions.len() != hours || emissions.iter().any(|e| e.len() != n) {
            return Err(Error::Shape("dispersion inputs do not match the grid and hours".into()));
        }
        if record > hours {
            return Err(Error::Config("cannot record more hours than simulated".into()));
        }
        if let Boundary::Inflow(b) = boundary {
            if b.len() != hours {
                return Err(Error::Shape("inflow series must cover every simulated hour".into()));
            }
        }
        let steps = self.substeps(winds)?;
        let dt = 1.0 / steps as f64;
        let mut field = initial.to_vec();
        let mut data = Vec::with_capacity(record * n);
        let (mut clipped_mass, mut clipped_cells) = (0.0, 0);
        let first_recorded = hours - record;
        for t in 0..hours {
            let inflow = match boundary {
                Boundary::Closed => None,
                Boundary::Inflow(b) => Some(b[t]),
            };
            let mut mean = vec![0.0; n];
            for _ in 0..steps {
                let (m, c) = self.step(&mut field, &emissions[t], winds[t], inflow, dt);
                clipped_mass += m;
                clipped_cells += c;
                for (a, f) in mean.iter_mut().zip(&field) {
                    *a += f / steps as f64;
                }
            }
            if t >= first_recorded {
                data.extend(mean);
            }
        }
        Ok(TruthField {
            width: self.width,
            height: self.height,
            hours: record,
            data,
            clipped_mass,
            clipped_cells,
        })
    }
}
