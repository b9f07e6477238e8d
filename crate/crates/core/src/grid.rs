//! Regular grids of V_z: dense forward evaluation and gridding of
//! scattered survey values.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::{Deposit, Station};
use crate::survey::{Survey, Truth};

/// Lattice geometry: `nx` nodes from `x_min` to `x_max` inclusive, same in y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(x: (f64, f64), nx: usize, y: (f64, f64), ny: usize) -> Result<Self> {
        let g = GridSpec {
            x_min: x.0,
            x_max: x.1,
            nx,
            y_min: y.0,
            y_max: y.1,
            ny,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Invalid(format!(
                "grid needs nx, ny >= 2 (got {}x{})",
                self.nx, self.ny
            )));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::Invalid("grid ranges are degenerate".into()));
        }
        Ok(())
    }

    /// Bounding box `(x_min, x_max, y_min, y_max)` widened by `margin` times
    /// its extent on every side.
    pub fn around(bounds: (f64, f64, f64, f64), margin: f64, nx: usize, ny: usize) -> Result<Self> {
        let (x0, x1, y0, y1) = bounds;
        let (mx, my) = ((x1 - x0) * margin, (y1 - y0) * margin);
        GridSpec::new((x0 - mx, x1 + mx), nx, (y0 - my, y1 + my), ny)
    }

    /// Default survey grid: 61×61 over the station bounding box plus 10%.
    pub fn for_survey(survey: &Survey) -> Result<Self> {
        GridSpec::around(survey.bounds(), 0.1, 61, 61)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.dy()
    }

    pub fn node(&self, i: usize, j: usize) -> Station {
        Station::new(self.x(i), self.y(j))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node nearest to `(x, y)`, clamped into the grid.
    pub fn nearest_node(&self, x: f64, y: f64) -> (usize, usize) {
        let fi = ((x - self.x_min) / self.dx()).round();
        let fj = ((y - self.y_min) / self.dy()).round();
        (
            fi.clamp(0.0, (self.nx - 1) as f64) as usize,
            fj.clamp(0.0, (self.ny - 1) as f64) as usize,
        )
    }
}

/// Values on a [`GridSpec`], row-major with x fastest: `values[j * nx + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::Invalid(format!(
                "grid expects {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        Ok(FieldGrid { spec, values })
    }

    pub fn from_fn(spec: GridSpec, exec: Execution, f: impl Fn(Station) -> f64 + Sync + Send) -> Result<Self> {
        spec.validate()?;
        let nx = spec.nx;
        let values = exec.map_range(spec.len(), |k| f(spec.node(k % nx, k / nx)));
        FieldGrid::new(spec, values)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spec.nx + i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// (i, j) of the largest value; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best % self.spec.nx, best / self.spec.nx)
    }

    /// Bilinear interpolation; `None` outside the grid.
    pub fn interpolate(&self, x: f64, y: f64) -> Option<f64> {
        let s = &self.spec;
        let fx = (x - s.x_min) / s.dx();
        let fy = (y - s.y_min) / s.dy();
        let eps = 1e-9;
        if fx < -eps || fy < -eps || fx > (s.nx - 1) as f64 + eps || fy > (s.ny - 1) as f64 + eps {
            return None;
        }
        let i = (fx.floor().max(0.0) as usize).min(s.nx - 2);
        let j = (fy.floor().max(0.0) as usize).min(s.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        Some(v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty)
    }

    pub fn scaled(&self, factor: f64) -> FieldGrid {
        FieldGrid {
            spec: self.spec,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        out.push_str(GRID_HEADER);
        out.push('\n');
        out.push_str("x_min_km,x_max_km,nx,y_min_km,y_max_km,ny\n");
        let _ = writeln!(out, "{},{},{},{},{},{}", s.x_min, s.x_max, s.nx, s.y_min, s.y_max, s.ny);
        for j in 0..s.ny {
            let row: Vec<String> = (0..s.nx).map(|i| format!("{}", self.at(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        if lines.first() != Some(&GRID_HEADER) {
            return Err(perr(1, format!("expected `{GRID_HEADER}`")));
        }
        let meta: Vec<&str> = lines
            .get(2)
            .ok_or_else(|| perr(3, "missing geometry row".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        if meta.len() != 6 {
            return Err(perr(3, "geometry row needs 6 fields".into()));
        }
        let f = |k: usize| {
            meta[k]
                .parse::<f64>()
                .map_err(|e| perr(3, format!("field {}: {e}", k + 1)))
        };
        let u = |k: usize| {
            meta[k]
                .parse::<usize>()
                .map_err(|e| perr(3, format!("field {}: {e}", k + 1)))
        };
        let spec = GridSpec::new((f(0)?, f(1)?), u(2)?, (f(3)?, f(4)?), u(5)?).map_err(|e| perr(3, e.to_string()))?;
        let mut values = Vec::with_capacity(spec.len());
        let rows: Vec<(usize, &str)> = lines
            .iter()
            .enumerate()
            .skip(3)
            .filter(|(_, l)| !l.is_empty())
            .map(|(k, l)| (k + 1, *l))
            .collect();
        if rows.len() != spec.ny {
            return Err(perr(0, format!("expected {} rows, got {}", spec.ny, rows.len())));
        }
        for (n, row) in rows {
            let cols: Vec<&str> = row.split(',').collect();
            if cols.len() != spec.nx {
                return Err(perr(n, format!("expected {} values, got {}", spec.nx, cols.len())));
            }
            for c in cols {
                values.push(c.trim().parse::<f64>().map_err(|e| perr(n, format!("`{c}`: {e}")))?);
            }
        }
        FieldGrid::new(spec, values)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub const GRID_HEADER: &str = "# gravinv-grid v1";

/// Dense evaluation of a deposit's field on the lattice.
pub fn grid_field(d: &Deposit, spec: GridSpec, exec: Execution) -> Result<FieldGrid> {
    grid_truth(&Truth::Deposit(d.clone()), spec, exec)
}

pub fn grid_truth(truth: &Truth, spec: GridSpec, exec: Execution) -> Result<FieldGrid> {
    spec.validate()?;
    let nx = spec.nx;
    let values: Vec<f64> = exec
        .map_range(spec.len(), |k| truth.vz(spec.node(k % nx, k / nx)))
        .into_iter()
        .collect::<Result<_>>()?;
    FieldGrid::new(spec, values)
}

/// Interpolator used to put scattered survey values on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Gridder {
    /// Value of the nearest station.
    Nearest,
    /// Shepard inverse-distance weighting `w = 1 / d^power`.
    Idw { power: f64 },
    /// Thin-plate spline `φ(r) = r² ln r` with linear drift; `smoothing`
    /// is added to the kernel diagonal (0 interpolates exactly).
    ThinPlate { smoothing: f64 },
}

impl Default for Gridder {
    fn default() -> Self {
        Gridder::ThinPlate { smoothing: 0.0 }
    }
}

pub fn grid_survey(survey: &Survey, spec: GridSpec, gridder: Gridder, exec: Execution) -> Result<FieldGrid> {
    spec.validate()?;
    match gridder {
        Gridder::Nearest => FieldGrid::from_fn(spec, exec, |p| {
            survey
                .samples
                .iter()
                .min_by(|a, b| {
                    let da = a.station.distance_to(p.x, p.y);
                    let db = b.station.distance_to(p.x, p.y);
                    da.total_cmp(&db)
                })
                .map(|s| s.vz)
                .unwrap_or(0.0)
        }),
        Gridder::Idw { power } => {
            if !(power > 0.0) {
                return Err(Error::Invalid(format!("IDW power must be positive, got {power}")));
            }
            FieldGrid::from_fn(spec, exec, |p| idw_at(survey, p, power))
        }
        Gridder::ThinPlate { smoothing } => {
            let tps = ThinPlate::fit(survey, smoothing)?;
            FieldGrid::from_fn(spec, exec, |p| tps.eval(p))
        }
    }
}

fn idw_at(survey: &Survey, p: Station, power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in &survey.samples {
        let d = s.station.distance_to(p.x, p.y);
        if d < 1e-12 {
            return s.vz;
        }
        let w = d.powf(-power);
        num += w * s.vz;
        den += w;
    }
    num / den
}

/// Fitted thin-plate spline in normalised coordinates.
pub struct ThinPlate {
    centers: Vec<(f64, f64)>,
    weights: Vec<f64>,
    affine: [f64; 3],
    shift: (f64, f64),
    scale: f64,
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

impl ThinPlate {
    pub fn fit(survey: &Survey, smoothing: f64) -> Result<Self> {
        let n = survey.len();
        if n < 3 {
            return Err(Error::Invalid("thin-plate gridding needs >= 3 stations".into()));
        }
        let (x0, x1, y0, y1) = survey.bounds();
        let shift = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let scale = (x1 - x0).max(y1 - y0).max(1e-12);
        let centers: Vec<(f64, f64)> = survey
            .samples
            .iter()
            .map(|s| ((s.station.x - shift.0) / scale, (s.station.y - shift.1) / scale))
            .collect();
        let m = n + 3;
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for i in 0..n {
            for j in 0..n {
                let dx = centers[i].0 - centers[j].0;
                let dy = centers[i].1 - centers[j].1;
                a[(i, j)] = tps_kernel(dx * dx + dy * dy);
            }
            a[(i, i)] += smoothing;
            let row = [1.0, centers[i].0, centers[i].1];
            for (k, v) in row.iter().enumerate() {
                a[(i, n + k)] = *v;
                a[(n + k, i)] = *v;
            }
            b[i] = survey.samples[i].vz;
        }
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("thin-plate system is singular (collinear stations?)".into()))?;
        Ok(ThinPlate {
            centers,
            weights: sol.as_slice()[..n].to_vec(),
            affine: [sol[n], sol[n + 1], sol[n + 2]],
            shift,
            scale,
        })
    }

    pub fn eval(&self, p: Station) -> f64 {
        let x = (p.x - self.shift.0) / self.scale;
        let y = (p.y - self.shift.1) / self.scale;
        let mut v = self.affine[0] + self.affine[1] * x + self.affine[2] * y;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let dx = x - c.0;
            let dy = y - c.1;
            v += w * tps_kernel(dx * dx + dy * dy);
        }
        v
    }
}
