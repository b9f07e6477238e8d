//! Direct problem by summation over elementary vertical bars.
//!
//! A body is a regular grid of columns; each column holds the depth
//! intervals `[top, bottom]` occupied by the body. Several intervals in one
//! column carve voids out of bodies that are not vertically star-shaped.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Spheroid, Station};
use crate::units::G_U;

/// Occupied depth range of one column, km (`0 < top < bottom`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub top: f64,
    pub bottom: f64,
}

impl Interval {
    pub fn thickness(&self) -> f64 {
        self.bottom - self.top
    }
}

/// A homogeneous body discretised into vertical columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BarBody {
    origin_x: f64,
    origin_y: f64,
    dx: f64,
    dy: f64,
    nx: usize,
    ny: usize,
    rho: f64,
    /// Row-major, `cells[j * nx + i]`.
    cells: Vec<Vec<Interval>>,
}

impl BarBody {
    /// `origin` is the lower-left corner of cell (0, 0); column (i, j) is
    /// centred at `origin + ((i + ½)·dx, (j + ½)·dy)`.
    pub fn new(
        origin: (f64, f64),
        step: (f64, f64),
        dims: (usize, usize),
        rho: f64,
        cells: Vec<Vec<Interval>>,
    ) -> Result<Self> {
        let (dx, dy) = step;
        let (nx, ny) = dims;
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::Invalid(format!("bar steps must be positive ({dx}, {dy})")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Invalid(format!("density must be positive, got {rho}")));
        }
        if cells.len() != nx * ny {
            return Err(Error::Invalid(format!(
                "expected {} cells, got {}",
                nx * ny,
                cells.len()
            )));
        }
        for (k, col) in cells.iter().enumerate() {
            let mut prev = 0.0;
            for iv in col {
                if !(iv.top > prev && iv.bottom > iv.top) || !iv.bottom.is_finite() {
                    return Err(Error::Invalid(format!(
                        "cell {k}: intervals must satisfy 0 < top < bottom and be sorted/disjoint"
                    )));
                }
                prev = iv.bottom;
            }
        }
        Ok(BarBody {
            origin_x: origin.0,
            origin_y: origin.1,
            dx,
            dy,
            nx,
            ny,
            rho,
            cells,
        })
    }

    pub fn empty(rho: f64) -> Self {
        BarBody {
            origin_x: 0.0,
            origin_y: 0.0,
            dx: 1.0,
            dy: 1.0,
            nx: 0,
            ny: 0,
            rho,
            cells: Vec::new(),
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell(&self, i: usize, j: usize) -> &[Interval] {
        &self.cells[j * self.nx + i]
    }

    pub fn column_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin_x + (i as f64 + 0.5) * self.dx,
            self.origin_y + (j as f64 + 0.5) * self.dy,
        )
    }

    /// Same geometry with a different density.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        BarBody::new(
            (self.origin_x, self.origin_y),
            (self.dx, self.dy),
            (self.nx, self.ny),
            rho,
            self.cells.clone(),
        )
    }

    pub fn vz(&self, st: Station) -> f64 {
        bar_vz(self, st)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(BAR_HEADER);
        out.push('\n');
        out.push_str("origin_x_km,origin_y_km,dx_km,dy_km,nx,ny,rho_g_cm3\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.origin_x, self.origin_y, self.dx, self.dy, self.nx, self.ny, self.rho
        );
        for j in 0..self.ny {
            for i in 0..self.nx {
                let _ = write!(out, "{i},{j}");
                for iv in self.cell(i, j) {
                    let _ = write!(out, ",{},{}", iv.top, iv.bottom);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
        match lines.next() {
            Some((_, l)) if l == BAR_HEADER => {}
            Some((n, l)) => return Err(perr(n, format!("expected `{BAR_HEADER}`, got `{l}`"))),
            None => return Err(perr(1, "empty file".into())),
        }
        let _columns = lines.next().ok_or_else(|| perr(2, "missing column header".into()))?;
        let (n, meta) = lines.next().ok_or_else(|| perr(3, "missing geometry row".into()))?;
        let meta: Vec<&str> = meta.split(',').map(str::trim).collect();
        if meta.len() != 7 {
            return Err(perr(n, format!("geometry row needs 7 fields, got {}", meta.len())));
        }
        let f = |k: usize| -> Result<f64> {
            meta[k]
                .parse::<f64>()
                .map_err(|e| perr(n, format!("field {}: {e}", k + 1)))
        };
        let u = |k: usize| -> Result<usize> {
            meta[k]
                .parse::<usize>()
                .map_err(|e| perr(n, format!("field {}: {e}", k + 1)))
        };
        let (ox, oy, dx, dy, nx, ny, rho) = (f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?, f(6)?);
        let mut cells = vec![Vec::new(); nx * ny];
        let mut seen = vec![false; nx * ny];
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split(',').map(str::trim).collect();
            if vals.len() < 2 || !vals.len().is_multiple_of(2) {
                return Err(perr(n, "cell row needs i,j followed by top,bottom pairs".into()));
            }
            let i: usize = vals[0].parse().map_err(|e| perr(n, format!("i: {e}")))?;
            let j: usize = vals[1].parse().map_err(|e| perr(n, format!("j: {e}")))?;
            if i >= nx || j >= ny {
                return Err(perr(n, format!("cell ({i}, {j}) outside {nx}x{ny}")));
            }
            let mut col = Vec::new();
            for pair in vals[2..].chunks(2) {
                let top: f64 = pair[0].parse().map_err(|e| perr(n, format!("top: {e}")))?;
                let bottom: f64 = pair[1].parse().map_err(|e| perr(n, format!("bottom: {e}")))?;
                col.push(Interval { top, bottom });
            }
            cells[j * nx + i] = col;
            seen[j * nx + i] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(perr(0, format!("cell ({}, {}) missing", k % nx.max(1), k / nx.max(1))));
        }
        BarBody::new((ox, oy), (dx, dy), (nx, ny), rho, cells)
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

pub const BAR_HEADER: &str = "# gravinv-barbody v1";

/// Field of a bar body at a surface station, mGal.
pub fn bar_vz(b: &BarBody, st: Station) -> f64 {
    let area = b.dx * b.dy;
    let mut sum = 0.0;
    for j in 0..b.ny {
        let dy = st.y - (b.origin_y + (j as f64 + 0.5) * b.dy);
        for i in 0..b.nx {
            let col = &b.cells[j * b.nx + i];
            if col.is_empty() {
                continue;
            }
            let dx = st.x - (b.origin_x + (i as f64 + 0.5) * b.dx);
            let h2 = dx * dx + dy * dy;
            for iv in col {
                sum += 1.0 / (h2 + iv.top * iv.top).sqrt() - 1.0 / (h2 + iv.bottom * iv.bottom).sqrt();
            }
        }
    }
    G_U * b.rho * sum * area
}

/// Columns of a spheroid on a square grid of the given step (≤ a/10).
pub fn discretize_spheroid(s: &Spheroid, step: f64) -> Result<BarBody> {
    s.validate()?;
    if !(step > 0.0 && step <= s.a / 10.0 * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "step must lie in (0, a/10] = (0, {}], got {step}",
            s.a / 10.0
        )));
    }
    let n = (2.0 * s.a / step - 1e-9).ceil() as usize;
    let half = n as f64 * step / 2.0;
    let (ox, oy) = (s.x0 - half, s.y0 - half);
    let c = s.polar_semiaxis();
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        let cy = oy + (j as f64 + 0.5) * step - s.y0;
        for i in 0..n {
            let cx = ox + (i as f64 + 0.5) * step - s.x0;
            let u = (cx * cx + cy * cy) / (s.a * s.a);
            if u < 1.0 {
                let h = c * (1.0 - u).sqrt();
                cells.push(vec![Interval {
                    top: s.z0 - h,
                    bottom: s.z0 + h,
                }]);
            } else {
                cells.push(Vec::new());
            }
        }
    }
    BarBody::new((ox, oy), (step, step), (n, n), s.rho, cells)
}

/// Volume (km³) and mass (bln t) by summation over bars.
pub fn body_volume_mass(b: &BarBody) -> (f64, f64) {
    let thick: f64 = b.cells.iter().flat_map(|c| c.iter()).map(Interval::thickness).sum();
    let v = thick * b.dx * b.dy;
    (v, v * b.rho)
}
