//! Closed-form vertical attraction of homogeneous spheres and spheroids.
//!
//! Coordinates: x, y on the surface, z positive downward; a station sits at
//! `(x, y, 0)` and a body's centre at `(x0, y0, z0)` with `z0 > 0`. The
//! spheroid's symmetry axis is vertical, its equatorial semiaxis is `a` and
//! its polar semiaxis is `c = eps * a`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::G_U;

/// Half-width of the band around `eps = 1` evaluated with the sphere formula.
pub const SPHERE_BAND: f64 = 1.0e-7;

/// Lower guard on the confocal ratio (tau / t) before taking `q / sqrt(.)`.
const CONFOCAL_FLOOR: f64 = 1.0e-30;

/// Below this `p` the transcendental differences are evaluated by series.
const SERIES_P: f64 = 1.0e-2;

/// Surface measurement point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub x: f64,
    pub y: f64,
}

impl Station {
    pub const fn new(x: f64, y: f64) -> Self {
        Station { x, y }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Homogeneous ellipsoid of revolution about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spheroid {
    pub x0: f64,
    pub y0: f64,
    /// Depth of the centre, km.
    pub z0: f64,
    /// Equatorial semiaxis, km.
    pub a: f64,
    /// Axis ratio c/a: < 1 oblate, > 1 prolate.
    pub eps: f64,
    /// Density, g/cm³.
    pub rho: f64,
}

impl Spheroid {
    pub fn new(x0: f64, y0: f64, z0: f64, a: f64, eps: f64, rho: f64) -> Result<Self> {
        let s = Spheroid {
            x0,
            y0,
            z0,
            a,
            eps,
            rho,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds the spheroid whose semiaxis reproduces `mass` at the given
    /// shape and density.
    pub fn with_mass(x0: f64, y0: f64, z0: f64, eps: f64, rho: f64, mass: f64) -> Result<Self> {
        let a = semiaxis_from_mass(mass, eps, rho)?;
        Spheroid::new(x0, y0, z0, a, eps, rho)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x0, self.y0, self.z0, self.a, self.eps, self.rho];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite spheroid field: {self:?}")));
        }
        if self.a <= 0.0 || self.eps <= 0.0 || self.rho <= 0.0 || self.z0 <= 0.0 {
            return Err(Error::Domain(format!(
                "spheroid needs a, eps, rho, z0 > 0 (a={}, eps={}, rho={}, z0={})",
                self.a, self.eps, self.rho, self.z0
            )));
        }
        if self.z0 <= self.polar_semiaxis() {
            return Err(Error::Domain(format!(
                "spheroid breaches the surface: z0={} <= c={}",
                self.z0,
                self.polar_semiaxis()
            )));
        }
        Ok(())
    }

    pub fn polar_semiaxis(&self) -> f64 {
        self.eps * self.a
    }

    /// Volume (4/3)π a³ ε, km³.
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.a.powi(3) * self.eps
    }

    /// Mass, bln t.
    pub fn mass(&self) -> f64 {
        self.volume() * self.rho
    }
}

/// Semiaxis `a = (M / ((4/3)π ε ρ))^(1/3)` of a spheroid with the given mass.
pub fn semiaxis_from_mass(mass: f64, eps: f64, rho: f64) -> Result<f64> {
    if !(mass > 0.0 && eps > 0.0 && rho > 0.0) {
        return Err(Error::Domain(format!(
            "semiaxis needs positive mass, eps, rho (got {mass}, {eps}, {rho})"
        )));
    }
    Ok((mass / (4.0 / 3.0 * PI * eps * rho)).cbrt())
}

struct Offsets {
    /// Squared horizontal offset.
    s2: f64,
    r2: f64,
    r: f64,
}

fn offsets(s: &Spheroid, st: Station) -> Offsets {
    let dx = st.x - s.x0;
    let dy = st.y - s.y0;
    let s2 = dx * dx + dy * dy;
    let r2 = s2 + s.z0 * s.z0;
    Offsets { s2, r2, r: r2.sqrt() }
}

fn sphere_field(rho: f64, radius: f64, s: &Spheroid, st: Station) -> Result<f64> {
    if s.z0 <= radius {
        return Err(Error::Domain(format!(
            "sphere breaches the surface: z0={} <= a={radius}",
            s.z0
        )));
    }
    let o = offsets(s, st);
    Ok(4.0 / 3.0 * PI * G_U * rho * radius.powi(3) * s.z0 / (o.r2 * o.r))
}

/// Positive root of `x² − (1 − q²)x − q²·w = 0`, the confocal parameter
/// normalised by r². `w` is z0²/r² for the oblate case and s²/r² for the
/// prolate case.
pub(crate) fn confocal_ratio(q: f64, w: f64) -> f64 {
    let one_m = 1.0 - q * q;
    (one_m + (one_m * one_m + 4.0 * q * q * w).sqrt()) / 2.0
}

/// p − arctan p.
fn oblate_kernel(p: f64) -> f64 {
    if p < SERIES_P {
        let p2 = p * p;
        p * p2 * (1.0 / 3.0 - p2 * (1.0 / 5.0 - p2 / 7.0))
    } else {
        p - p.atan()
    }
}

/// asinh p − p/√(1 + p²).
fn prolate_kernel(p: f64) -> f64 {
    if p < SERIES_P {
        let p2 = p * p;
        p * p2 * (1.0 / 3.0 - p2 * (3.0 / 10.0 - p2 * 15.0 / 56.0))
    } else {
        p.asinh() - p / (1.0 + p * p).sqrt()
    }
}

fn guarded_p(q: f64, ratio: f64) -> Result<f64> {
    if !(ratio > CONFOCAL_FLOOR) {
        return Err(Error::Degenerate(format!(
            "confocal ratio {ratio:e} below floor (q={q})"
        )));
    }
    Ok(q / ratio.sqrt())
}

/// Vertical attraction of a homogeneous sphere (`eps` must equal 1).
pub fn vz_sphere(s: &Spheroid, st: Station) -> Result<f64> {
    if s.eps != 1.0 {
        return Err(Error::Invalid(format!("vz_sphere needs eps = 1, got {}", s.eps)));
    }
    sphere_field(s.rho, s.a, s, st)
}

/// Vertical attraction of an oblate spheroid (`0 < eps < 1`).
pub fn vz_oblate(s: &Spheroid, st: Station) -> Result<f64> {
    if !(s.eps > 0.0 && s.eps < 1.0) {
        return Err(Error::Invalid(format!("vz_oblate needs 0 < eps < 1, got {}", s.eps)));
    }
    s.validate()?;
    let o = offsets(s, st);
    let e = (1.0 - s.eps * s.eps).sqrt();
    let q = e * s.a / o.r;
    let tau = confocal_ratio(q, s.z0 * s.z0 / o.r2);
    let p = guarded_p(q, tau)?;
    Ok(4.0 * PI * G_U * s.rho * s.eps / e.powi(3) * oblate_kernel(p) * s.z0)
}

/// Vertical attraction of a prolate spheroid (`eps > 1`).
pub fn vz_prolate(s: &Spheroid, st: Station) -> Result<f64> {
    if !(s.eps > 1.0) {
        return Err(Error::Invalid(format!("vz_prolate needs eps > 1, got {}", s.eps)));
    }
    s.validate()?;
    let o = offsets(s, st);
    let e = (s.eps * s.eps - 1.0).sqrt();
    let q = e * s.a / o.r;
    let t = confocal_ratio(q, o.s2 / o.r2);
    let p = guarded_p(q, t)?;
    Ok(4.0 * PI * G_U * s.rho * s.eps / e.powi(3) * prolate_kernel(p) * s.z0)
}

/// Dispatches on the axis ratio. Inside [`SPHERE_BAND`] around 1 the body
/// is replaced by the sphere of equal volume.
pub fn vz_spheroid(s: &Spheroid, st: Station) -> Result<f64> {
    if (s.eps - 1.0).abs() < SPHERE_BAND {
        s.validate()?;
        sphere_field(s.rho, s.a * s.eps.cbrt(), s, st)
    } else if s.eps < 1.0 {
        vz_oblate(s, st)
    } else {
        vz_prolate(s, st)
    }
}

/// Vertical attraction of a point mass `mass` (bln t) buried at `(x0, y0, z0)`.
pub fn point_mass_vz(mass: f64, x0: f64, y0: f64, z0: f64, st: Station) -> Result<f64> {
    if !(z0 > 0.0) {
        return Err(Error::Domain(format!("point mass needs z0 > 0, got {z0}")));
    }
    if !(mass > 0.0) {
        return Err(Error::Domain(format!("point mass needs M > 0, got {mass}")));
    }
    let dx = st.x - x0;
    let dy = st.y - y0;
    let r2 = dx * dx + dy * dy + z0 * z0;
    Ok(G_U * mass * z0 / (r2 * r2.sqrt()))
}

/// A deposit made of several spheroidal bodies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Deposit {
    pub bodies: Vec<Spheroid>,
}

impl Deposit {
    pub fn new(bodies: Vec<Spheroid>) -> Result<Self> {
        for b in &bodies {
            b.validate()?;
        }
        Ok(Deposit { bodies })
    }

    pub fn vz(&self, st: Station) -> Result<f64> {
        vz_deposit(self, st)
    }

    /// Reads the TOML deposit description (see `docs/formats.md`).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: DepositFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if file.format != DEPOSIT_FORMAT {
            return Err(Error::Config(format!(
                "expected format \"{DEPOSIT_FORMAT}\", got \"{}\"",
                file.format
            )));
        }
        let bodies = file
            .body
            .into_iter()
            .map(|b| match (b.a, b.mass) {
                (Some(a), None) => Spheroid::new(b.x0, b.y0, b.z0, a, b.eps, b.rho),
                (None, Some(m)) => Spheroid::with_mass(b.x0, b.y0, b.z0, b.eps, b.rho, m),
                _ => Err(Error::Config("each body needs exactly one of `a` or `mass`".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Deposit { bodies })
    }

    pub fn to_toml(&self) -> String {
        let file = DepositFile {
            format: DEPOSIT_FORMAT.to_string(),
            body: self
                .bodies
                .iter()
                .map(|s| BodyEntry {
                    x0: s.x0,
                    y0: s.y0,
                    z0: s.z0,
                    eps: s.eps,
                    rho: s.rho,
                    a: Some(s.a),
                    mass: None,
                })
                .collect(),
        };
        toml::to_string(&file).expect("deposit serialises")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

pub const DEPOSIT_FORMAT: &str = "gravinv-deposit/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepositFile {
    format: String,
    #[serde(default)]
    body: Vec<BodyEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyEntry {
    x0: f64,
    y0: f64,
    z0: f64,
    eps: f64,
    rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
}

/// Sum of the body fields; zero for an empty deposit.
pub fn vz_deposit(d: &Deposit, st: Station) -> Result<f64> {
    d.bodies.iter().map(|b| vz_spheroid(b, st)).sum()
}
