//! Synthetic surveys, station layouts and the survey file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bar::BarBody;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::{vz_deposit, Deposit, Station};

/// One surface measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub station: Station,
    /// mGal, clean or noisy.
    pub vz: f64,
}

/// A set of measurements plus the noise level and seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Survey {
    pub samples: Vec<FieldSample>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Survey {
    pub fn new(samples: Vec<FieldSample>, noise_sigma: f64, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("no samples".into()));
        }
        if let Some(s) = samples.iter().find(|s| !s.vz.is_finite()) {
            return Err(Error::Invalid(format!("non-finite vz at {:?}", s.station)));
        }
        let mut keys: Vec<(u64, u64)> = samples
            .iter()
            .map(|s| (s.station.x.to_bits(), s.station.y.to_bits()))
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("duplicate station position".into()));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(Survey {
            samples,
            noise_sigma,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn stations(&self) -> Vec<Station> {
        self.samples.iter().map(|s| s.station).collect()
    }

    /// (x_min, x_max, y_min, y_max) of the stations.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.samples {
            b.0 = b.0.min(s.station.x);
            b.1 = b.1.max(s.station.x);
            b.2 = b.2.min(s.station.y);
            b.3 = b.3.max(s.station.y);
        }
        b
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(SURVEY_HEADER);
        out.push('\n');
        let _ = writeln!(out, "# noise_sigma_mgal={} seed={}", self.noise_sigma, self.seed);
        out.push_str("x_km,y_km,vz_mgal\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.station.x, s.station.y, s.vz);
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut noise_sigma = 0.0;
        let mut seed = 0;
        let mut samples = Vec::new();
        let mut saw_header = false;
        for (k, raw) in text.lines().enumerate() {
            let n = k + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if n == 1 {
                if line != SURVEY_HEADER {
                    return Err(perr(n, format!("expected `{SURVEY_HEADER}`")));
                }
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("noise_sigma_mgal", v)) => {
                            noise_sigma = v.parse().map_err(|e| perr(n, format!("noise: {e}")))?
                        }
                        Some(("seed", v)) => seed = v.parse().map_err(|e| perr(n, format!("seed: {e}")))?,
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "x_km,y_km,vz_mgal" {
                    return Err(perr(n, format!("expected column header, got `{line}`")));
                }
                saw_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(perr(n, format!("expected 3 fields, got {}", cols.len())));
            }
            let num = |k: usize, name: &str| -> Result<f64> {
                let v: f64 = cols[k]
                    .parse()
                    .map_err(|_| perr(n, format!("{name} is not a number: `{}`", cols[k])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(perr(n, format!("{name} is not finite")))
                }
            };
            samples.push(FieldSample {
                station: Station::new(num(0, "x")?, num(1, "y")?),
                vz: num(2, "vz")?,
            });
        }
        if samples.is_empty() {
            return Err(perr(0, "no samples".into()));
        }
        Survey::new(samples, noise_sigma, seed).map_err(|e| perr(0, e.to_string()))
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

pub const SURVEY_HEADER: &str = "# gravinv-survey v1";

/// Source of the synthetic field.
#[derive(Debug, Clone)]
pub enum Truth {
    Deposit(Deposit),
    Bars(Vec<BarBody>),
}

impl Truth {
    pub fn vz(&self, st: Station) -> Result<f64> {
        match self {
            Truth::Deposit(d) => vz_deposit(d, st),
            Truth::Bars(bars) => Ok(bars.iter().map(|b| b.vz(st)).sum()),
        }
    }

    pub fn vz_many(&self, stations: &[Station], exec: Execution) -> Result<Vec<f64>> {
        exec.map(stations, |st| self.vz(*st)).into_iter().collect()
    }
}

/// Stream ids of the seeded generator; layout and noise draws never overlap.
const NOISE_STREAM: u64 = 0;
const LAYOUT_STREAM: u64 = 1;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Forward field at each station plus N(0, σ²) noise.
///
/// Noise: ChaCha8 seeded with `seed_from_u64(seed)` on stream 0, one
/// `StandardNormal` draw per station in input order, scaled by `sigma`.
pub fn synth_survey(truth: &Truth, stations: &[Station], sigma: f64, seed: u64, exec: Execution) -> Result<Survey> {
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let clean = truth.vz_many(stations, exec)?;
    let mut rng = seeded(seed, NOISE_STREAM);
    let samples = stations
        .iter()
        .zip(clean)
        .map(|(st, v)| {
            let eta: f64 = rng.sample(StandardNormal);
            FieldSample {
                station: *st,
                vz: v + sigma * eta,
            }
        })
        .collect();
    Survey::new(samples, sigma, seed)
}

/// Jittered square lattice.
///
/// `n × n` nodes span `[lo, hi]²`; each node is displaced uniformly by up
/// to `jitter` times the spacing in x and y (ChaCha8, stream 1) and clamped
/// to the square. The four corner nodes are dropped when `drop_corners`.
pub fn jittered_lattice(
    n: usize,
    lo: f64,
    hi: f64,
    jitter: f64,
    drop_corners: bool,
    seed: u64,
) -> Result<Vec<Station>> {
    if n < 2 || !(hi > lo) || !(0.0..0.5).contains(&jitter) {
        return Err(Error::Invalid(format!(
            "lattice needs n >= 2, hi > lo, 0 <= jitter < 0.5 (n={n}, [{lo}, {hi}], jitter={jitter})"
        )));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut rng = seeded(seed, LAYOUT_STREAM);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let corner = (i == 0 || i == n - 1) && (j == 0 || j == n - 1);
            let ux: f64 = rng.random_range(-1.0..1.0);
            let uy: f64 = rng.random_range(-1.0..1.0);
            if corner && drop_corners {
                continue;
            }
            let x = (lo + i as f64 * h + ux * jitter * h).clamp(lo, hi);
            let y = (lo + j as f64 * h + uy * jitter * h).clamp(lo, hi);
            out.push(Station::new(x, y));
        }
    }
    Ok(out)
}

/// 45-station layout over [0, 15]²: a 7×7 lattice jittered by ±0.3 of the
/// 2.5 km spacing, corners removed.
pub fn example_one_layout(seed: u64) -> Vec<Station> {
    jittered_lattice(7, 0.0, 15.0, 0.3, true, seed).expect("valid lattice")
}
