//! Pole picking on an anomaly grid and the two-condition valley test that
//! decides whether neighbouring poles are separate bodies.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::Deposit;
use crate::grid::{grid_field, FieldGrid, GridSpec};

pub const DETECTION_FORMAT: &str = "gravinv-detection/1";

/// A strict local maximum of the grid. `(x, y)` is refined below the grid
/// step; `vz` is the node value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub x: f64,
    pub y: f64,
    pub vz: f64,
    pub i: usize,
    pub j: usize,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub format: String,
    pub poles: Vec<Pole>,
    /// Indices into `poles` of the poles kept as separate bodies.
    pub resolved: Vec<usize>,
    pub resolved_bodies: Vec<(f64, f64)>,
    /// `valley_ratios[a][b]`: valley fraction between poles a and b.
    pub valley_ratios: Vec<Vec<f64>>,
    /// σ over the smallest resolved pole value.
    pub noise_fraction: f64,
    pub noise_sigma: f64,
    pub valley_threshold: f64,
}

impl DetectionReport {
    pub fn body_count(&self) -> usize {
        self.resolved.len()
    }

    pub fn resolved_poles(&self) -> Vec<Pole> {
        self.resolved.iter().map(|k| self.poles[*k]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: DetectionReport =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("detection report: {e}")))?;
        if r.format != DETECTION_FORMAT {
            return Err(Error::Config(format!(
                "expected format `{DETECTION_FORMAT}`, got `{}`",
                r.format
            )));
        }
        Ok(r)
    }
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn neighbors(nx: usize, ny: usize, k: usize) -> impl Iterator<Item = usize> {
    let (i, j) = ((k % nx) as isize, (k / nx) as isize);
    NEIGHBORS.iter().filter_map(move |(di, dj)| {
        let (a, b) = (i + di, j + dj);
        (a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny).then(|| b as usize * nx + a as usize)
    })
}

fn find(parent: &mut [usize], mut k: usize) -> usize {
    while parent[k] != k {
        parent[k] = parent[parent[k]];
        k = parent[k];
    }
    k
}

/// Topographic prominence of every node that starts a component in a
/// descending flood; other nodes get 0.
fn prominences(g: &FieldGrid) -> Vec<f64> {
    let (nx, ny) = (g.spec.nx, g.spec.ny);
    let n = nx * ny;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| g.values[*b].total_cmp(&g.values[*a]).then(a.cmp(b)));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut peak = vec![usize::MAX; n]; // per root
    let mut seen = vec![false; n];
    let mut prom = vec![0.0; n];
    let floor = g.min();
    for &k in &order {
        seen[k] = true;
        peak[k] = k;
        for nb in neighbors(nx, ny, k) {
            if !seen[nb] {
                continue;
            }
            let (ra, rb) = (find(&mut parent, k), find(&mut parent, nb));
            if ra == rb {
                continue;
            }
            let (pa, pb) = (peak[ra], peak[rb]);
            // lower peak dies at the current level
            let (hi, lo) = if g.values[pa] > g.values[pb] || (g.values[pa] == g.values[pb] && pa < pb) {
                (ra, rb)
            } else {
                (rb, ra)
            };
            if peak[lo] != k {
                prom[peak[lo]] = g.values[peak[lo]] - g.values[k];
            }
            parent[lo] = hi;
        }
    }
    let top = order[0];
    prom[top] = g.values[top] - floor;
    prom
}

fn is_strict_max(g: &FieldGrid, k: usize) -> bool {
    let (nx, ny) = (g.spec.nx, g.spec.ny);
    let (i, j) = (k % nx, k / nx);
    if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
        return false;
    }
    neighbors(nx, ny, k).all(|nb| g.values[nb] < g.values[k])
}

/// Vertex of the least-squares quadratic through the 3×3 block, in node
/// units relative to the centre; `None` if it is not a maximum within one cell.
fn quadratic_offset(g: &FieldGrid, i: usize, j: usize) -> Option<(f64, f64)> {
    // separable closed form for the 3×3 stencil
    let f = |a: isize, b: isize| g.at((i as isize + a) as usize, (j as isize + b) as usize);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for a in -1..=1 {
        for b in -1..=1 {
            let v = f(a, b);
            sx += a as f64 * v;
            sy += b as f64 * v;
            sxx += (a * a) as f64 * v;
            syy += (b * b) as f64 * v;
            sxy += (a * b) as f64 * v;
        }
    }
    let total: f64 = (-1..=1)
        .flat_map(|a| (-1..=1).map(move |b| (a, b)))
        .map(|(a, b)| f(a, b))
        .sum();
    let cx = sx / 6.0;
    let cy = sy / 6.0;
    let cxx = (sxx - 2.0 * total / 3.0) / 2.0;
    let cyy = (syy - 2.0 * total / 3.0) / 2.0;
    let cxy = sxy / 4.0;
    // maximise cx·x + cy·y + cxx·x² + cxy·x·y + cyy·y²
    let det = 4.0 * cxx * cyy - cxy * cxy;
    if !(cxx < 0.0 && det > 0.0) {
        return None;
    }
    let x = (-2.0 * cyy * cx + cxy * cy) / det;
    let y = (-2.0 * cxx * cy + cxy * cx) / det;
    (x.abs() <= 1.0 && y.abs() <= 1.0).then_some((x, y))
}

/// Strict interior 8-neighbourhood maxima with prominence ≥ `min_prominence`,
/// highest first.
pub fn find_poles(g: &FieldGrid, min_prominence: f64) -> Vec<Pole> {
    let prom = prominences(g);
    let nx = g.spec.nx;
    let mut poles: Vec<Pole> = (0..g.values.len())
        .filter(|&k| is_strict_max(g, k) && prom[k] >= min_prominence)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            let (ox, oy) = quadratic_offset(g, i, j).unwrap_or((0.0, 0.0));
            Pole {
                x: g.spec.x(i) + ox * g.spec.dx(),
                y: g.spec.y(j) + oy * g.spec.dy(),
                vz: g.values[k],
                i,
                j,
                prominence: prom[k],
            }
        })
        .collect();
    poles.sort_by(|a, b| b.vz.total_cmp(&a.vz).then((a.j, a.i).cmp(&(b.j, b.i))));
    poles
}

#[derive(PartialEq)]
struct Bottleneck(f64, usize);

impl Eq for Bottleneck {}

impl PartialOrd for Bottleneck {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bottleneck {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

/// Widest-path values from `start`: for every node, the largest achievable
/// minimum along an 8-connected path.
fn widest_paths(g: &FieldGrid, start: usize) -> Vec<f64> {
    let (nx, ny) = (g.spec.nx, g.spec.ny);
    let mut best = vec![f64::NEG_INFINITY; nx * ny];
    let mut heap = BinaryHeap::new();
    best[start] = g.values[start];
    heap.push(Bottleneck(best[start], start));
    while let Some(Bottleneck(v, k)) = heap.pop() {
        if v < best[k] {
            continue;
        }
        for nb in neighbors(nx, ny, k) {
            let w = v.min(g.values[nb]);
            if w > best[nb] {
                best[nb] = w;
                heap.push(Bottleneck(w, nb));
            }
        }
    }
    best
}

/// Saddle value between two poles: max over paths of the path minimum.
pub fn saddle_between(g: &FieldGrid, a: &Pole, b: &Pole) -> f64 {
    let nx = g.spec.nx;
    widest_paths(g, a.j * nx + a.i)[b.j * nx + b.i]
}

/// `(V̄ − v)/V̄` with `V̄` the mean of the two pole values, clamped to [0, 1].
pub fn valley_fraction(v1: f64, v2: f64, saddle: f64) -> f64 {
    let mean = 0.5 * (v1 + v2);
    if mean <= 0.0 {
        return 0.0;
    }
    ((mean - saddle) / mean).clamp(0.0, 1.0)
}

/// Largest σ/V̄ for which a valley still counts.
pub const NOISE_LIMIT: f64 = 0.20;
pub const DEFAULT_VALLEY_THRESHOLD: f64 = 0.20;

/// Applies the valley criterion pairwise. A pole survives iff it is distinct
/// from every higher pole, so raising the threshold can only drop bodies.
pub fn resolve_bodies(
    poles: &[Pole],
    g: &FieldGrid,
    noise_sigma: f64,
    valley_threshold: f64,
    exec: Execution,
) -> Result<DetectionReport> {
    if !(valley_threshold > 0.0 && valley_threshold < 1.0) {
        return Err(Error::Invalid(format!(
            "valley threshold must be in (0, 1), got {valley_threshold}"
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut poles = poles.to_vec();
    poles.sort_by(|a, b| b.vz.total_cmp(&a.vz));
    let m = poles.len();
    let nx = g.spec.nx;
    let paths = exec.map_jobs(m, |a| widest_paths(g, poles[a].j * nx + poles[a].i));
    let mut valley = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..m {
            if a != b {
                let s = paths[a][poles[b].j * nx + poles[b].i];
                valley[a][b] = valley_fraction(poles[a].vz, poles[b].vz, s);
            }
        }
    }
    let distinct = |a: usize, b: usize| {
        let mean = 0.5 * (poles[a].vz + poles[b].vz);
        valley[a][b] >= valley_threshold && mean > 0.0 && noise_sigma / mean <= NOISE_LIMIT
    };
    let resolved: Vec<usize> = (0..m).filter(|&b| (0..b).all(|a| distinct(a, b))).collect();
    let lowest = resolved.iter().map(|k| poles[*k].vz).fold(f64::INFINITY, f64::min);
    Ok(DetectionReport {
        format: DETECTION_FORMAT.into(),
        resolved_bodies: resolved.iter().map(|k| (poles[*k].x, poles[*k].y)).collect(),
        resolved,
        poles,
        valley_ratios: valley,
        noise_fraction: if lowest.is_finite() && lowest > 0.0 {
            noise_sigma / lowest
        } else {
            0.0
        },
        noise_sigma,
        valley_threshold,
    })
}

/// Tunables for [`detect`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectOptions {
    /// Prominence gate in units of the noise σ.
    pub prominence_sigmas: f64,
    /// Absolute prominence floor, mGal.
    pub min_prominence: f64,
    pub valley_threshold: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            prominence_sigmas: 1.0,
            min_prominence: 0.0,
            valley_threshold: DEFAULT_VALLEY_THRESHOLD,
        }
    }
}

pub fn detect(g: &FieldGrid, noise_sigma: f64, opts: &DetectOptions, exec: Execution) -> Result<DetectionReport> {
    let gate = opts.min_prominence.max(opts.prominence_sigmas * noise_sigma);
    let poles = find_poles(g, gate);
    resolve_bodies(&poles, g, noise_sigma, opts.valley_threshold, exec)
}

/// Valley between the two highest poles of a noise-free deposit grid, with
/// the pole-to-pole distance. One pole (merged anomaly) gives valley 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairValley {
    pub valley: f64,
    pub pole_distance: Option<f64>,
}

pub fn pair_valley(d: &Deposit, spec: GridSpec, exec: Execution) -> Result<PairValley> {
    let g = grid_field(d, spec, exec)?;
    let poles = find_poles(&g, 0.0);
    if poles.len() < 2 {
        return Ok(PairValley {
            valley: 0.0,
            pole_distance: None,
        });
    }
    let (a, b) = (&poles[0], &poles[1]);
    let s = saddle_between(&g, a, b);
    Ok(PairValley {
        valley: valley_fraction(a.vz, b.vz, s),
        pole_distance: Some(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()),
    })
}

/// Where a separation sweep first reaches the valley threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionLimit {
    /// Distance between body centres, km.
    pub separation: f64,
    /// Distance between the two grid poles at that separation, km.
    pub pole_distance: Option<f64>,
    pub valley: f64,
}

/// Smallest centre separation in `[lo, hi]` whose valley reaches `threshold`,
/// located by a coarse scan and bisection to `tol` km. `make` builds the
/// pair for a separation; `spec_for` supplies the grid.
pub fn resolution_limit(
    make: impl Fn(f64) -> Result<Deposit>,
    spec_for: impl Fn(f64) -> Result<GridSpec>,
    (lo, hi): (f64, f64),
    threshold: f64,
    tol: f64,
    exec: Execution,
) -> Result<Option<ResolutionLimit>> {
    let eval = |s: f64| -> Result<PairValley> { pair_valley(&make(s)?, spec_for(s)?, exec) };
    let steps = 24;
    let mut prev = lo;
    if eval(lo)?.valley >= threshold {
        return Ok(Some(ResolutionLimit {
            separation: lo,
            pole_distance: eval(lo)?.pole_distance,
            valley: eval(lo)?.valley,
        }));
    }
    for k in 1..=steps {
        let s = lo + (hi - lo) * k as f64 / steps as f64;
        if eval(s)?.valley >= threshold {
            let (mut a, mut b) = (prev, s);
            while b - a > tol {
                let mid = 0.5 * (a + b);
                if eval(mid)?.valley >= threshold {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            let pv = eval(b)?;
            return Ok(Some(ResolutionLimit {
                separation: b,
                pole_distance: pv.pole_distance,
                valley: pv.valley,
            }));
        }
        prev = s;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Spheroid;

    fn spec15(n: usize) -> GridSpec {
        GridSpec::new((0.0, 15.0), n, (0.0, 15.0), n).unwrap()
    }

    fn gaussians(peaks: &[(f64, f64, f64, f64)], n: usize) -> FieldGrid {
        FieldGrid::from_fn(spec15(n), Execution::Sequential, |p| {
            peaks
                .iter()
                .map(|(x, y, h, w)| h * (-((p.x - x).powi(2) + (p.y - y).powi(2)) / (2.0 * w * w)).exp())
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn single_sphere_single_pole() {
        let d = Deposit::new(vec![Spheroid::new(6.3, 8.1, 3.0, 1.0, 1.0, 2.0).unwrap()]).unwrap();
        let g = grid_field(&d, spec15(61), Execution::Sequential).unwrap();
        let poles = find_poles(&g, 0.0);
        assert_eq!(poles.len(), 1);
        assert_eq!((poles[0].i, poles[0].j), g.spec.nearest_node(6.3, 8.1));
        assert!((poles[0].x - 6.3).abs() < 0.05 && (poles[0].y - 8.1).abs() < 0.05);
    }

    #[test]
    fn constant_grid_no_poles() {
        let g = FieldGrid::new(spec15(11), vec![4.0; 121]).unwrap();
        assert!(find_poles(&g, 0.0).is_empty());
    }

    #[test]
    fn quadratic_peak_located_off_node() {
        let g = FieldGrid::from_fn(spec15(16), Execution::Sequential, |p| {
            50.0 - (p.x - 7.3).powi(2) - 2.0 * (p.y - 6.8).powi(2)
        })
        .unwrap();
        let p = find_poles(&g, 0.0)[0];
        assert!((p.x - 7.3).abs() < 1e-9 && (p.y - 6.8).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn prominence_of_secondary_peak() {
        let g = gaussians(&[(4.0, 7.5, 10.0, 1.0), (11.0, 7.5, 6.0, 1.0)], 61);
        let poles = find_poles(&g, 0.0);
        assert_eq!(poles.len(), 2);
        let s = saddle_between(&g, &poles[0], &poles[1]);
        assert!((poles[1].prominence - (poles[1].vz - s)).abs() < 1e-12);
        assert_eq!(find_poles(&g, poles[1].prominence + 1e-9).len(), 1);
    }

    #[test]
    fn worked_valley_fraction() {
        assert!((valley_fraction(22.0, 30.0, 17.0) - 0.346).abs() < 1e-3);
    }

    #[test]
    fn shallow_valley_merges() {
        // equal peaks, valley ≈ 0.10
        let g = gaussians(&[(6.3, 7.5, 10.0, 1.0), (8.7, 7.5, 10.0, 1.0)], 121);
        let poles = find_poles(&g, 0.0);
        assert_eq!(poles.len(), 2);
        let r = resolve_bodies(&poles, &g, 0.0, 0.2, Execution::Sequential).unwrap();
        assert!(r.valley_ratios[0][1] < 0.2);
        assert_eq!(r.body_count(), 1);
        let r = resolve_bodies(&poles, &g, 0.0, 0.05, Execution::Sequential).unwrap();
        assert_eq!(r.body_count(), 2);
    }

    #[test]
    fn noise_condition_merges() {
        let g = gaussians(&[(4.0, 7.5, 10.0, 1.0), (11.0, 7.5, 10.0, 1.0)], 61);
        let poles = find_poles(&g, 0.0);
        assert_eq!(
            resolve_bodies(&poles, &g, 1.0, 0.2, Execution::Sequential)
                .unwrap()
                .body_count(),
            2
        );
        assert_eq!(
            resolve_bodies(&poles, &g, 2.5, 0.2, Execution::Sequential)
                .unwrap()
                .body_count(),
            1
        );
    }

    #[test]
    fn report_json_round_trip() {
        let g = gaussians(&[(4.0, 4.0, 10.0, 1.0), (11.0, 11.0, 7.0, 1.5)], 31);
        let r = detect(&g, 0.5, &DetectOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(DetectionReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn threshold_must_be_a_fraction() {
        let g = gaussians(&[(4.0, 4.0, 10.0, 1.0)], 11);
        assert!(resolve_bodies(&[], &g, 0.0, 1.0, Execution::Sequential).is_err());
    }
}
