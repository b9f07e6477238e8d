//! Box-constrained coordinate descent with golden-section line searches, and
//! the outer loop that narrows the boxes around the iterate.

use serde::{Deserialize, Serialize};

use super::ConstraintBox;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimises a unimodal `f` on `[lo, hi]`; returns the best point probed.
pub fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when a sweep improves the objective by less than this fraction.
    pub rel_tol: f64,
    pub max_sweeps: usize,
    pub golden_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-8,
            max_sweeps: 200,
            golden_iters: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub params: Vec<f64>,
    pub value: f64,
    /// Objective at the start and after every sweep.
    pub trace: Vec<f64>,
    pub sweeps: usize,
}

fn assert_feasible(p: &[f64], boxes: &[ConstraintBox]) {
    for (j, (v, b)) in p.iter().zip(boxes).enumerate() {
        assert!(
            *v >= b.min && *v <= b.max,
            "iterate left its box: p[{j}] = {v} not in [{}, {}]",
            b.min,
            b.max
        );
    }
}

/// Cyclic coordinate descent. A coordinate move is accepted only if it
/// lowers the objective, so the trace is non-increasing and every iterate
/// stays inside `boxes`.
pub fn coordinate_descent(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    boxes: &[ConstraintBox],
    start: &[f64],
    opts: &SolverOptions,
) -> Descent {
    assert_eq!(start.len(), boxes.len(), "start and boxes differ in length");
    let mut p = start.to_vec();
    assert_feasible(&p, boxes);
    let mut fp = objective(&p);
    let mut trace = vec![fp];
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let f0 = fp;
        for j in 0..p.len() {
            let base = p.clone();
            let (x, fx) = golden_section(
                |x| {
                    let mut t = base.clone();
                    t[j] = x;
                    objective(&t)
                },
                boxes[j].min,
                boxes[j].max,
                opts.golden_iters,
            );
            if fx < fp {
                p[j] = x;
                fp = fx;
                assert_feasible(&p, boxes);
            }
        }
        trace.push(fp);
        if f0.is_finite() && f0 - fp <= opts.rel_tol * f0.abs() {
            break;
        }
    }
    Descent {
        params: p,
        value: fp,
        trace,
        sweeps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecrementalOptions {
    /// New width as a fraction of the old.
    pub shrink: f64,
    /// A parameter is interior if it is farther than this fraction of the
    /// width from both bounds.
    pub interior_margin: f64,
    pub max_rounds: usize,
    /// No box is narrowed below this fraction of its initial width.
    pub floor_fraction: f64,
}

impl Default for DecrementalOptions {
    fn default() -> Self {
        DecrementalOptions {
            shrink: 0.5,
            interior_margin: 0.1,
            max_rounds: 8,
            floor_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub params: Vec<f64>,
    pub value: f64,
    pub trace: Vec<f64>,
    pub boxes: Vec<ConstraintBox>,
    pub rounds: usize,
    pub sweeps: usize,
}

/// Narrows each box whose parameter ended strictly inside it, centring the
/// new box on the parameter (clipped to the old box), and re-solves.
/// Bound-active parameters keep their box.
pub fn decremental_refine(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    boxes: &[ConstraintBox],
    start: &[f64],
    solver: &SolverOptions,
    opts: &DecrementalOptions,
) -> Refinement {
    let floors: Vec<f64> = boxes.iter().map(|b| b.width() * opts.floor_fraction).collect();
    let mut cur = boxes.to_vec();
    let mut p = start.to_vec();
    let mut trace: Vec<f64> = Vec::new();
    let mut rounds = 0;
    let mut sweeps = 0;
    let mut value = f64::INFINITY;
    while rounds < opts.max_rounds.max(1) {
        rounds += 1;
        let d = coordinate_descent(objective, &cur, &p, solver);
        if trace.is_empty() {
            trace.extend(&d.trace);
        } else {
            trace.extend(&d.trace[1..]);
        }
        p = d.params;
        value = d.value;
        sweeps += d.sweeps;
        let mut changed = false;
        for (j, b) in cur.iter_mut().enumerate() {
            let w = b.width();
            let interior = p[j] - b.min > opts.interior_margin * w && b.max - p[j] > opts.interior_margin * w;
            if !interior || w <= floors[j] {
                continue;
            }
            let half = 0.5 * (w * opts.shrink).max(floors[j]);
            let nb =
                ConstraintBox::new(b.min.max(p[j] - half), b.max.min(p[j] + half)).expect("shrunk box keeps min < max");
            if nb != *b {
                *b = nb;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Refinement {
        params: p,
        value,
        trace,
        boxes: cur,
        rounds,
        sweeps,
    }
}
