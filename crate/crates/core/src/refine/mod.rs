//! Constrained refinement of spheroid parameters against survey data.
//!
//! Per body the parameter vector holds `ε, ρ, x0, y0, z0` and, in free-mass
//! mode, `M`. With fixed mass the semiaxis follows from `M`, `ε` and `ρ`.

mod descent;

pub use descent::{
    coordinate_descent, decremental_refine, golden_section, DecrementalOptions, Descent, Refinement, SolverOptions,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::{semiaxis_from_mass, vz_spheroid, Spheroid, Station};
use crate::survey::Survey;

pub const PARAM_NAMES: [&str; 6] = ["eps", "rho", "x0", "y0", "z0", "mass"];

/// Closed interval `[min, max]` on one parameter. The regulariser weight is
/// `q = 1/mid²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBox {
    pub min: f64,
    pub max: f64,
}

impl ConstraintBox {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Invalid(format!(
                "box needs finite min < max, got [{min}, {max}]"
            )));
        }
        Ok(ConstraintBox { min, max })
    }

    /// Box `[c − h, c + h]`.
    pub fn around(center: f64, half_width: f64) -> Result<Self> {
        ConstraintBox::new(center - half_width, center + half_width)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn q(&self) -> f64 {
        1.0 / (self.mid() * self.mid())
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Functional {
    /// Penalty towards the box midpoints.
    #[default]
    F1,
    /// Penalty towards zero.
    F2,
}

/// Misfit plus Tikhonov penalty for a fixed survey and fixed anchor boxes.
pub struct Problem<'a> {
    pub stations: Vec<Station>,
    pub observed: Vec<f64>,
    pub bodies: usize,
    /// `Some(masses)` fixes each body's mass; `None` frees it.
    pub fixed_mass: Option<Vec<f64>>,
    /// Boxes the penalty is anchored to (the initial ones).
    pub anchors: &'a [ConstraintBox],
    pub alpha: f64,
    pub functional: Functional,
    pub exec: Execution,
}

impl<'a> Problem<'a> {
    pub fn new(
        survey: &Survey,
        fixed_mass: Option<Vec<f64>>,
        anchors: &'a [ConstraintBox],
        alpha: f64,
        functional: Functional,
    ) -> Result<Self> {
        let k = if fixed_mass.is_some() { 5 } else { 6 };
        if anchors.is_empty() || !anchors.len().is_multiple_of(k) {
            return Err(Error::Invalid(format!(
                "{} boxes do not split into bodies of {k} parameters",
                anchors.len()
            )));
        }
        let bodies = anchors.len() / k;
        if let Some(m) = &fixed_mass {
            if m.len() != bodies {
                return Err(Error::Invalid(format!("{} masses for {bodies} bodies", m.len())));
            }
            if let Some(bad) = m.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain(format!("fixed mass must be positive, got {bad}")));
            }
        }
        if !(alpha >= 0.0) {
            return Err(Error::Invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        if alpha > 0.0 {
            if let Some(bx) = anchors.iter().find(|b| b.mid() == 0.0) {
                return Err(Error::Invalid(format!(
                    "box [{}, {}] has zero midpoint; its weight is undefined",
                    bx.min, bx.max
                )));
            }
        }
        Ok(Problem {
            stations: survey.stations(),
            observed: survey.samples.iter().map(|s| s.vz).collect(),
            bodies,
            fixed_mass,
            anchors,
            alpha,
            functional,
            exec: Execution::default(),
        })
    }

    pub fn per_body(&self) -> usize {
        if self.fixed_mass.is_some() {
            5
        } else {
            6
        }
    }

    fn mass_of(&self, p: &[f64], b: usize) -> f64 {
        match &self.fixed_mass {
            Some(m) => m[b],
            None => p[b * 6 + 5],
        }
    }

    /// Spheroids implied by `p`, or the reason they are not physical.
    pub fn spheroids(&self, p: &[f64]) -> Result<Vec<Spheroid>> {
        let k = self.per_body();
        (0..self.bodies)
            .map(|b| {
                let s = &p[b * k..b * k + 5];
                let (eps, rho, x0, y0, z0) = (s[0], s[1], s[2], s[3], s[4]);
                let a = semiaxis_from_mass(self.mass_of(p, b), eps, rho)?;
                Spheroid::new(x0, y0, z0, a, eps, rho)
            })
            .collect()
    }

    pub fn model(&self, bodies: &[Spheroid]) -> Result<Vec<f64>> {
        self.exec
            .map(&self.stations, |st| {
                bodies.iter().map(|b| vz_spheroid(b, *st)).sum::<Result<f64>>()
            })
            .into_iter()
            .collect()
    }

    /// Σ (Ṽ − V)², or `None` for infeasible parameters.
    pub fn misfit(&self, p: &[f64]) -> Option<f64> {
        let bodies = self.spheroids(p).ok()?;
        let model = self.model(&bodies).ok()?;
        Some(self.observed.iter().zip(&model).map(|(o, m)| (o - m).powi(2)).sum())
    }

    pub fn regularizer(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(self.anchors)
            .map(|(v, b)| match self.functional {
                Functional::F1 => b.q() * (v - b.mid()).powi(2),
                Functional::F2 => b.q() * v * v,
            })
            .sum()
    }

    /// The functional; `+∞` where the geometry is not physical.
    pub fn objective(&self, p: &[f64]) -> f64 {
        match self.misfit(p) {
            Some(r) => {
                if self.alpha == 0.0 {
                    r
                } else {
                    r + self.alpha * self.regularizer(p)
                }
            }
            None => f64::INFINITY,
        }
    }

    /// Σ Ṽ², the scale used for the normalised trace.
    pub fn data_norm(&self) -> f64 {
        self.observed.iter().map(|v| v * v).sum()
    }
}

/// `δ = sqrt( (1/n) Σ q_j (p_j − p̄_j)² )` with `q` from `boxes`.
pub fn solution_error_delta(p: &[f64], reference: &[f64], boxes: &[ConstraintBox]) -> Result<f64> {
    if p.len() != reference.len() || p.len() != boxes.len() || p.is_empty() {
        return Err(Error::Invalid(format!(
            "δ needs equal non-empty lengths (got {}, {}, {})",
            p.len(),
            reference.len(),
            boxes.len()
        )));
    }
    let s: f64 = p
        .iter()
        .zip(reference)
        .zip(boxes)
        .map(|((a, b), bx)| bx.q() * (a - b).powi(2))
        .sum();
    Ok((s / p.len() as f64).sqrt())
}

/// Picks the five shape/position entries of every body out of a vector laid
/// out with `per_body` entries per body.
pub fn shape_params(p: &[f64], per_body: usize) -> Vec<f64> {
    p.chunks(per_body).flat_map(|c| c[..5].to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyResult {
    pub eps: f64,
    pub rho: f64,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub a: f64,
    pub volume: f64,
    pub mass: f64,
}

impl From<&Spheroid> for BodyResult {
    fn from(s: &Spheroid) -> Self {
        BodyResult {
            eps: s.eps,
            rho: s.rho,
            x0: s.x0,
            y0: s.y0,
            z0: s.z0,
            a: s.a,
            volume: s.volume(),
            mass: s.mass(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub functional: Functional,
    pub alpha: f64,
    pub free_mass: bool,
    pub params: Vec<f64>,
    pub bodies: Vec<BodyResult>,
    pub initial_boxes: Vec<ConstraintBox>,
    pub final_boxes: Vec<ConstraintBox>,
    pub f_initial: f64,
    pub f_final: f64,
    /// Raw functional after every sweep.
    pub trace: Vec<f64>,
    /// `trace / Σ Ṽ²`.
    pub trace_normalized: Vec<f64>,
    pub rounds: usize,
    pub sweeps: usize,
    /// Against the reference shape parameters, when supplied.
    pub delta: Option<f64>,
}

impl InversionResult {
    pub fn spheroids(&self) -> Result<Vec<Spheroid>> {
        self.bodies
            .iter()
            .map(|b| Spheroid::new(b.x0, b.y0, b.z0, b.a, b.eps, b.rho))
            .collect()
    }

    /// Shape parameters (five per body) of the solution.
    pub fn shape(&self) -> Vec<f64> {
        shape_params(&self.params, if self.free_mass { 6 } else { 5 })
    }
}

/// Runs the decremental refinement from `start` and packages the result.
/// `reference` holds five shape parameters per body.
pub fn invert(
    problem: &Problem<'_>,
    start: &[f64],
    solver: &SolverOptions,
    decr: &DecrementalOptions,
    reference: Option<&[f64]>,
) -> Result<InversionResult> {
    let boxes = problem.anchors;
    if start.len() != boxes.len() {
        return Err(Error::Invalid(format!(
            "start has {} entries, boxes {}",
            start.len(),
            boxes.len()
        )));
    }
    if let Some(j) = (0..start.len()).find(|j| !boxes[*j].contains(start[*j])) {
        return Err(Error::Invalid(format!(
            "start value {} for parameter {j} lies outside [{}, {}]",
            start[j], boxes[j].min, boxes[j].max
        )));
    }
    let f = |p: &[f64]| problem.objective(p);
    let r = decremental_refine(&f, boxes, start, solver, decr);
    if !r.value.is_finite() {
        return Err(Error::Degenerate(
            "no physically valid parameter vector found inside the boxes".into(),
        ));
    }
    let spheroids = problem.spheroids(&r.params)?;
    let k = problem.per_body();
    let delta = match reference {
        Some(rf) => {
            let shape_boxes = shape_params_boxes(boxes, k);
            Some(solution_error_delta(&shape_params(&r.params, k), rf, &shape_boxes)?)
        }
        None => None,
    };
    let norm = problem.data_norm();
    Ok(InversionResult {
        functional: problem.functional,
        alpha: problem.alpha,
        free_mass: problem.fixed_mass.is_none(),
        bodies: spheroids.iter().map(BodyResult::from).collect(),
        params: r.params,
        initial_boxes: boxes.to_vec(),
        final_boxes: r.boxes,
        f_initial: r.trace[0],
        f_final: r.value,
        trace_normalized: r.trace.iter().map(|v| v / norm).collect(),
        trace: r.trace,
        rounds: r.rounds,
        sweeps: r.sweeps,
        delta,
    })
}

pub fn shape_params_boxes(boxes: &[ConstraintBox], per_body: usize) -> Vec<ConstraintBox> {
    boxes.chunks(per_body).flat_map(|c| c[..5].to_vec()).collect()
}

/// Box midpoints.
pub fn midpoints(boxes: &[ConstraintBox]) -> Vec<f64> {
    boxes.iter().map(ConstraintBox::mid).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Deposit;
    use crate::survey::{example_one_layout, synth_survey, Truth};

    fn b(lo: f64, hi: f64) -> ConstraintBox {
        ConstraintBox::new(lo, hi).unwrap()
    }

    fn one_body_problem_data() -> (Survey, Spheroid) {
        let s = Spheroid::with_mass(7.0, 8.0, 4.0, 0.8, 2.0, 40.0).unwrap();
        let truth = Truth::Deposit(Deposit::new(vec![s]).unwrap());
        let survey = synth_survey(&truth, &example_one_layout(1), 0.0, 0, Execution::Sequential).unwrap();
        (survey, s)
    }

    #[test]
    fn box_weights() {
        let bx = b(1.0, 3.0);
        assert_eq!(bx.mid(), 2.0);
        assert_eq!(bx.q(), 0.25);
        assert!(ConstraintBox::new(2.0, 1.0).is_err());
        assert!(ConstraintBox::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn delta_formula() {
        assert_eq!(
            solution_error_delta(&[1.0, 2.0], &[1.0, 2.0], &[b(0.0, 2.0); 2]).unwrap(),
            0.0
        );
        // q = 1 for a box with midpoint 1
        assert_eq!(solution_error_delta(&[3.0], &[1.0], &[b(0.0, 2.0)]).unwrap(), 2.0);
        assert!(solution_error_delta(&[1.0], &[1.0, 2.0], &[b(0.0, 2.0)]).is_err());
    }

    #[test]
    fn regularizer_vanishes_at_midpoints() {
        let (survey, s) = one_body_problem_data();
        let boxes = [b(0.5, 1.1), b(1.5, 2.5), b(6.5, 7.5), b(7.5, 8.5), b(3.0, 5.0)];
        let p = Problem::new(&survey, Some(vec![s.mass()]), &boxes, 3.0, Functional::F1).unwrap();
        assert_eq!(p.regularizer(&midpoints(&boxes)), 0.0);
        let p0 = Problem::new(&survey, Some(vec![s.mass()]), &boxes, 0.0, Functional::F1).unwrap();
        let p2 = Problem::new(&survey, Some(vec![s.mass()]), &boxes, 0.0, Functional::F2).unwrap();
        let x = [0.9, 1.8, 7.2, 7.9, 3.5];
        assert_eq!(p0.objective(&x), p0.misfit(&x).unwrap());
        assert_eq!(p0.objective(&x), p2.objective(&x));
        assert_eq!(p2.regularizer(&[0.0; 5]), 0.0);
    }

    #[test]
    fn regularizer_is_unit_free() {
        let (survey, s) = one_body_problem_data();
        let boxes = [b(0.5, 1.1), b(1.5, 2.5), b(6.5, 7.5), b(7.5, 8.5), b(3.0, 5.0)];
        let p = Problem::new(&survey, Some(vec![s.mass()]), &boxes, 1.0, Functional::F1).unwrap();
        let x = [0.9, 1.8, 7.2, 7.9, 3.5];
        // metres instead of km for the position entries
        let scaled: Vec<ConstraintBox> = boxes
            .iter()
            .enumerate()
            .map(|(j, bx)| if j >= 2 { b(bx.min * 1e3, bx.max * 1e3) } else { *bx })
            .collect();
        let ps = Problem::new(&survey, Some(vec![s.mass()]), &scaled, 1.0, Functional::F1).unwrap();
        let xs: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, v)| if j >= 2 { v * 1e3 } else { *v })
            .collect();
        assert!((p.regularizer(&x) - ps.regularizer(&xs)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_geometry_scores_infinity() {
        let (survey, s) = one_body_problem_data();
        let boxes = [b(0.5, 5.0), b(1.5, 2.5), b(6.5, 7.5), b(7.5, 8.5), b(0.5, 5.0)];
        let p = Problem::new(&survey, Some(vec![s.mass()]), &boxes, 0.0, Functional::F1).unwrap();
        assert_eq!(p.objective(&[5.0, 1.5, 7.0, 8.0, 0.6]), f64::INFINITY);
    }

    #[test]
    fn exact_data_recovers_position_and_depth() {
        let (survey, s) = one_body_problem_data();
        let boxes = [b(0.5, 1.0), b(1.6, 2.2), b(6.5, 8.0), b(6.8, 9.0), b(3.0, 5.4)];
        let p = Problem::new(&survey, Some(vec![s.mass()]), &boxes, 0.0, Functional::F1).unwrap();
        let r = invert(
            &p,
            &midpoints(&boxes),
            &SolverOptions::default(),
            &DecrementalOptions::default(),
            None,
        )
        .unwrap();
        assert!(r.f_final < 1e-3 * r.f_initial);
        assert!((r.bodies[0].x0 - 7.0).abs() < 0.02);
        assert!((r.bodies[0].y0 - 8.0).abs() < 0.02);
        assert!((r.bodies[0].z0 - 4.0).abs() < 0.1);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        for (v, bx) in r.params.iter().zip(&r.initial_boxes) {
            assert!(bx.contains(*v));
        }
    }

    #[test]
    fn data_scaling_leaves_argmin() {
        let (survey, s) = one_body_problem_data();
        let boxes = [b(0.5, 1.0), b(1.6, 2.2), b(6.5, 8.0), b(6.8, 9.0), b(3.0, 5.4)];
        // Scaling data and model by c ≡ scaling ρ's box by c with data scaled by c.
        let c = 3.0;
        let scaled = Survey::new(
            survey
                .samples
                .iter()
                .map(|x| crate::survey::FieldSample { vz: x.vz * c, ..*x })
                .collect(),
            0.0,
            0,
        )
        .unwrap();
        let solve = |sv: &Survey, m: f64| {
            let p = Problem::new(sv, Some(vec![m]), &boxes, 0.0, Functional::F1).unwrap();
            coordinate_descent(
                &|x: &[f64]| p.objective(x),
                &boxes,
                &midpoints(&boxes),
                &SolverOptions::default(),
            )
        };
        // mass scaled by c scales the model by c at fixed ε, ρ, position
        let a = solve(&survey, s.mass());
        let bsol = solve(&scaled, s.mass() * c);
        // ε and ρ only shape the near field weakly; compare the position
        for (u, v) in a.params[2..].iter().zip(&bsol.params[2..]) {
            assert!((u - v).abs() < 1e-3, "{u} vs {v}");
        }
    }

    #[test]
    fn bad_layouts_rejected() {
        let (survey, _) = one_body_problem_data();
        let boxes = [b(0.6, 1.0); 4];
        assert!(Problem::new(&survey, Some(vec![1.0]), &boxes, 0.0, Functional::F1).is_err());
        let boxes = [b(0.6, 1.0); 5];
        assert!(Problem::new(&survey, Some(vec![1.0, 2.0]), &boxes, 0.0, Functional::F1).is_err());
        assert!(Problem::new(&survey, Some(vec![1.0]), &boxes, -1.0, Functional::F1).is_err());
    }
}
