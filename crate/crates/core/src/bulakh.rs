//! Point-mass depth and mass estimates from pairs of surface readings.
//!
//! For a point mass at depth z0 the ratio of the field at horizontal offset
//! `s` to the field at offset `Δ` fixes `μ = z0/s` through
//! `v^{2/3} (μ² + 1) = μ² + ψ²` with `ψ = Δ/s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::survey::{FieldSample, Survey};
use crate::units::MASS_CONSTANT;

/// `μ(v)` for a reading taken exactly at the pole.
pub fn mu_of_v(v: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Domain(format!("μ(v) needs 0 <= v < 1, got {v}")));
    }
    let w = v.powf(2.0 / 3.0);
    Ok((w / (1.0 - w)).sqrt())
}

/// `μ(v, ψ)` for a near-pole reading offset by `Δ = ψ·s`.
pub fn mu_of_v_psi(v: f64, psi: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Domain(format!("μ(v, ψ) needs 0 <= v < 1, got {v}")));
    }
    if !(0.0..1.0).contains(&psi) {
        return Err(Error::Domain(format!("μ(v, ψ) needs 0 <= ψ < 1, got {psi}")));
    }
    let w = v.powf(2.0 / 3.0);
    let num = w - psi * psi;
    if num < 0.0 {
        return Err(Error::Domain(format!(
            "ψ² = {:.4} exceeds v^(2/3) = {w:.4}: inconsistent with a point mass",
            psi * psi
        )));
    }
    Ok((num / (1.0 - w)).sqrt())
}

/// `M = c (z0² + Δ²)^{3/2} / z0 · V_zQ` for an explicit constant `c`.
pub fn mass_with_constant(z0: f64, delta: f64, vz_q: f64, c: f64) -> Result<f64> {
    if !(z0 > 0.0) {
        return Err(Error::Domain(format!("mass estimate needs z0 > 0, got {z0}")));
    }
    Ok(c * (z0 * z0 + delta * delta).powf(1.5) / z0 * vz_q)
}

/// Mass from depth and the near-pole reading `q`, using `1/G`.
pub fn estimate_mass(z0: f64, q: &FieldSample, body: (f64, f64)) -> Result<f64> {
    let delta = q.station.distance_to(body.0, body.1);
    mass_with_constant(z0, delta, q.vz, MASS_CONSTANT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    /// Offset reading.
    pub p: FieldSample,
    /// Near-pole reading.
    pub q: FieldSample,
    pub s: f64,
    pub delta: f64,
    pub v: f64,
    pub psi: f64,
}

impl ProbePair {
    pub fn new(p: FieldSample, q: FieldSample, body: (f64, f64)) -> Result<Self> {
        let s = p.station.distance_to(body.0, body.1);
        let delta = q.station.distance_to(body.0, body.1);
        if !(s > 0.0) {
            return Err(Error::Domain("probe P sits on the pole (s = 0)".into()));
        }
        if !(q.vz > 0.0) {
            return Err(Error::Domain(format!(
                "near-pole reading must be positive, got {}",
                q.vz
            )));
        }
        Ok(ProbePair {
            p,
            q,
            s,
            delta,
            v: p.vz / q.vz,
            psi: delta / s,
        })
    }

    pub fn depth(&self) -> Result<f64> {
        Ok(mu_of_v_psi(self.v, self.psi)? * self.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    /// Another pole must be at least this many times farther than ours.
    pub isolation_factor: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            isolation_factor: 1.5,
            v_min: 0.05,
            v_max: 0.95,
        }
    }
}

/// Pairs every admissible offset reading with the reading nearest the pole
/// of `bodies[this]`.
pub fn select_probe_points(
    survey: &Survey,
    bodies: &[(f64, f64)],
    this: usize,
    opts: &ProbeOptions,
) -> Result<Vec<ProbePair>> {
    let no = |reason: &str| Error::NoProbe {
        body: this,
        reason: reason.into(),
    };
    if survey.len() < 2 {
        return Err(no("survey has fewer than two samples"));
    }
    let pole = *bodies
        .get(this)
        .ok_or_else(|| Error::Invalid(format!("no body {this}")))?;
    let dist = |s: &FieldSample, b: (f64, f64)| s.station.distance_to(b.0, b.1);
    let qk = (0..survey.len())
        .min_by(|a, b| dist(&survey.samples[*a], pole).total_cmp(&dist(&survey.samples[*b], pole)))
        .unwrap();
    let q = survey.samples[qk];
    if !(q.vz > 0.0) {
        return Err(no("near-pole reading is not positive"));
    }
    let mut out = Vec::new();
    for (k, p) in survey.samples.iter().enumerate() {
        if k == qk {
            continue;
        }
        let d = dist(p, pole);
        let isolated = bodies
            .iter()
            .enumerate()
            .all(|(o, b)| o == this || dist(p, *b) >= opts.isolation_factor * d);
        if !isolated || d <= 0.0 {
            continue;
        }
        let pair = ProbePair::new(*p, q, pole)?;
        if pair.v > opts.v_min && pair.v < opts.v_max && pair.psi < 1.0 {
            out.push(pair);
        }
    }
    if out.is_empty() {
        return Err(no("no offset reading passes the isolation and ratio filters"));
    }
    Ok(out)
}

/// Per-body initial estimate; `z0` and `mass` are means of the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyEstimate {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub mass: f64,
    pub z0_samples: Vec<f64>,
    pub mass_samples: Vec<f64>,
    /// Probes rejected by the depth formula.
    pub dropped: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Depth samples `μ(v, ψ)·s`; probes outside the formula's domain are dropped.
pub fn estimate_depth(probes: &[ProbePair]) -> Result<(f64, Vec<f64>, usize)> {
    let mut samples = Vec::with_capacity(probes.len());
    let mut dropped = 0;
    for p in probes {
        match p.depth() {
            Ok(z) if z > 0.0 => samples.push(z),
            _ => dropped += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::NoProbe {
            body: 0,
            reason: format!("all {} probes fall outside the depth formula's domain", probes.len()),
        });
    }
    Ok((mean(&samples), samples, dropped))
}

pub fn estimate_body(survey: &Survey, bodies: &[(f64, f64)], this: usize, opts: &ProbeOptions) -> Result<BodyEstimate> {
    let probes = select_probe_points(survey, bodies, this, opts)?;
    let (z0, z0_samples, dropped) = estimate_depth(&probes).map_err(|e| match e {
        Error::NoProbe { reason, .. } => Error::NoProbe { body: this, reason },
        other => other,
    })?;
    let pole = bodies[this];
    let q = probes[0].q;
    let mass_samples = z0_samples
        .iter()
        .map(|z| estimate_mass(*z, &q, pole))
        .collect::<Result<Vec<_>>>()?;
    Ok(BodyEstimate {
        x0: pole.0,
        y0: pole.1,
        z0,
        mass: mean(&mass_samples),
        z0_samples,
        mass_samples,
        dropped,
    })
}

pub fn estimate_bodies(
    survey: &Survey,
    bodies: &[(f64, f64)],
    opts: &ProbeOptions,
    exec: Execution,
) -> Result<Vec<BodyEstimate>> {
    exec.map_jobs(bodies.len(), |k| estimate_body(survey, bodies, k, opts))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{point_mass_vz, Station};

    const TABLE: [(f64, f64); 9] = [
        (0.1, 0.5240),
        (0.2, 0.7209),
        (0.3, 0.9011),
        (0.4, 1.0898),
        (0.5, 1.3048),
        (0.6, 1.5700),
        (0.7, 1.9301),
        (0.8, 2.4969),
        (0.9, 3.7071),
    ];

    #[test]
    fn tabulated_values() {
        assert_eq!(mu_of_v(0.0).unwrap(), 0.0);
        for (v, mu) in TABLE {
            assert!((mu_of_v(v).unwrap() - mu).abs() < 5e-5, "v={v}");
        }
        assert!(mu_of_v(1.0).is_err());
        assert!(mu_of_v(-0.1).is_err());
    }

    #[test]
    fn psi_zero_reduces() {
        for v in [0.1, 0.37, 0.8] {
            assert_eq!(mu_of_v_psi(v, 0.0).unwrap(), mu_of_v(v).unwrap());
        }
    }

    #[test]
    fn inconsistent_psi_is_a_domain_error() {
        assert!(matches!(mu_of_v_psi(0.1, 0.9), Err(Error::Domain(_))));
    }

    #[test]
    fn point_mass_probe_geometry() {
        let (m, z0) = (10.0, 3.0);
        let pv = point_mass_vz(m, 0.0, 0.0, z0, Station::new(3.0, 0.0)).unwrap();
        let qv = point_mass_vz(m, 0.0, 0.0, z0, Station::new(0.0, 1.0)).unwrap();
        let mu = mu_of_v_psi(pv / qv, 1.0 / 3.0).unwrap();
        assert!((mu * 3.0 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rounded_mass_constant_example() {
        assert!((mass_with_constant(2.0, 0.0, 10.0, 0.15).unwrap() - 6.0).abs() < 1e-12);
        assert!(mass_with_constant(0.0, 0.0, 10.0, 0.15).is_err());
    }

    #[test]
    fn offset_branch_matches_pole_branch_at_zero() {
        let q = FieldSample {
            station: Station::new(1.0, 1.0),
            vz: 7.0,
        };
        let a = estimate_mass(2.5, &q, (1.0, 1.0)).unwrap();
        assert!((a - MASS_CONSTANT * 2.5 * 2.5 * 7.0).abs() < 1e-12);
    }

    fn point_survey(stations: &[(f64, f64)], bodies: &[(f64, f64, f64, f64)]) -> Survey {
        let samples = stations
            .iter()
            .map(|&(x, y)| {
                let st = Station::new(x, y);
                FieldSample {
                    station: st,
                    vz: bodies
                        .iter()
                        .map(|b| point_mass_vz(b.3, b.0, b.1, b.2, st).unwrap())
                        .sum(),
                }
            })
            .collect();
        Survey::new(samples, 0.0, 0).unwrap()
    }

    #[test]
    fn single_body_all_offsets_admissible() {
        let st: Vec<(f64, f64)> = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i as f64 * 2.0, j as f64 * 2.0)))
            .collect();
        let s = point_survey(&st, &[(4.0, 4.0, 3.0, 20.0)]);
        let opts = ProbeOptions {
            v_min: 0.0,
            v_max: 1.0,
            ..Default::default()
        };
        let probes = select_probe_points(&s, &[(4.0, 4.0)], 0, &opts).unwrap();
        assert_eq!(probes.len(), 24);
        let est = estimate_body(&s, &[(4.0, 4.0)], 0, &opts).unwrap();
        assert!((est.z0 - 3.0).abs() < 1e-9);
        assert!((est.mass - 20.0).abs() < 1e-8);
    }

    #[test]
    fn equidistant_sample_excluded() {
        let s = point_survey(
            &[(5.0, 0.0), (0.0, 0.0), (10.0, 0.0), (1.0, 0.0)],
            &[(0.0, 0.0, 3.0, 5.0)],
        );
        let bodies = [(0.0, 0.0), (10.0, 0.0)];
        let opts = ProbeOptions {
            v_min: 0.0,
            v_max: 1.0,
            ..Default::default()
        };
        let probes = select_probe_points(&s, &bodies, 0, &opts).unwrap();
        assert!(probes.iter().all(|p| p.p.station.x != 5.0));
        assert_eq!(probes.len(), 1);
    }

    #[test]
    fn no_admissible_probe_is_reported() {
        let s = point_survey(&[(0.0, 0.0), (5.0, 0.0)], &[(0.0, 0.0, 3.0, 5.0)]);
        let err = select_probe_points(&s, &[(0.0, 0.0), (5.0, 0.0)], 0, &ProbeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoProbe { body: 0, .. }));
    }
}
