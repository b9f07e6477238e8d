//! Declarative configuration and the grid → detect → estimate → invert chain.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bulakh::{estimate_bodies, BodyEstimate, ProbeOptions};
use crate::detect::{detect, DetectOptions, DetectionReport};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::Station;
use crate::grid::{grid_survey, FieldGrid, GridSpec, Gridder};
use crate::refine::{
    invert, midpoints, ConstraintBox, DecrementalOptions, Functional, InversionResult, Problem, SolverOptions,
};
use crate::survey::{example_one_layout, jittered_lattice, Survey};

pub const CONFIG_FORMAT: &str = "gravinv-config/1";
pub const ESTIMATES_FORMAT: &str = "gravinv-estimates/1";
pub const INVERSION_FORMAT: &str = "gravinv-inversion/1";
pub const PIPELINE_FORMAT: &str = "gravinv-pipeline/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format: String,
    /// Constants are fixed by the crate; recorded here for the experiment log.
    pub units: UnitsConfig,
    pub survey: SurveyConfig,
    pub grid: GridConfig,
    pub detection: DetectOptions,
    pub probes: ProbeOptions,
    pub solver: SolverOptions,
    pub decremental: DecrementalOptions,
    pub inversion: InversionConfig,
    /// Run batch loops on the rayon pool.
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            format: CONFIG_FORMAT.into(),
            units: UnitsConfig::default(),
            survey: SurveyConfig::default(),
            grid: GridConfig::default(),
            detection: DetectOptions::default(),
            probes: ProbeOptions::default(),
            solver: SolverOptions::default(),
            decremental: DecrementalOptions::default(),
            inversion: InversionConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitsConfig {
    pub g: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        UnitsConfig { g: crate::units::G_U }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub noise_sigma: f64,
    pub seed: u64,
    pub layout: Layout,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            noise_sigma: 1.0,
            seed: 0,
            layout: Layout::ExampleOne,
        }
    }
}

/// Station layout for synthetic surveys; jitter uses the survey seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// 45 stations: 7×7 over [0, 15]², jitter 0.3, corners dropped.
    ExampleOne,
    Lattice {
        n: usize,
        lo: f64,
        hi: f64,
        jitter: f64,
        drop_corners: bool,
    },
}

impl Layout {
    pub fn stations(&self, seed: u64) -> Result<Vec<Station>> {
        match self {
            Layout::ExampleOne => Ok(example_one_layout(seed)),
            Layout::Lattice {
                n,
                lo,
                hi,
                jitter,
                drop_corners,
            } => jittered_lattice(*n, *lo, *hi, *jitter, *drop_corners, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// Fraction of the station extent added on every side.
    pub margin: f64,
    /// Explicit `[x_min, x_max, y_min, y_max]`; overrides the margin rule.
    pub extent: Option<[f64; 4]>,
    pub gridder: Gridder,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nx: 61,
            ny: 61,
            margin: 0.1,
            extent: None,
            gridder: Gridder::default(),
        }
    }
}

impl GridConfig {
    pub fn spec_for(&self, survey: &Survey) -> Result<GridSpec> {
        match self.extent {
            Some([x0, x1, y0, y1]) => GridSpec::new((x0, x1), self.nx, (y0, y1), self.ny),
            None => GridSpec::around(survey.bounds(), self.margin, self.nx, self.ny),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub functional: Functional,
    pub alpha: f64,
    /// Treat each body's mass as a sixth parameter instead of fixing it at
    /// the initial estimate.
    pub free_mass: bool,
    pub default_box: DefaultBox,
    /// Per-body box overrides, matched to the nearest detected body.
    pub body: Vec<BodyBoxes>,
    /// Reference shape parameters `[ε, ρ, x0, y0, z0]` per body (detection
    /// order) for the δ report.
    pub reference: Option<Vec<[f64; 5]>>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            functional: Functional::F1,
            alpha: 0.0,
            free_mass: false,
            default_box: DefaultBox::default(),
            body: Vec::new(),
            reference: None,
        }
    }
}

/// Boxes built around an initial estimate when no override applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefaultBox {
    pub eps: [f64; 2],
    pub rho: [f64; 2],
    /// Half-width about the detected pole, km.
    pub xy_half_width: f64,
    /// Box `[z0(1 − f), z0(1 + f)]` about the depth estimate.
    pub z0_fraction: f64,
    /// Multipliers of the mass estimate (free-mass mode).
    pub mass_factor: [f64; 2],
}

impl Default for DefaultBox {
    fn default() -> Self {
        DefaultBox {
            eps: [0.3, 2.5],
            rho: [1.0, 3.5],
            xy_half_width: 0.75,
            z0_fraction: 0.4,
            mass_factor: [0.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyBoxes {
    /// Pole position used for matching; defaults to the x0/y0 box midpoints.
    pub near: Option<[f64; 2]>,
    pub eps: Option<[f64; 2]>,
    pub rho: Option<[f64; 2]>,
    pub x0: Option<[f64; 2]>,
    pub y0: Option<[f64; 2]>,
    pub z0: Option<[f64; 2]>,
    pub mass: Option<[f64; 2]>,
}

impl BodyBoxes {
    fn anchor(&self) -> Option<(f64, f64)> {
        if let Some([x, y]) = self.near {
            return Some((x, y));
        }
        match (self.x0, self.y0) {
            (Some(x), Some(y)) => Some((0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1]))),
            _ => None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn exec(&self) -> Execution {
        if self.parallel {
            Execution::default()
        } else {
            Execution::Sequential
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.format != CONFIG_FORMAT {
            return bad(format!("expected format `{CONFIG_FORMAT}`, got `{}`", self.format));
        }
        if (self.units.g - crate::units::G_U).abs() > 1e-9 {
            return bad(format!(
                "units.g is fixed at {}; got {}",
                crate::units::G_U,
                self.units.g
            ));
        }
        if !(self.survey.noise_sigma >= 0.0) {
            return bad("survey.noise_sigma must be >= 0".into());
        }
        if self.grid.nx < 3 || self.grid.ny < 3 || !(self.grid.margin >= 0.0) {
            return bad("grid needs nx, ny >= 3 and margin >= 0".into());
        }
        let d = &self.detection;
        if !(d.valley_threshold > 0.0 && d.valley_threshold < 1.0) {
            return bad("detection.valley_threshold must be in (0, 1)".into());
        }
        if !(d.prominence_sigmas >= 0.0 && d.min_prominence >= 0.0) {
            return bad("detection prominence gates must be >= 0".into());
        }
        let p = &self.probes;
        if !(p.isolation_factor >= 1.0 && 0.0 <= p.v_min && p.v_min < p.v_max && p.v_max <= 1.0) {
            return bad("probes need isolation_factor >= 1 and 0 <= v_min < v_max <= 1".into());
        }
        let s = &self.solver;
        if !(s.rel_tol >= 0.0) || s.max_sweeps == 0 || s.golden_iters == 0 {
            return bad("solver needs rel_tol >= 0, max_sweeps >= 1, golden_iters >= 1".into());
        }
        let r = &self.decremental;
        if !(r.shrink > 0.0 && r.shrink < 1.0 && r.interior_margin >= 0.0 && r.interior_margin < 0.5) {
            return bad("decremental needs 0 < shrink < 1 and 0 <= interior_margin < 0.5".into());
        }
        if !(r.floor_fraction > 0.0 && r.floor_fraction <= 1.0) {
            return bad("decremental.floor_fraction must be in (0, 1]".into());
        }
        let inv = &self.inversion;
        if !(inv.alpha >= 0.0) {
            return bad("inversion.alpha must be >= 0".into());
        }
        let db = &inv.default_box;
        for (name, [lo, hi]) in [("eps", db.eps), ("rho", db.rho), ("mass_factor", db.mass_factor)] {
            if !(lo > 0.0 && lo < hi) {
                return bad(format!("default_box.{name} needs 0 < lo < hi"));
            }
        }
        if !(db.xy_half_width > 0.0 && db.z0_fraction > 0.0 && db.z0_fraction < 1.0) {
            return bad("default_box needs xy_half_width > 0 and 0 < z0_fraction < 1".into());
        }
        for (k, b) in inv.body.iter().enumerate() {
            if b.anchor().is_none() {
                return bad(format!("inversion.body[{k}] needs `near` or both x0 and y0 boxes"));
            }
            for (name, v) in [
                ("eps", b.eps),
                ("rho", b.rho),
                ("x0", b.x0),
                ("y0", b.y0),
                ("z0", b.z0),
                ("mass", b.mass),
            ] {
                if let Some([lo, hi]) = v {
                    if !(lo < hi) {
                        return bad(format!("inversion.body[{k}].{name} needs lo < hi"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Initial estimates as written between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub format: String,
    pub bodies: Vec<BodyEstimate>,
}

impl EstimateReport {
    pub fn new(bodies: Vec<BodyEstimate>) -> Self {
        EstimateReport {
            format: ESTIMATES_FORMAT.into(),
            bodies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub format: String,
    pub result: InversionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub format: String,
    pub detection: DetectionReport,
    pub estimates: Vec<BodyEstimate>,
    pub inversion: InversionResult,
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Parses a stage report and checks its `format` tag.
pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str, format: &str) -> Result<T> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("report: {e}")))?;
    match raw.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == format => {}
        other => {
            return Err(Error::Config(format!(
                "expected report format `{format}`, got {:?}",
                other.unwrap_or("none")
            )))
        }
    }
    serde_json::from_value(raw).map_err(|e| Error::Config(format!("report: {e}")))
}

pub fn grid_stage(survey: &Survey, cfg: &PipelineConfig) -> Result<FieldGrid> {
    grid_survey(survey, cfg.grid.spec_for(survey)?, cfg.grid.gridder, cfg.exec())
}

pub fn detect_stage(grid: &FieldGrid, noise_sigma: f64, cfg: &PipelineConfig) -> Result<DetectionReport> {
    detect(grid, noise_sigma, &cfg.detection, cfg.exec())
}

pub fn estimate_stage(survey: &Survey, detection: &DetectionReport, cfg: &PipelineConfig) -> Result<Vec<BodyEstimate>> {
    if detection.resolved_bodies.is_empty() {
        return Err(Error::NoProbe {
            body: 0,
            reason: "no bodies were detected".into(),
        });
    }
    estimate_bodies(survey, &detection.resolved_bodies, &cfg.probes, cfg.exec())
}

fn pair(v: [f64; 2]) -> Result<ConstraintBox> {
    ConstraintBox::new(v[0], v[1])
}

/// Boxes per body (5 or 6 entries each) and the masses held fixed, if any.
pub fn build_boxes(
    estimates: &[BodyEstimate],
    cfg: &InversionConfig,
) -> Result<(Vec<ConstraintBox>, Option<Vec<f64>>)> {
    // each override goes to the nearest estimate; two overrides may not share one
    let mut assigned: Vec<Option<&BodyBoxes>> = vec![None; estimates.len()];
    for (k, ov) in cfg.body.iter().enumerate() {
        let (x, y) = ov.anchor().expect("validated");
        let near = (0..estimates.len())
            .min_by(|a, b| {
                let da = (estimates[*a].x0 - x).hypot(estimates[*a].y0 - y);
                let db = (estimates[*b].x0 - x).hypot(estimates[*b].y0 - y);
                da.total_cmp(&db)
            })
            .ok_or_else(|| Error::Config("box overrides given but no bodies detected".into()))?;
        if assigned[near].is_some() {
            return Err(Error::Config(format!(
                "inversion.body[{k}] matches the same detected body as an earlier override"
            )));
        }
        assigned[near] = Some(ov);
    }
    let d = &cfg.default_box;
    let mut boxes = Vec::new();
    for (e, ov) in estimates.iter().zip(&assigned) {
        let ov = ov.cloned().unwrap_or_default();
        let zf = d.z0_fraction;
        boxes.push(pair(ov.eps.unwrap_or(d.eps))?);
        boxes.push(pair(ov.rho.unwrap_or(d.rho))?);
        boxes.push(pair(ov.x0.unwrap_or([e.x0 - d.xy_half_width, e.x0 + d.xy_half_width]))?);
        boxes.push(pair(ov.y0.unwrap_or([e.y0 - d.xy_half_width, e.y0 + d.xy_half_width]))?);
        boxes.push(pair(ov.z0.unwrap_or([e.z0 * (1.0 - zf), e.z0 * (1.0 + zf)]))?);
        if cfg.free_mass {
            boxes.push(pair(
                ov.mass
                    .unwrap_or([e.mass * d.mass_factor[0], e.mass * d.mass_factor[1]]),
            )?);
        }
    }
    let fixed = (!cfg.free_mass).then(|| estimates.iter().map(|e| e.mass).collect());
    Ok((boxes, fixed))
}

/// Refines from the box midpoints.
pub fn invert_stage(survey: &Survey, estimates: &[BodyEstimate], cfg: &PipelineConfig) -> Result<InversionResult> {
    let (boxes, fixed) = build_boxes(estimates, &cfg.inversion)?;
    let mut problem = Problem::new(survey, fixed, &boxes, cfg.inversion.alpha, cfg.inversion.functional)?;
    problem.exec = cfg.exec();
    let reference: Option<Vec<f64>> = cfg
        .inversion
        .reference
        .as_ref()
        .map(|r| r.iter().flat_map(|b| b.to_vec()).collect());
    if let Some(r) = &reference {
        if r.len() != 5 * estimates.len() {
            return Err(Error::Config(format!(
                "reference lists {} bodies, {} detected",
                r.len() / 5,
                estimates.len()
            )));
        }
    }
    invert(
        &problem,
        &midpoints(&boxes),
        &cfg.solver,
        &cfg.decremental,
        reference.as_deref(),
    )
}

pub fn run_pipeline(survey: &Survey, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let grid = grid_stage(survey, cfg)?;
    let detection = detect_stage(&grid, survey.noise_sigma, cfg)?;
    let estimates = estimate_stage(survey, &detection, cfg)?;
    let inversion = invert_stage(survey, &estimates, cfg)?;
    Ok(PipelineReport {
        format: PIPELINE_FORMAT.into(),
        detection,
        estimates,
        inversion,
    })
}

/// Plain-text table: bounds, midpoints and solution per body, with volume
/// and mass columns.
pub fn table_report(r: &InversionResult) -> String {
    let k = if r.free_mass { 6 } else { 5 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# gravinv inversion: functional={:?} alpha={} free_mass={} rounds={} sweeps={}",
        r.functional, r.alpha, r.free_mass, r.rounds, r.sweeps
    );
    let _ = writeln!(
        out,
        "{:<10}{:>9}{:>9}{:>9}{:>9}{:>9}{:>10}{:>10}",
        "p", "eps", "rho", "x0", "y0", "z0", "v", "M"
    );
    for (b, body) in r.bodies.iter().enumerate() {
        let _ = writeln!(out, "body {}", b + 1);
        let bx = &r.initial_boxes[b * k..b * k + k];
        let mrow = |f: &dyn Fn(&ConstraintBox) -> f64| -> String {
            if k == 6 {
                format!("{:>10}{:>10.2}", "", f(&bx[5]))
            } else {
                String::new()
            }
        };
        for (label, f) in [
            ("p_min", &(|c: &ConstraintBox| c.min) as &dyn Fn(&ConstraintBox) -> f64),
            ("p_max", &|c: &ConstraintBox| c.max),
            ("p_mid", &|c: &ConstraintBox| c.mid()),
        ] {
            let _ = write!(out, "{label:<10}");
            for c in &bx[..5] {
                let _ = write!(out, "{:>9.3}", f(c));
            }
            let _ = writeln!(out, "{}", mrow(f));
        }
        let _ = writeln!(
            out,
            "{:<10}{:>9.3}{:>9.3}{:>9.3}{:>9.3}{:>9.3}{:>10.2}{:>10.2}",
            "solution", body.eps, body.rho, body.x0, body.y0, body.z0, body.volume, body.mass
        );
        let _ = writeln!(out, "{:<10}{:>9.3}", "a", body.a);
    }
    let _ = writeln!(out, "F initial {:.6e}  final {:.6e}", r.f_initial, r.f_final);
    if let Some(d) = r.delta {
        let _ = writeln!(out, "delta {d:.6e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
format = "gravinv-config/1"
[inversion]
free_mass = true
[[inversion.body]]
x0 = [5.4, 6.0]
y0 = [5.2, 6.0]
"#,
        )
        .unwrap();
        assert!(cfg.inversion.free_mass);
        assert_eq!(cfg.grid.nx, 61);
        assert_eq!(cfg.inversion.body[0].anchor(), Some((5.7, 5.6)));
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "format = \"other\"",
            "format = \"gravinv-config/1\"\n[detection]\nvalley_threshold = 1.5",
            "format = \"gravinv-config/1\"\n[grid]\nnx = 2",
            "format = \"gravinv-config/1\"\nunknown_key = 1",
            "format = \"gravinv-config/1\"\n[[inversion.body]]\neps = [0.2, 0.6]",
            "format = \"gravinv-config/1\"\n[units]\ng = 6.67",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    fn est(x: f64, y: f64) -> BodyEstimate {
        BodyEstimate {
            x0: x,
            y0: y,
            z0: 4.0,
            mass: 50.0,
            z0_samples: vec![4.0],
            mass_samples: vec![50.0],
            dropped: 0,
        }
    }

    #[test]
    fn overrides_match_nearest_body() {
        let mut cfg = InversionConfig {
            free_mass: true,
            ..Default::default()
        };
        cfg.body.push(BodyBoxes {
            x0: Some([10.3, 11.0]),
            y0: Some([10.2, 12.0]),
            z0: Some([2.3, 4.3]),
            ..Default::default()
        });
        let (boxes, fixed) = build_boxes(&[est(5.7, 5.6), est(10.6, 11.2)], &cfg).unwrap();
        assert!(fixed.is_none());
        assert_eq!(boxes.len(), 12);
        assert_eq!(boxes[6 + 4], ConstraintBox::new(2.3, 4.3).unwrap());
        assert_eq!(boxes[2], ConstraintBox::new(5.7 - 0.75, 5.7 + 0.75).unwrap());
        assert_eq!(boxes[5], ConstraintBox::new(25.0, 75.0).unwrap());
    }

    #[test]
    fn report_format_is_checked() {
        let r = EstimateReport::new(vec![est(1.0, 2.0)]);
        let text = to_json(&r);
        assert_eq!(from_json::<EstimateReport>(&text, ESTIMATES_FORMAT).unwrap(), r);
        assert!(from_json::<EstimateReport>(&text, INVERSION_FORMAT).is_err());
    }
}
