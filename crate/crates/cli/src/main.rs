//! `gravinv` command-line front end.
//!
//! Every stage reads and writes plain files so the steps can be run one at a
//! time; `pipeline` chains them. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gravinv_core::bar::{BarBody, BAR_HEADER};
use gravinv_core::contour::{even_levels, extract_contours, write_contours};
use gravinv_core::detect::DetectionReport;
use gravinv_core::grid::{grid_truth, FieldGrid, GridSpec};
use gravinv_core::pipeline::{
    detect_stage, estimate_stage, from_json, grid_stage, invert_stage, run_pipeline, table_report, to_json,
    EstimateReport, InversionReport, PipelineConfig, ESTIMATES_FORMAT, INVERSION_FORMAT,
};
use gravinv_core::refine::Functional;
use gravinv_core::survey::{synth_survey, Survey, Truth};
use gravinv_core::{Deposit, Station};

#[derive(Parser)]
#[command(
    name = "gravinv",
    version,
    about = "Spheroid gravimetry: forward fields, synthetic surveys and inversion"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a truth model on a grid (and optionally at the layout stations).
    Forward(ForwardArgs),
    /// Noisy synthetic survey from a truth model.
    Synth(SynthArgs),
    /// Grid a survey and find the resolved poles.
    Detect(DetectArgs),
    /// Depth and mass estimates per detected body.
    Estimate(EstimateArgs),
    /// Constrained refinement of the spheroid parameters.
    Invert(InvertArgs),
    /// Grid, detect, estimate and invert in one go.
    Pipeline(PipelineArgs),
    /// Isolines of a grid file.
    Contours(ContoursArgs),
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML); built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Run every loop on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ForwardArgs {
    #[command(flatten)]
    common: Common,
    /// Deposit (TOML) or bar body (text) file.
    #[arg(short, long)]
    truth: PathBuf,
    /// Output grid file.
    #[arg(short, long)]
    out: PathBuf,
    /// Also write noise-free readings at the configured layout.
    #[arg(long)]
    samples: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    truth: PathBuf,
    /// Output survey file.
    #[arg(short, long)]
    out: PathBuf,
    /// Overrides `survey.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `survey.noise_sigma` (mGal).
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    survey: PathBuf,
    /// Output detection report (JSON).
    #[arg(short, long)]
    out: PathBuf,
    /// Also write the interpolated grid.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    survey: PathBuf,
    #[arg(short, long)]
    detection: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct Refine {
    /// Overrides `inversion.alpha`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides `inversion.functional`.
    #[arg(long, value_enum)]
    functional: Option<FunctionalArg>,
    /// Plain-text table of boxes and solution.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionalArg {
    F1,
    F2,
}

#[derive(Args)]
struct InvertArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    refine: Refine,
    #[arg(short, long)]
    survey: PathBuf,
    #[arg(short, long)]
    estimates: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    refine: Refine,
    /// Measured survey; mutually exclusive with --truth.
    #[arg(short, long, conflicts_with = "truth", required_unless_present = "truth")]
    survey: Option<PathBuf>,
    /// Synthesize the survey from this truth model first.
    #[arg(short, long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Output pipeline report (JSON).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ContoursArgs {
    #[arg(short, long)]
    grid: PathBuf,
    /// Explicit levels in mGal, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "count")]
    levels: Vec<f64>,
    /// Number of evenly spaced levels between the grid minimum and maximum.
    #[arg(short = 'n', long, default_value_t = 10)]
    count: usize,
    #[arg(short, long)]
    out: PathBuf,
}

fn load_config(c: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if c.sequential {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn apply_refine(cfg: &mut PipelineConfig, r: &Refine) -> anyhow::Result<()> {
    if let Some(a) = r.alpha {
        cfg.inversion.alpha = a;
    }
    if let Some(f) = r.functional {
        cfg.inversion.functional = match f {
            FunctionalArg::F1 => Functional::F1,
            FunctionalArg::F2 => Functional::F2,
        };
    }
    cfg.validate()?;
    Ok(())
}

fn apply_survey(cfg: &mut PipelineConfig, seed: Option<u64>, sigma: Option<f64>) -> anyhow::Result<()> {
    if let Some(s) = seed {
        cfg.survey.seed = s;
    }
    if let Some(s) = sigma {
        cfg.survey.noise_sigma = s;
    }
    cfg.validate()?;
    Ok(())
}

fn read_truth(path: &Path) -> anyhow::Result<Truth> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.lines().next().map(str::trim) == Some(BAR_HEADER) {
        Ok(Truth::Bars(vec![BarBody::from_text(
            &text,
            &path.display().to_string(),
        )?]))
    } else {
        Ok(Truth::Deposit(Deposit::read(path)?))
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synthesize(cfg: &PipelineConfig, truth: &Truth) -> anyhow::Result<Survey> {
    let stations = cfg.survey.layout.stations(cfg.survey.seed)?;
    Ok(synth_survey(
        truth,
        &stations,
        cfg.survey.noise_sigma,
        cfg.survey.seed,
        cfg.exec(),
    )?)
}

fn forward(a: &ForwardArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    let truth = read_truth(&a.truth)?;
    let stations = cfg.survey.layout.stations(cfg.survey.seed)?;
    let spec = match cfg.grid.extent {
        Some([x0, x1, y0, y1]) => GridSpec::new((x0, x1), cfg.grid.nx, (y0, y1), cfg.grid.ny)?,
        None => GridSpec::around(bounds(&stations), cfg.grid.margin, cfg.grid.nx, cfg.grid.ny)?,
    };
    let g = grid_truth(&truth, spec, cfg.exec())?;
    g.write(&a.out)?;
    println!(
        "grid {}x{} written to {} (max {:.3} mGal)",
        spec.nx,
        spec.ny,
        a.out.display(),
        g.max()
    );
    if let Some(p) = &a.samples {
        let s = synth_survey(&truth, &stations, 0.0, cfg.survey.seed, cfg.exec())?;
        s.write(p)?;
        println!("{} noise-free samples written to {}", s.len(), p.display());
    }
    Ok(())
}

fn bounds(stations: &[Station]) -> (f64, f64, f64, f64) {
    stations.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), s| (a.min(s.x), b.max(s.x), c.min(s.y), d.max(s.y)),
    )
}

fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_survey(&mut cfg, a.seed, a.sigma)?;
    let s = synthesize(&cfg, &read_truth(&a.truth)?)?;
    s.write(&a.out)?;
    println!(
        "{} samples (sigma {} mGal, seed {}) written to {}",
        s.len(),
        s.noise_sigma,
        s.seed,
        a.out.display()
    );
    Ok(())
}

fn detect(a: &DetectArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    let survey = Survey::read(&a.survey)?;
    let grid = grid_stage(&survey, &cfg)?;
    if let Some(p) = &a.grid {
        grid.write(p)?;
    }
    let det = detect_stage(&grid, survey.noise_sigma, &cfg)?;
    write_text(&a.out, &det.to_json())?;
    println!("{} bodies resolved from {} poles", det.body_count(), det.poles.len());
    for (x, y) in &det.resolved_bodies {
        println!("  pole at ({x:.2}, {y:.2}) km");
    }
    Ok(())
}

fn estimate(a: &EstimateArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.common)?;
    let survey = Survey::read(&a.survey)?;
    let det = DetectionReport::from_json(&read_text(&a.detection)?)?;
    let est = estimate_stage(&survey, &det, &cfg)?;
    write_text(&a.out, &to_json(&EstimateReport::new(est.clone())))?;
    for (k, e) in est.iter().enumerate() {
        println!(
            "body {}: z0 {:.2} km, M {:.1} bln t from {} probes",
            k + 1,
            e.z0,
            e.mass,
            e.z0_samples.len()
        );
    }
    Ok(())
}

fn write_inversion(out: &Path, table: Option<&Path>, r: &gravinv_core::refine::InversionResult) -> anyhow::Result<()> {
    let rep = InversionReport {
        format: INVERSION_FORMAT.into(),
        result: r.clone(),
    };
    write_text(out, &to_json(&rep))?;
    let t = table_report(r);
    if let Some(p) = table {
        write_text(p, &t)?;
    }
    print!("{t}");
    Ok(())
}

fn invert(a: &InvertArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_refine(&mut cfg, &a.refine)?;
    let survey = Survey::read(&a.survey)?;
    let est: EstimateReport = from_json(&read_text(&a.estimates)?, ESTIMATES_FORMAT)?;
    if est.bodies.is_empty() {
        bail!(gravinv_core::Error::Invalid("estimates list no bodies".into()));
    }
    let r = invert_stage(&survey, &est.bodies, &cfg)?;
    write_inversion(&a.out, a.refine.table.as_deref(), &r)
}

fn pipeline(a: &PipelineArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.common)?;
    apply_refine(&mut cfg, &a.refine)?;
    apply_survey(&mut cfg, a.seed, a.sigma)?;
    let survey = match (&a.survey, &a.truth) {
        (Some(p), _) => Survey::read(p)?,
        (None, Some(t)) => synthesize(&cfg, &read_truth(t)?)?,
        (None, None) => unreachable!("clap requires one of --survey/--truth"),
    };
    let rep = run_pipeline(&survey, &cfg)?;
    write_text(&a.out, &to_json(&rep))?;
    println!("{} bodies detected", rep.detection.body_count());
    let t = table_report(&rep.inversion);
    if let Some(p) = &a.refine.table {
        write_text(p, &t)?;
    }
    print!("{t}");
    Ok(())
}

fn contours(a: &ContoursArgs) -> anyhow::Result<()> {
    let g = FieldGrid::read(&a.grid)?;
    let levels = if a.levels.is_empty() {
        even_levels(&g, a.count)
    } else {
        a.levels.clone()
    };
    let lines = extract_contours(&g, &levels)?;
    write_contours(&lines, &a.out)?;
    println!(
        "{} polylines on {} levels written to {}",
        lines.len(),
        levels.len(),
        a.out.display()
    );
    Ok(())
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<gravinv_core::Error>() {
        Some(c) if c.is_numeric() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.cmd {
        Cmd::Forward(a) => forward(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Detect(a) => detect(a),
        Cmd::Estimate(a) => estimate(a),
        Cmd::Invert(a) => invert(a),
        Cmd::Pipeline(a) => pipeline(a),
        Cmd::Contours(a) => contours(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already carry their cause in the message
            match e.downcast_ref::<gravinv_core::Error>() {
                Some(c) => eprintln!("error: {c}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
