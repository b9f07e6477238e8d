use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gravinv_core::detect::find_poles;
use gravinv_core::field::point_mass_vz;
use gravinv_core::grid::FieldGrid;
use gravinv_core::pipeline::{from_json, PipelineReport, PIPELINE_FORMAT};
use gravinv_core::Station;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn gravinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gravinv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = gravinv(args);
    assert!(
        out.status.success(),
        "gravinv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn forward_sphere_peak_is_point_mass_value() {
    let dir = TempDir::new().unwrap();
    let truth = p(&dir, "sphere.toml");
    std::fs::write(
        &truth,
        "format = \"gravinv-deposit/1\"\n[[body]]\nx0 = 5.0\ny0 = 5.0\nz0 = 3.0\neps = 1.0\nrho = 2.0\nmass = 40.0\n",
    )
    .unwrap();
    let cfg = p(&dir, "cfg.toml");
    std::fs::write(
        &cfg,
        "format = \"gravinv-config/1\"\n[grid]\nnx = 21\nny = 21\nextent = [0.0, 10.0, 0.0, 10.0]\n",
    )
    .unwrap();
    let grid = p(&dir, "g.txt");
    ok(&["forward", "-c", &cfg, "-t", &truth, "-o", &grid]);
    let g = FieldGrid::read(&grid).unwrap();
    let want = point_mass_vz(40.0, 5.0, 5.0, 3.0, Station::new(5.0, 5.0)).unwrap();
    assert!((g.max() - want).abs() < 1e-9 * want, "{} vs {want}", g.max());
}

#[test]
fn forward_example_pair_has_two_poles() {
    let dir = TempDir::new().unwrap();
    let grid = p(&dir, "g.txt");
    let samples = p(&dir, "s.txt");
    ok(&[
        "forward",
        "-t",
        data("example1.toml").to_str().unwrap(),
        "-o",
        &grid,
        "--samples",
        &samples,
    ]);
    let g = FieldGrid::read(&grid).unwrap();
    assert_eq!(find_poles(&g, 1.0).len(), 2);
    assert!(std::fs::read_to_string(&samples)
        .unwrap()
        .starts_with("# gravinv-survey v1"));
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = gravinv(&["forward", "-t", "/no/such/file.toml", "-o", &p(&dir, "g.txt")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.toml"));
}

#[test]
fn bad_config_and_bad_flags_exit_one() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "cfg.toml");
    std::fs::write(&cfg, "format = \"gravinv-config/1\"\n[grid]\nnx = 1\n").unwrap();
    let out = gravinv(&[
        "synth",
        "-c",
        &cfg,
        "-t",
        data("example1.toml").to_str().unwrap(),
        "-o",
        &p(&dir, "s.txt"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = gravinv(&[
        "synth",
        "--sigma",
        "-1",
        "-t",
        data("example1.toml").to_str().unwrap(),
        "-o",
        &p(&dir, "s.txt"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(gravinv(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gravinv(&["--help"]).status.code(), Some(0));
}

#[test]
fn flat_survey_is_a_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let survey = p(&dir, "flat.txt");
    let mut text = String::from("# gravinv-survey v1\n# noise_sigma_mgal=1 seed=0\nx_km,y_km,vz_mgal\n");
    for j in 0..6 {
        for i in 0..6 {
            text.push_str(&format!("{},{},0\n", 3 * i, 3 * j));
        }
    }
    std::fs::write(&survey, text).unwrap();
    let out = gravinv(&["pipeline", "-s", &survey, "-o", &p(&dir, "r.json")]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn staged_run_matches_pipeline_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = data("example1-config.toml");
    let cfg = cfg.to_str().unwrap();
    let truth = data("example1.toml");
    let truth = truth.to_str().unwrap();
    let (s, d, e, i) = (
        p(&dir, "s.txt"),
        p(&dir, "d.json"),
        p(&dir, "e.json"),
        p(&dir, "i.json"),
    );
    ok(&["synth", "-c", cfg, "-t", truth, "-o", &s]);
    ok(&["detect", "-c", cfg, "-s", &s, "-o", &d]);
    ok(&["estimate", "-c", cfg, "-s", &s, "-d", &d, "-o", &e]);
    ok(&["invert", "-c", cfg, "-s", &s, "-e", &e, "-o", &i]);

    let (r1, r2) = (p(&dir, "r1.json"), p(&dir, "r2.json"));
    ok(&["pipeline", "-c", cfg, "-t", truth, "-o", &r1]);
    ok(&["pipeline", "-c", cfg, "-s", &s, "-o", &r2, "--sequential"]);
    let a = std::fs::read(&r1).unwrap();
    assert_eq!(a, std::fs::read(&r2).unwrap());

    let rep: PipelineReport = from_json(&String::from_utf8(a).unwrap(), PIPELINE_FORMAT).unwrap();
    let staged: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&i).unwrap()).unwrap();
    let staged_params: Vec<f64> = serde_json::from_value(staged["result"]["params"].clone()).unwrap();
    assert_eq!(staged_params, rep.inversion.params);

    // positions against the generating deposit
    assert_eq!(rep.detection.body_count(), 2);
    let mut found: Vec<(f64, f64, f64)> = rep.inversion.bodies.iter().map(|b| (b.x0, b.y0, b.z0)).collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    for ((x, y, z), (tx, ty, tz)) in found.iter().zip([(5.7, 5.3, 4.2), (10.7, 11.1, 3.8)]) {
        assert!(
            (x - tx).abs() <= 0.5 && (y - ty).abs() <= 0.8 && (z - tz).abs() <= 0.7,
            "{x} {y} {z}"
        );
    }
}

#[test]
fn five_body_pipeline_reports_25_parameters() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "r.json");
    let table = p(&dir, "t.txt");
    ok(&[
        "pipeline",
        "-c",
        data("five-body-config.toml").to_str().unwrap(),
        "-t",
        data("five-body.toml").to_str().unwrap(),
        "-o",
        &out,
        "--table",
        &table,
    ]);
    let rep: PipelineReport = from_json(&std::fs::read_to_string(&out).unwrap(), PIPELINE_FORMAT).unwrap();
    assert_eq!(rep.detection.body_count(), 5);
    assert_eq!(rep.inversion.params.len(), 25);
    assert_eq!(std::fs::read_to_string(&table).unwrap().matches("solution").count(), 5);
}

#[test]
fn single_body_detects_one() {
    let dir = TempDir::new().unwrap();
    let truth = p(&dir, "one.toml");
    std::fs::write(
        &truth,
        "format = \"gravinv-deposit/1\"\n[[body]]\nx0 = 7.0\ny0 = 8.0\nz0 = 3.5\neps = 0.8\nrho = 2.0\nmass = 50.0\n",
    )
    .unwrap();
    let (s, d) = (p(&dir, "s.txt"), p(&dir, "d.json"));
    ok(&["synth", "-t", &truth, "-o", &s, "--seed", "3"]);
    let out = ok(&["detect", "-s", &s, "-o", &d]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("1 bodies"));
}

#[test]
fn contours_from_forward_grid() {
    let dir = TempDir::new().unwrap();
    let (g, c) = (p(&dir, "g.txt"), p(&dir, "c.txt"));
    ok(&["forward", "-t", data("example1.toml").to_str().unwrap(), "-o", &g]);
    ok(&["contours", "-g", &g, "--levels", "10,20", "-o", &c]);
    let text = std::fs::read_to_string(&c).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# gravinv-contours v1"));
    assert_eq!(lines.next(), Some("level_mgal,polyline_id,closed,x_km,y_km"));
    assert!(lines.all(|l| l.starts_with("10,") || l.starts_with("20,")));
}
