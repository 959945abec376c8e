//! End-to-end tests of the `ortho` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn ortho(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ortho"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const MEAN_CONFIG: &str = r#"
[moments]
models = ["mean"]
[learners.fast]
kind = "kernel"
[data]
y = "y"
"#;

#[test]
fn estimate_mean_on_three_rows() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.toml", MEAN_CONFIG);
    write(dir.path(), "d.csv", "y\n1\n2\n3\n");
    let o = ortho(
        &["estimate", "--data", "d.csv", "--config", "cfg.toml", "--out", "s.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(s["theta_hat"][0].as_f64().unwrap(), 2.0);
    // plug-in variance 2/3 over n = 3
    let se = s["std_errors"][0].as_f64().unwrap();
    assert!((se - (2.0f64 / 9.0).sqrt()).abs() < 1e-12, "{se}");
    assert_eq!(s["n_main"].as_u64().unwrap(), 3);
    assert!(s["newton"]["converged"].as_bool().unwrap());
}

#[test]
fn estimate_reports_bad_cell_row() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.toml", MEAN_CONFIG);
    let mut csv = String::from("y\n");
    for i in 1..=9 {
        csv.push_str(if i == 7 { "seven\n" } else { "1.5\n" });
    }
    write(dir.path(), "d.csv", &csv);
    let o = ortho(&["estimate", "--data", "d.csv", "--config", "cfg.toml"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 7"), "{}", stderr(&o));
}

const PLR_CONFIG: &str = r#"
[moments]
models = ["plr"]
[learners.fast]
kind = "kernel"
[data]
y = "y"
w = "w"
x = ["x"]
"#;

#[test]
fn estimate_constant_treatment_is_an_estimation_failure() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.toml", PLR_CONFIG);
    let mut csv = String::from("y,w,x\n");
    for i in 0..40 {
        csv.push_str(&format!("{},{},{}\n", i as f64 * 0.1, 2.0, (i as f64 * 0.37).sin()));
    }
    write(dir.path(), "d.csv", &csv);
    let o = ortho(&["estimate", "--data", "d.csv", "--config", "cfg.toml"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("singular"), "{}", stderr(&o));
}

#[test]
fn estimate_plr_recovers_slope() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.toml", PLR_CONFIG);
    let mut csv = String::from("x,w,y,unused\n");
    // deterministic design: w = x² + wiggle, y = 1.5 w + sin(3x) + wiggle
    for i in 0..2000 {
        let x = -1.0 + 2.0 * i as f64 / 1999.0;
        let v = ((i * 7919) % 1000) as f64 / 1000.0 - 0.5;
        let e = ((i * 104_729) % 997) as f64 / 997.0 - 0.5;
        let w = x * x + v;
        csv.push_str(&format!("{x},{w},{},0\n", 1.5 * w + (3.0 * x).sin() + e));
    }
    write(dir.path(), "d.csv", &csv);
    let o = ortho(
        &["estimate", "--data", "d.csv", "--config", "cfg.toml", "--out", "s.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    let theta = s["theta_hat"][0].as_f64().unwrap();
    assert!((theta - 1.5).abs() < 0.1, "{theta}");
    assert_eq!(s["provenance"]["n_train"].as_u64().unwrap(), 1000);
}

#[test]
fn estimate_input_errors() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "cfg.toml", PLR_CONFIG);
    write(dir.path(), "d.csv", "y,x\n1,2\n3,4\n");
    let o = ortho(&["estimate", "--data", "d.csv", "--config", "cfg.toml"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("'w'"), "{}", stderr(&o));

    write(dir.path(), "nodata.toml", "[moments]\nmodels = [\"plr\"]\n");
    let o = ortho(&["estimate", "--data", "d.csv", "--config", "nodata.toml"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("[data]"));

    let o = ortho(&["estimate", "--data", "missing.csv", "--config", "cfg.toml"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn smoke_simulation_is_fast_and_worker_independent() {
    let dir = TempDir::new().unwrap();
    let cfg = repo_file("configs/smoke.toml");
    let cfg = cfg.to_str().unwrap();
    let t = Instant::now();
    let a = ortho(&["simulate", "--config", cfg, "--workers", "1", "--out-dir", "a"], dir.path());
    assert!(t.elapsed() < Duration::from_secs(5));
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = ortho(&["simulate", "--config", cfg, "--workers", "4", "--out-dir", "b"], dir.path());
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    for f in ["results.csv", "aggregate.csv", "report.md"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between worker counts");
    }
    let report = fs::read_to_string(dir.path().join("a/report.md")).unwrap();
    assert!(report.contains("Verdicts:"));
}

#[test]
fn report_reproduces_simulate_aggregates() {
    let dir = TempDir::new().unwrap();
    let cfg = repo_file("configs/smoke.toml");
    let o = ortho(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = ortho(
        &["report", "--results", "run/results.csv", "--out", "again.md", "--aggregate", "again.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("run/aggregate.csv")).unwrap(),
        fs::read(dir.path().join("again.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("run/report.md")).unwrap(),
        fs::read(dir.path().join("again.md")).unwrap()
    );
}

#[test]
fn report_schema_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = repo_file("configs/smoke.toml");
    let o = ortho(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", "run"], dir.path());
    assert_eq!(code(&o), 0);
    let full = fs::read_to_string(dir.path().join("run/results.csv")).unwrap();
    let header: Vec<&str> = full.lines().next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| header[i] != "covered").collect();
    let truncated: String = full
        .lines()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(",") + "\n"
        })
        .collect();
    write(dir.path(), "trunc.csv", &truncated);
    let o = ortho(&["report", "--results", "trunc.csv", "--out", "r.md"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("covered"), "{}", stderr(&o));

    write(dir.path(), "empty.csv", "");
    let o = ortho(&["report", "--results", "empty.csv", "--out", "r.md"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no rows"), "{}", stderr(&o));
}

#[test]
fn check_passes_on_smoke_config() {
    let dir = TempDir::new().unwrap();
    let cfg = repo_file("configs/smoke.toml");
    let o = ortho(&["check", "--config", cfg.to_str().unwrap()], dir.path());
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.contains("[PASS] plr: conditional orthogonality (expected pass)"), "{out}");
    assert!(out.contains("[FAIL] plr-naive: conditional orthogonality (expected fail)"), "{out}");
    assert!(out.contains("first-stage rate of 'oracle' (expected pass)"));
    assert!(out.contains("overall: PASS"));
}

#[test]
fn check_flags_unexpected_outcomes() {
    let dir = TempDir::new().unwrap();
    // the constant learner is a negative control: its failure is the expected outcome
    write(
        dir.path(),
        "cfg.toml",
        r#"
        [moments]
        models = ["plr"]
        [learners.zero]
        kind = "constant"
        value = 0.0
        [check]
        draws_per_point = 5000
        rate_grid = [100, 400, 1600]
        rate_replications = 10
        "#,
    );
    let o = ortho(&["check", "--config", "cfg.toml"], dir.path());
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("[FAIL] plr: first-stage rate of 'zero' (expected fail)"), "{out}");
    assert_eq!(code(&o), 0, "{out}");
}

#[test]
fn every_invalid_fixture_is_rejected() {
    let dir = TempDir::new().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/invalid");
    let expected = [
        ("unknown-key.toml", "surprise"),
        ("decreasing-grid.toml", "increasing"),
        ("unknown-dgp.toml", "nonexistent"),
        ("unknown-moment.toml", "iv"),
        ("bad-learner.toml", "k >= 1"),
        ("bad-levels.toml", "alpha"),
        ("broken-syntax.toml", "TOML"),
    ];
    let mut seen = 0;
    for entry in fs::read_dir(&fixtures).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let needle = expected
            .iter()
            .find(|(f, _)| *f == name)
            .unwrap_or_else(|| panic!("no expectation for fixture {name}"))
            .1;
        for cmd in ["check", "simulate"] {
            let o = ortho(&[cmd, "--config", path.to_str().unwrap()], dir.path());
            assert_eq!(code(&o), 1, "{cmd} {name}");
            assert!(stderr(&o).contains(needle), "{cmd} {name}: {}", stderr(&o));
        }
        seen += 1;
    }
    assert_eq!(seen, expected.len());
}

#[test]
fn bad_levels_lists_every_problem() {
    let dir = TempDir::new().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/invalid/bad-levels.toml");
    let o = ortho(&["simulate", "--config", path.to_str().unwrap()], dir.path());
    let err = stderr(&o);
    assert!(err.contains("alpha") && err.contains("aux_fraction"), "{err}");
}
