use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wprox"));
    c.env("WPROX_LOG", "warn");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn wprox(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_functional_at_reference_has_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zero");
    let o = wprox(&["run", "--config", s(&config("zero_at_reference.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    for line in text.lines().skip(1) {
        let gap: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(gap.abs() <= 1e-12);
    }
}

#[test]
fn unknown_key_exits_1_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(config("a1_proximal_point.toml")).unwrap();
    fs::write(&cfg, text.replace("[initial]", "[initial]\ncolour = \"red\"")).unwrap();
    let out = dir.path().join("out");
    let o = wprox(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    assert!(!out.exists());
}

#[test]
fn run_verify_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a1");
    let o = wprox(&["run", "--config", s(&config("a1_proximal_point.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let summary = json(&out.join("summary.json"));
    let a = &summary["assessment"];
    assert_eq!(a["rate_violations"], 0);
    assert_eq!(a["sandwich_violations"], 0);
    assert!(a["fitted_rate"].as_f64().unwrap() < a["kappa_inv"].as_f64().unwrap());
    assert_eq!(summary["config"]["scheme"]["tau"], 0.1);

    assert_eq!(code(&wprox(&["verify", "--out", s(&out)])), 0);
    assert_eq!(json(&out.join("verify.json"))["passed"], true);

    let metrics = out.join("metrics.csv");
    let text = fs::read_to_string(&metrics).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut f: Vec<String> = lines[25].split(',').map(String::from).collect();
    let prev: f64 = lines[24].split(',').nth(2).unwrap().parse().unwrap();
    f[2] = format!("{:.16e}", 1.2 * prev);
    lines[25] = f.join(",");
    fs::write(&metrics, lines.join("\n") + "\n").unwrap();
    let o = wprox(&["verify", "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("monotone_gap"));
    let v = json(&out.join("verify.json"));
    assert_eq!(v["passed"], false);
    assert!(v["failed"].as_array().unwrap().iter().any(|x| x == "monotone_gap"));
}

#[test]
fn demo_verification_is_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    assert_eq!(code(&wprox(&["run", "--config", s(&config("explicit_euler_demo.toml")), "--out", s(&out)])), 0);
    let o = wprox(&["verify", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no convergence theory"));
    let v = json(&out.join("verify.json"));
    let checks = v["assessment"]["checks"].as_array().unwrap();
    for name in ["rate", "sandwich"] {
        let c = checks.iter().find(|c| c["name"] == name).unwrap();
        assert_eq!(c["status"], "not_applicable");
    }
}

#[test]
fn demo_requires_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("demo.toml");
    let text = fs::read_to_string(config("explicit_euler_demo.toml")).unwrap();
    fs::write(&cfg, text.replace("allow_demo = true", "")).unwrap();
    let o = wprox(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_artifacts_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&wprox(&["verify", "--out", s(dir.path())])), 1);
}

#[test]
fn metrics_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for w in ["1", "4"] {
        let out = dir.path().join(w);
        let cfg = config("a2_proximal_gradient.toml");
        let o = wprox(&["run", "--config", s(&cfg), "--out", s(&out), "--workers", w, "--seed", "9"]);
        assert_eq!(code(&o), 0);
        texts.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn sweep_over_tau() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let cfg = config("a1_proximal_point.toml");
    let o = wprox(&["sweep", "--config", s(&cfg), "--out", s(&out), "--param", "tau", "--values", "0.2,0.1,0.05"]);
    assert_eq!(code(&o), 0);
    let report = json(&out.join("sweep.json"));
    let runs = report["runs"].as_array().unwrap();
    let values: Vec<f64> = runs.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert_eq!(values, [0.2, 0.1, 0.05]);
    let rates: Vec<f64> = runs.iter().map(|r| r["fitted_rate"].as_f64().unwrap()).collect();
    let kinv: Vec<f64> = runs.iter().map(|r| r["kappa_inv"].as_f64().unwrap()).collect();
    assert!(rates[0] < rates[1] && rates[1] < rates[2], "{rates:?}");
    assert!(kinv[0] < kinv[1] && kinv[1] < kinv[2]);

    // one value reproduces `run`
    let single = dir.path().join("single");
    let o = wprox(&["sweep", "--config", s(&cfg), "--out", s(&single), "--param", "tau", "--values", "0.1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(single.join("tau=0.1/metrics.csv")).unwrap(),
        fs::read(out.join("tau=0.1/metrics.csv")).unwrap()
    );
    let run_dir = dir.path().join("run");
    assert_eq!(code(&wprox(&["run", "--config", s(&cfg), "--out", s(&run_dir)])), 0);
    assert_eq!(
        fs::read(run_dir.join("metrics.csv")).unwrap(),
        fs::read(single.join("tau=0.1/metrics.csv")).unwrap()
    );
}

#[test]
fn sweep_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("a1_proximal_point.toml");
    let out = dir.path().join("o");
    assert_eq!(code(&wprox(&["sweep", "--config", s(&cfg), "--out", s(&out), "--param", "tau", "--values", ""])), 1);
    assert_eq!(code(&wprox(&["sweep", "--config", s(&cfg), "--out", s(&out), "--param", "alpha", "--values", "1"])), 1);
    assert_eq!(code(&wprox(&["sweep", "--config", s(&cfg), "--out", s(&out)])), 1);
}

#[test]
fn oracle_check_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = wprox(&["oracle-check", "--instances", "4", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("oracle.json"));
    assert_eq!(r["cross_validation"]["newton_failures"], 0);
    assert_eq!(r["cross_validation"]["instances"].as_array().unwrap().len(), 4);
    assert_eq!(r["gaussian"]["passed"], true);
}
