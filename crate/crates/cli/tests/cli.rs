use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathwise"));
    c.env_remove("PATHWISE_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMOOTH: &str = r#"
[partition]
type = "dyadic"
T = 1.0
max_level = 12

[path.generator]
kind = "smooth"
function = "power"
coefficient = 1.0
exponent = 2.0
"#;

#[test]
fn missing_path_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[partition]\ntype = \"dyadic\"\nT = 1.0\nmax_level = 4\n\n[path]\nfile = \"nowhere.csv\"\n",
    );
    let out = run(&["qv"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn missing_config_and_unknown_fields_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("qv").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(dir.path(), &format!("bogus = 1\n{SMOOTH}"));
    assert_eq!(run(&["qv"], &cfg, dir.path()).status.code(), Some(2));
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn smooth_quadratic_variation_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOOTH);
    let out = run(&["qv"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("qv_convergence.csv"));
    let a: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(a.windows(2).all(|w| w[1] < w[0]));
    assert!(*a.last().unwrap() < 1e-3);
}

#[test]
fn walk_quadratic_variation_is_sigma_squared_but_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["qv"], &configs().join("qv_walk.toml"), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not converged"));
    let rows = csv_rows(&dir.path().join("qv_convergence.csv"));
    assert_eq!(rows.last().unwrap()[1], "1");
}

#[test]
fn identity_gain_is_the_increment() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["integrate"], &configs().join("integrate_identity.toml"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = csv_rows(&dir.path().join("gain.csv"));
    let path_dir = tempfile::tempdir().unwrap();
    run(&["qv"], &configs().join("integrate_identity.toml"), path_dir.path());
    let qv = csv_rows(&path_dir.path().join("qv_curve.csv"));
    assert_eq!(curve.len(), qv.len());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["results"]["integral"]["converged"], true);
    let sweep = csv_rows(&dir.path().join("ito_sweep.csv"));
    for row in sweep {
        let residual: f64 = row[1].parse().unwrap();
        let metric: f64 = row[5].parse().unwrap();
        assert!(residual < 10.0 * metric);
    }
}

#[test]
fn p_below_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMOOTH}\n[functional]\nname = \"identity\"\n\n[integrate]\np_variation = [0.5]\n"),
    );
    let out = run(&["integrate"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p >= 1"));
}

#[test]
fn pricing_equation_violation_sets_the_warning_column() {
    let dir = tempfile::tempdir().unwrap();
    let body = std::fs::read_to_string(configs().join("hedge_replication.toml"))
        .unwrap()
        .replace("paths = 16", "paths = 2")
        .replace("max_level = 14", "max_level = 10");
    let body = body.replacen("[hedge.model]\ntype = \"local_volatility\"\nsigma = 0.2", "[hedge.model]\ntype = \"local_volatility\"\nsigma = 0.3", 1);
    let cfg = write_config(dir.path(), &body);
    let out = run(&["hedge"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    let rows = csv_rows(&dir.path().join("hedge_paths.csv"));
    assert!(rows.iter().all(|r| r.last().unwrap() == "1"));
}

#[test]
fn overrides_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let status = bin()
        .env("PATHWISE_OUT", &env_out)
        .args(["plausibility", "--level", "8", "--seed", "9", "--config"])
        .arg(configs().join("plausibility_walk.toml"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env_out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 9);
    assert_eq!(report["config"]["partition"]["max_level"], 8);
    assert_eq!(csv_rows(&env_out.join("plausibility_levels.csv")).len(), 9);
}
