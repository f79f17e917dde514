use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlllab::artifact::{sha256_hex, Artifact};
use nlllab::finite::verify_equilibrium;
use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn nlllab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlllab"))
        .args(args)
        .env_remove("NLLLAB_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = nlllab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn solve_n_writes_reports_and_verifies() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("solve");
    let cfg = configs().join("solve_n_two_state.toml");
    run_ok(&["solve-n", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let m = manifest(&out);
    let reports = m["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r["contractive"] == true));
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert!(listed.contains(&"solution.nlla") && listed.contains(&"values.csv"));
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }

    let artifact = out.join("solution.nlla");
    let vout = tmp.path().join("verify");
    let stdout = run_ok(&["verify", "--artifact", artifact.to_str().unwrap(), "--out", vout.to_str().unwrap()]);
    let printed: f64 = stdout.trim().strip_prefix("gap=").unwrap().parse().unwrap();
    let a = Artifact::read(&artifact).unwrap();
    let direct = verify_equilibrium(&a.spec().unwrap(), a.grid().unwrap(), &a.lattice().unwrap(), &a.policy).unwrap();
    assert!(printed <= 1e-8);
    assert!((printed - direct).abs() <= 1e-12);
}

#[test]
fn zero_horizon_values_are_terminal_costs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[game]
d = 2
sigma2 = 0.1
cost = { kind = "quadratic", params = { term_crowd = 1.0, term_offset = [0.0, 0.2] } }

[grid]
h = 0.1
k = 0

[population]
n = 3
"#,
    );
    let out = tmp.path().join("o");
    run_ok(&["solve-n", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("values.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..5], &["t", "x", "c0", "c1", "v"]);
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let x: usize = cells[1].parse().unwrap();
        let c: Vec<f64> = cells[2..4].iter().map(|s| s.parse().unwrap()).collect();
        let v: f64 = cells[4].parse().unwrap();
        let g = (1.0 - c[x] / 3.0) + [0.0, 0.2][x];
        assert!((v - g).abs() <= 1e-15, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 2 * 4);
}

#[test]
fn oversized_population_is_a_size_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[game]
d = 6
sigma2 = 0.1
cost = { kind = "quadratic" }

[grid]
h = 0.01
k = 1

[population]
n = 200
"#,
    );
    let out = nlllab(&["solve-n", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C(205, 5)"));
}

#[test]
fn bad_configs_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "kind = \"solve-n\"\nsed = 3\n");
    let out = nlllab(&["solve-n", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let two_state = configs().join("solve_n_two_state.toml");
    let out = nlllab(&["solve-mf", "--config", two_state.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = nlllab(&["solve-n"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_artifacts_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("solve");
    let cfg = configs().join("solve_n_two_state.toml");
    run_ok(&["solve-n", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let path = out.join("solution.nlla");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    let res = nlllab(&["verify", "--artifact", path.to_str().unwrap(), "--out", tmp.path().join("v").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("integrity"));
}

#[test]
fn empty_scan_range_has_only_a_header() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("scan");
    run_ok(&[
        "scan-onestep", "--sigma2", "0.05", "--h-min", "1", "--h-max", "2", "--steps", "0",
        "--out", out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("scan.csv")).unwrap();
    assert_eq!(csv, "h,count,roots,max_residual\n");
}

#[test]
fn scan_reports_the_multiplicity_window() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("scan");
    let stdout = run_ok(&[
        "scan-onestep", "--sigma2", "0.05", "--h-min", "0.5", "--h-max", "5", "--steps", "2",
        "--out", out.to_str().unwrap(), "--format", "json",
    ]);
    assert!(stdout.contains("h_low=1.0592363464"));
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(out.join("scan.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["count"], 1);
    assert_eq!(rows[1]["count"], 5);
}

#[test]
fn worker_count_does_not_change_artifacts() {
    let tmp = TempDir::new().unwrap();
    for cfg in ["solve_n_torus.toml", "solve_mf_onestep.toml"] {
        let path = configs().join(cfg);
        let kind = if cfg.starts_with("solve_n") { "solve-n" } else { "solve-mf" };
        let mut hashes = Vec::new();
        for workers in ["1", "8"] {
            let out = tmp.path().join(format!("{cfg}-{workers}"));
            run_ok(&[kind, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
            let m = manifest(&out);
            let arts: Vec<(String, String)> = m["artifacts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|a| (a["path"].as_str().unwrap().to_string(), a["sha256"].as_str().unwrap().to_string()))
                .collect();
            hashes.push(arts);
        }
        assert_eq!(hashes[0], hashes[1], "{cfg}");
    }
}

#[test]
fn cache_directory_reuses_solutions() {
    let tmp = TempDir::new().unwrap();
    let cache = tmp.path().join("cache");
    let cfg = configs().join("solve_n_two_state.toml");
    let mut hashes = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("o{i}"));
        let res = Command::new(env!("CARGO_BIN_EXE_nlllab"))
            .args(["solve-n", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("NLLLAB_CACHE_DIR", &cache)
            .output()
            .unwrap();
        assert!(res.status.success());
        hashes.push(sha256_hex(&std::fs::read(out.join("solution.nlla")).unwrap()));
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
}
