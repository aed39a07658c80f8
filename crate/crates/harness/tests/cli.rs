use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cbl_harness::manifest::Manifest;

fn cbl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbl"))
        .args(args)
        .env_remove("CBL_OUT_ROOT")
        .output()
        .expect("run cbl")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_GREENS: &str = "{\n  \"n_y\": 32,\n  \"k\": [1, 3],\n  \"samples\": 10\n}\n";

#[test]
fn odd_grid_exits_2_with_line_anchor() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", "{\n  \"k\": [1],\n  \"n_y\": 31\n}\n");
    let o = cbl(&["verify-greens", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("c.json:3:3: n_y = 31"), "{err}");
    assert!(!tmp.path().join("o").exists(), "validation must precede any output");
}

#[test]
fn malformed_and_unknown_keys_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a.json", "{\n  \"n_y\": 32,\n  \"n_y_typo\": 1\n}\n");
    let o = cbl(&["verify-greens", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a.json:3:"));
    let cfg = write(tmp.path(), "b.json", "{\"n_y\": 32,");
    assert_eq!(cbl(&["verify-greens", "--config", &cfg]).status.code(), Some(2));
    let cfg = write(tmp.path(), "s.json", "{\"amplitudes\": []}");
    let o = cbl(&["threshold-sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("amplitude grid is empty"));
    assert_eq!(cbl(&["verify-greens", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(cbl(&["verify-greens"]).status.code(), Some(2));
}

#[test]
fn pass_fail_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "g.json", SMALL_GREENS);
    let out = tmp.path().join("pass");
    let o = cbl(&["verify-greens", "--config", &cfg, "--out", out.to_str().unwrap(), "--plot", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::read(&out).unwrap();
    assert!(m.artifacts.iter().any(|a| a.path == "greens.csv"));
    let svg = m.artifacts.iter().find(|a| a.path.ends_with(".svg")).unwrap().clone();

    let r = cbl(&["report", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("PASS Poisson residual k=1 [greens-poisson-inverse]"), "{text}");
    assert!(text.contains("inverts the mode Laplacian"));
    let again = fs::read(out.join(&svg.path)).unwrap();
    assert_eq!(cbl_harness::manifest::sha256_hex(&again), svg.sha256, "report must regenerate identical SVGs");

    let cfg = write(
        tmp.path(),
        "f.json",
        "{\"n_y\": 32, \"k\": [1], \"samples\": 5, \"tolerances\": {\"greens\": 1e-300}}",
    );
    let bad = tmp.path().join("fail");
    let o = cbl(&["verify-greens", "--config", &cfg, "--out", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let r = cbl(&["report", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stdout).contains("FAIL Poisson residual"));

    fs::write(out.join("greens.csv"), b"tampered").unwrap();
    assert_eq!(cbl(&["report", out.to_str().unwrap()]).status.code(), Some(2));
    fs::write(out.join("manifest.json"), b"{\"format\": 1").unwrap();
    assert_eq!(cbl(&["report", out.to_str().unwrap()]).status.code(), Some(2));
    fs::remove_file(out.join("manifest.json")).unwrap();
    assert_eq!(cbl(&["report", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn identical_inputs_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "g.json", SMALL_GREENS);
    let mut csvs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "3")] {
        let out = tmp.path().join(name);
        let o = cbl(&["verify-greens", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", jobs, "--seed", "7"]);
        assert_eq!(o.status.code(), Some(0));
        csvs.push(fs::read(out.join("greens.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let out = tmp.path().join("c");
    cbl(&["verify-greens", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "8"]);
    assert_ne!(fs::read(out.join("greens.csv")).unwrap(), csvs[0]);
}

#[test]
fn non_finite_run_exits_3_with_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "n.json",
        "{\"n_y\": 32, \"k_max\": 4, \"mu\": [1e-2], \"nu\": [1e-2], \"eps\": [1e200, 1e200], \"horizon\": 0.2, \"consistency\": false}",
    );
    let out = tmp.path().join("nan");
    let o = cbl(&["nonlinear-run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::read(&out).unwrap();
    assert!(m.error.is_some());
    assert_eq!(cbl(&["report", out.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn out_root_env_names_the_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "g.json", SMALL_GREENS);
    let o = Command::new(env!("CARGO_BIN_EXE_cbl"))
        .args(["verify-greens", "--config", &cfg])
        .env("CBL_OUT_ROOT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let dir = String::from_utf8_lossy(&o.stdout).trim().to_string();
    assert!(dir.contains("root/verify-greens-"), "{dir}");
    assert!(Path::new(&dir).join("manifest.json").exists());
}
