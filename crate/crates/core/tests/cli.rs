use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fk_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fk-lab")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn results(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("results.json")).unwrap()).unwrap()
}

#[test]
fn eigen_prints_the_perron_value() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("two_state.json");
    let o = fk_lab(&["eigen", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("λ=1.5"));
    let r = results(out.path());
    assert_eq!(r["command"], "eigen");
    assert!((r["results"]["lambda"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    let csv = std::fs::read_to_string(out.path().join("eigen.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
}

#[test]
fn pressure_of_zero_potential_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"kind": "chain", "kernel": {"points": [[0.0], [1.0], [2.0]],
            "P": [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]], "A": [0, 1, 2]}},
            "seed": 3, "horizon": 30, "particles": {"particles": 1000}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = fk_lab(&["pressure", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = results(&out);
    let q = r["results"]["estimate"]["q"].as_f64().unwrap();
    let se = r["results"]["estimate"]["stderr"].as_f64().unwrap();
    assert!(q.abs() <= 3.0 * se + 1e-9, "Q̂ = {q} ± {se}");
}

#[test]
fn usage_and_precondition_errors_exit_with_two() {
    let out = tempfile::tempdir().unwrap();
    let o = fk_lab(&["eigen", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fk_lab(&["eigen", "--config", "/nonexistent/x.json", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    // a non-stochastic kernel has no Markov chain to simulate
    let cfg = configs().join("two_state.json");
    let o = fk_lab(&["pressure", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("chain3.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(fk_lab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"])
        .status
        .success());
    let m = a.join("manifest.json");
    assert!(fk_lab(&["simulate", "--config", m.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "2"])
        .status
        .success());
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("chain3.json");
    let out = dir.path().join("o");
    assert!(fk_lab(&["eigen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "42"])
        .status
        .success());
    assert_eq!(results(&out)["seed"], 42);
}
