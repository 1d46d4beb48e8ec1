use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poafd"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("poafd-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_config_exits_2() {
    let out = bin()
        .args(["decompose", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/cfg.json"), "stderr: {stderr}");
}

#[test]
fn invalid_scope_exits_2() {
    let out = bin()
        .args(["verify", "--scope", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_scope_writes_empty_report() {
    let dir = scratch("empty-scope");
    let report = dir.join("report.csv");
    let out = bin()
        .args(["verify", "--scope", "--out"])
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&report).unwrap();
    let data_rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("suite,"))
        .count();
    assert_eq!(data_rows, 0, "report: {text}");
}

#[test]
fn single_atom_decompose_round_trip() {
    let dir = scratch("single-atom");
    let config = dir.join("cfg.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "schema_version": 1,
  "family": {{ "kind": "poisson", "d": 1 }},
  "signal": {{ "terms": [
    {{ "coefficient": 2.5, "param": {{ "HalfSpace": {{ "t": 1.3, "x": [0.7] }} }} }}
  ] }},
  "iterations": 1,
  "output": {:?}
}}"#,
            dir.join("out")
        ),
    )
    .unwrap();
    let out = bin().arg("decompose").arg("--config").arg(&config).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let errors = fs::read_to_string(dir.join("out/errors.csv")).unwrap();
    let rows: Vec<&str> = errors
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("iteration,"))
        .collect();
    assert_eq!(rows.len(), 1, "errors.csv: {errors}");
    let rel: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert!(rel <= 1e-5, "relative error {rel}");
}

#[test]
fn experiment_rejects_unknown_name() {
    let out = bin().args(["experiment", "example9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_single_scope_deterministic() {
    let dir = scratch("verify-det");
    let (a, b) = (dir.join("a.csv"), dir.join("b.csv"));
    for path in [&a, &b] {
        let out = bin()
            .args(["verify", "--scope", "semigroup", "--seed", "11", "--out"])
            .arg(path)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
