use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn gbc(config: &Path, output: Option<&Path>) -> std::process::Output {
    gbc_with_threads(config, output, None)
}

fn gbc_with_threads(config: &Path, output: Option<&Path>, threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gbc"));
    if let Some(t) = threads {
        cmd.env("GBC_THREADS", t);
    }
    cmd.arg("run").arg("--config").arg(config).arg("--quiet");
    if let Some(o) = output {
        cmd.arg("--output").arg(o);
    }
    cmd.output().expect("gbc runs")
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing_k = write(dir.path(), "a.json", r#"{"task": "verify-gbc", "manifold": "sphere2"}"#);
    let out = gbc(&missing_k, None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing field `k`"));

    let unknown = write(dir.path(), "b.json", r#"{"task": "verify-gbc", "manifold": "klein_bottle", "k": 1}"#);
    assert_eq!(gbc(&unknown, None).status.code(), Some(2));
    assert_eq!(gbc_with_threads(&unknown, None, Some("zero")).status.code(), Some(2));

    // a deliberately wrong expectation fails the assertion, not the run
    let wrong = write(
        dir.path(),
        "c.json",
        r#"{"task": "verify-gbc", "manifold": "sphere2", "k": 1, "resolution": [8, 16], "expected": 3.0}"#,
    );
    assert_eq!(gbc(&wrong, Some(&dir.path().join("c.out.json"))).status.code(), Some(1));

    // a pole lies outside the chart: the config asked for it
    let pole = write(dir.path(), "d.json", r#"{"task": "eval", "manifold": "sphere2", "points": [[0.0, 1.0]]}"#);
    assert_eq!(gbc(&pole, None).status.code(), Some(2));

    // an amplitude far outside the family range makes the metric indefinite here
    let indefinite = write(
        dir.path(),
        "f.json",
        r#"{"task": "eval", "manifold": {"name": "perturbed_torus(2)", "params": {"a": 5.0}}, "points": [[1.0, 1.0]]}"#,
    );
    let out = gbc(&indefinite, None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("signature"));

    let ok = write(dir.path(), "e.json", r#"{"task": "verify-gbc", "manifold": "sphere2", "k": 1}"#);
    let unwritable = dir.path().join("no/such/dir/out.json");
    assert_eq!(gbc(&ok, Some(&unwritable)).status.code(), Some(3));
}

#[test]
fn report_round_trips_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "gbc.json",
        r#"{"name": "s2", "checks": [
            {"task": "verify-gbc", "manifold": "sphere2", "k": 1, "resolution": [16, 32]},
            {"task": "reduce", "manifold": "sphere2", "k": 1, "samples": 5}
        ]}"#,
    );
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(gbc_with_threads(&cfg, Some(&a), Some("1")).status.code(), Some(0));
    // the reduction order is fixed, so the worker count cannot change any digit
    assert_eq!(gbc_with_threads(&cfg, Some(&b), Some("3")).status.code(), Some(0));
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timestamp_unix");
        v.as_object_mut().unwrap().remove("wall_time_s");
        for c in v["checks"].as_array_mut().unwrap() {
            c.as_object_mut().unwrap().remove("wall_time_s");
        }
        v
    };
    let va = strip(&a);
    assert_eq!(va, strip(&b));
    assert_eq!(va["schema_version"], "gbc-report/1");
    assert_eq!(va["library_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(va["convention_ledger_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(va["checks"][0]["expected"].as_f64(), Some(2.0));
    let action = va["checks"][0]["values"]["action"].as_f64().unwrap();
    assert!((action - 2.0).abs() < 1e-6);
    // the config is echoed back
    assert_eq!(va["checks"][1]["config"]["samples"], 5);
}

#[test]
fn sweep_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.json",
        r#"{"task": "sweep", "manifold": "conformal_sphere2", "k": 1, "resolution": [16, 32], "format": "csv",
            "family": [{"t": 0.0}, {"t": 0.1}, {"t": 0.2}, {"t": 0.3}]}"#,
    );
    let out = dir.path().join("sweep.csv");
    assert_eq!(gbc(&cfg, Some(&out)).status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "action_value"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let v: f64 = r[1].parse().unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }
    let js: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.report.json")).unwrap()).unwrap();
    assert_eq!(js["checks"][0]["values"]["included"], 4);
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for dir in ["acceptance", "examples"] {
        for entry in std::fs::read_dir(root.join(dir)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                gbc_cli::config::load(&path).unwrap_or_else(|e| panic!("{e}"));
                seen += 1;
            }
        }
    }
    assert!(seen >= 10);
}

#[test]
fn identity_example_passes() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/examples/identity-dim4.json");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(gbc(&cfg, Some(&out)).status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["checks"][0]["values"]["max_norm_over_scale"].as_f64().unwrap() < 1e-10);
}
