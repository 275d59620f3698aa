use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use vp1d::export::{read_manifest, sha256_file};

fn small_config(extra: Value) -> Value {
    let mut cfg = json!({
        "x_count": 101,
        "v_count": 65,
        "t_count": 11,
        "lemma1_samples": 2000,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    cfg
}

fn write_config(dir: &Path, cfg: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn vp1d(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vp1d"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn trivial_run_writes_a_checked_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({ "perturbation_amplitude": 0.0 })));
    let out = dir.path().join("out");
    let o = vp1d("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("trace.json"))["iterations"], 1);

    let manifest = read_manifest(&out).unwrap();
    assert_eq!(manifest.exit_code, 0);
    assert_eq!(manifest.config["x_count"], 101);
    assert_eq!(manifest.config["tol"], 1e-10);
    assert!(manifest.files.len() > 20);
    for entry in &manifest.files {
        assert_eq!(sha256_file(&out.join(&entry.path)).unwrap(), entry.sha256, "{}", entry.path);
    }
}

#[test]
fn invalid_config_reports_every_problem() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({ "x_count": 1, "decay_exponent": 0.5, "tol": -1.0 })));
    let o = vp1d("run", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for key in ["x_count", "exponent", "tol"] {
        assert!(msg.contains(key), "{key} missing from: {msg}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_keys_and_bad_flags_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({ "x_cuont": 11 })));
    assert_eq!(vp1d("run", &cfg, &dir.path().join("out"), &[]).status.code(), Some(2));
    let cfg = write_config(dir.path(), &small_config(json!({})));
    assert_eq!(vp1d("run", &cfg, &dir.path().join("out"), &["--threads", "0"]).status.code(), Some(2));
    assert_eq!(
        vp1d("run", &dir.path().join("missing.json"), &dir.path().join("out"), &[]).status.code(),
        Some(2)
    );
}

#[test]
fn long_horizon_exits_with_non_convergence_and_keeps_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({
        "x_count": 41, "v_count": 17, "t_end": 50.0, "t_count": 21, "perturbation_amplitude": 0.9,
    });
    let cfg = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let o = vp1d("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let trace = read_json(&out.join("trace.json"));
    assert_eq!(trace["converged"], false);
    assert_eq!(trace["iterations"], 25);
    assert_eq!(read_manifest(&out).unwrap().exit_code, 3);
}

#[test]
fn verify_passes_on_trivial_and_small_runs() {
    for amplitude in [0.0, 0.05] {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), &small_config(json!({ "perturbation_amplitude": amplitude })));
        let out = dir.path().join("out");
        assert_eq!(vp1d("run", &cfg, &out, &[]).status.code(), Some(0));
        let o = vp1d("verify", &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(0), "A_g = {amplitude}: {}", stderr(&o));
        let lines = read_json(&out.join("verify").join("verify_summary.json"));
        assert!(lines.as_array().unwrap().iter().all(|l| l["pass"] == true));
        if amplitude == 0.0 {
            let l1 = read_json(&out.join("verify").join("lemma1.json"));
            assert_eq!(l1["constants"]["violations"], 0.0);
        }
        assert!(read_manifest(&out.join("verify")).is_ok());
    }
}

#[test]
fn verify_needs_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({})));
    let o = vp1d("verify", &cfg, &dir.path().join("nothing"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_catches_a_scaled_field_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({})));
    let out = dir.path().join("out");
    assert_eq!(vp1d("run", &cfg, &out, &[]).status.code(), Some(0));
    let path = out.join("field_t0005.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let mut corrupted = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        corrupted.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", cols[0], cols[1], 10.0 * cols[2]));
    }
    fs::write(&path, corrupted).unwrap();
    let o = vp1d("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("FAIL stored-field-compatibility"));
}

#[test]
fn benchmark_run_and_verify() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &json!({}));
    let out = dir.path().join("out");
    let o = vp1d("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = read_json(&out.join("trace.json"));
    let d: Vec<f64> = trace["distances"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(d.len() >= 3 && d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    let o = vp1d("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn converge_study_on_the_trivial_profile_is_exact() {
    let dir = TempDir::new().unwrap();
    let res = json!([
        { "x_count": 41, "v_count": 17, "t_count": 6 },
        { "x_count": 81, "v_count": 33, "t_count": 11 },
        { "x_count": 161, "v_count": 65, "t_count": 21 },
    ]);
    let cfg = write_config(dir.path(), &json!({ "perturbation_amplitude": 0.0, "resolutions": res }));
    let out = dir.path().join("out");
    let o = vp1d("converge-study", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("exact"));
    let rows = read_json(&out.join("study.json"));
    for row in rows.as_array().unwrap() {
        assert_eq!(row["max_difference"], 0.0);
        assert_eq!(row["exact"], true);
    }

    let two = write_config(dir.path(), &json!({ "resolutions": res.as_array().unwrap()[..2] }));
    assert_eq!(vp1d("converge-study", &two, &dir.path().join("out2"), &[]).status.code(), Some(2));
}

#[test]
fn extend_continues_or_refuses() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_config(json!({ "perturbation_amplitude": 0.0, "extend_delta": 0.25 })));
    let out = dir.path().join("out");
    let o = vp1d("extend", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("field_t0015.csv").exists());

    let cfg = write_config(dir.path(), &small_config(json!({ "extend_delta": 0.25, "norm_cap": 0.0 })));
    let out = dir.path().join("refused");
    let o = vp1d("extend", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("refused.json"))["norm_cap"], 0.0);
}
