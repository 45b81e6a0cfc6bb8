use std::fs;
use std::path::Path;
use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lab"))
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn limits_prints_the_pooled_value() {
    let out = lab().args(["limits", "--model", "pooled", "--snr", "2", "--pi", "0.5"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.158_655_253_931_457).abs() < 1e-12);
    assert_eq!(v["regime"], "snr_finite");
}

#[test]
fn usage_errors_exit_with_two() {
    let out = lab().args(["limits", "--model", "pooled"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"name": "two_step_cosine", "grid": {"alpha0": [1]}, "trials": 0}"#);
    let out = lab().args(["run", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));
}

#[test]
fn capacity_command_reads_a_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"l": 2, "r": 1, "theta": 2, "pi": 0.3, "d": 10}"#);
    let out = lab().args(["capacity", "--model", "pooled", "--config", &cfg]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["alpha_star"].as_f64().unwrap() - 3.0433).abs() < 1e-3);
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"name": "two_step_cosine",
            "params": {"l": 4, "r": 1, "theta": 3, "pi": 0.4, "d": 60, "eta": 0.5},
            "grid": {"alpha0": [2, 4]}, "trials": 4, "seed": 11}"#,
    );
    let mut csvs = Vec::new();
    for (k, sub) in [("1", "a"), ("3", "b")] {
        let out_dir = dir.path().join(sub);
        let out = lab()
            .args(["run", &cfg, "--workers", k, "--out", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(matches!(out.status.code(), Some(0) | Some(1)), "{out:?}");
        csvs.push(fs::read(out_dir.join("two_step_cosine_s_q.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert!(text.lines().next().unwrap().starts_with("panel,model,l,r,theta"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn compare_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "alpha,theory,empirical_mean,empirical_stderr\n1,0.5,0.5,0.01\n2,0.4,0.41,0.01\n");
    let out = lab().args(["compare", &a, &a]).output().unwrap();
    assert!(out.status.success());
    let b = write(dir.path(), "b.csv", "alpha,theory,empirical_mean,empirical_stderr\n1,0.5,0.6,0.01\n2,0.4,0.51,0.01\n");
    let out = lab().args(["compare", &a, &b]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
