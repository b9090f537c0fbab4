use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kaclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kaclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, kind: &str, extra: &str) -> String {
    let path = dir.join(format!("{kind}.json"));
    let text = format!(r#"{{"kind":"{kind}","n":32,"t_final":0.01,"snapshots":5{extra}}}"#);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn noise_check_writes_only_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = kaclab(&["noise-check", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["noise_checks.csv"]);
    let text = fs::read_to_string(out.join("noise_checks.csv")).unwrap();
    assert!(text.starts_with("# experiment: noise_checks"));
    assert!(text.contains("# config_hash: "));
    assert!(text.contains("# seed: 0"));
}

#[test]
fn same_seed_gives_identical_bytes_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        "converge_two_step",
        r#","replicates":2,"gammas":[0.5,0.25],"deltas":[0.2]"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, workers) in [(&a, "1"), (&b, "2")] {
        let o = kaclab(&[
            "converge",
            "--config",
            &cfg,
            "--seed",
            "11",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = fs::read(a.join("converge_two_step.csv")).unwrap();
    let fb = fs::read(b.join("converge_two_step.csv")).unwrap();
    assert_eq!(fa, fb);
    assert!(String::from_utf8(fa).unwrap().contains("# seed: 11"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"kind":"entropy_report","unknown_key":1}"#).unwrap();
    let o = kaclab(&[
        "entropy",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = small_config(dir.path(), "entropy_report", "");
    let o = kaclab(&["converge", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "kind mismatch");

    let cfg = small_config(dir.path(), "remainder_scaling", r#","gammas":[0.5,0.25]"#);
    let o = kaclab(&["remainders", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "two gammas cannot fit a slope");

    let o = kaclab(&[
        "rate",
        "--traj",
        dir.path().join("missing.traj").to_str().unwrap(),
        "--model",
        "ch",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_rate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "simulate", r#","replicates":1,"epsilons":[0.0]"#);
    let out = dir.path().join("sim");
    let o = kaclab(&[
        "simulate",
        "--model",
        "ikk",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = out.join("ikk_r0.traj");
    assert!(traj.exists());
    let o = kaclab(&[
        "rate",
        "--traj",
        traj.to_str().unwrap(),
        "--model",
        "ikk",
        "--gamma",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["rate"].as_f64().unwrap() >= 0.0);
    assert!(v["residual_norm"].as_f64().unwrap().is_finite());
}
