use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tangentlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tangentlab"))
        .args(args)
        .env_remove("TANGENTLAB_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let o = tangentlab(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap()
}

#[test]
fn kernel_convergence_emits_one_row_per_width_and_sample_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("kc");
    ok(&[
        "kernel-convergence",
        "--widths",
        "64,256,1024",
        "--samples",
        "8,32",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = csv_rows(&out.join("convergence.csv"));
    assert_eq!(rows[0], "width,samples,nngp_error,ntk_error");
    assert_eq!(rows.len(), 1 + 6);
    let meta: serde_json::Value = serde_json::from_slice(&read(&out, "metadata.json")).unwrap();
    assert_eq!(meta["command"], "kernel-convergence");
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn train_compare_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "train-compare",
            "--width",
            "64",
            "--steps",
            "20",
            "--seed",
            "5",
            "--out",
            d.to_str().unwrap(),
        ]);
    }
    for f in [
        "metrics.csv",
        "outputs.csv",
        "rmse.csv",
        "config.resolved.json",
        "metadata.json",
    ] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "drift-sweep",
        "--widths",
        "32,64",
        "--steps",
        "16",
        "--seed",
        "2",
        "--out",
        a.to_str().unwrap(),
    ]);
    let cfg = a.join("config.resolved.json");
    ok(&[
        "drift-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    for f in [
        "drift.csv",
        "drift_summary.csv",
        "config.resolved.json",
        "metadata.json",
    ] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "kernel-convergence",
        "--widths",
        "32,128",
        "--samples",
        "6",
        "--threads",
        "1",
        "--out",
        a.to_str().unwrap(),
    ]);
    let o = Command::new(env!("CARGO_BIN_EXE_tangentlab"))
        .args([
            "kernel-convergence",
            "--widths",
            "32,128",
            "--samples",
            "6",
            "--out",
            b.to_str().unwrap(),
        ])
        .env("TANGENTLAB_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(read(&a, "convergence.csv"), read(&b, "convergence.csv"));
}

#[test]
fn invalid_config_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "widthz": [8]}"#).unwrap();
    let out = tmp.path().join("run");
    let o = tangentlab(&[
        "kernels",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let o = tangentlab(&["kernels", "--steps", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn divergence_exits_3_and_removes_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = tangentlab(&[
        "train-compare",
        "--width",
        "32",
        "--steps",
        "400",
        "--learning-rate",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn predictive_distribution_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pd");
    ok(&[
        "predictive-distribution",
        "--width",
        "32",
        "--steps",
        "20",
        "--ensemble-size",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    // 10 points on the line, steps 0 and 20
    assert_eq!(csv_rows(&out.join("bands.csv")).len(), 1 + 2 * 10);
    assert_eq!(csv_rows(&out.join("ensemble.csv")).len(), 1 + 3 * 2 * 10);
    assert_eq!(csv_rows(&out.join("nngp.csv")).len(), 1 + 10);
}

#[test]
fn help_lists_output_headers() {
    let o = tangentlab(&["readout-gp", "--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("readout.csv: time,point,output,mean,std"));
}

#[test]
fn csv_data_source() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(
        &data,
        "x1,x2,y\n0.1,0.2,1\n-0.3,0.5,-1\n0.9,-0.4,1\n0.0,1.0,-1\n0.3,0.3,1\n",
    )
    .unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"architecture": {{"input_dim": 2, "hidden_widths": [16], "output_dim": 1, "activation": "erf",
                 "weight_var": 1.0, "bias_var": 0.1, "param_mode": "ntk"}},
                "data": {{"kind": "csv", "path": {:?}, "input_dim": 2, "output_dim": 1, "train": 3, "test": 2}}}}"#,
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = tmp.path().join("k");
    ok(&[
        "kernels",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    // 3×3 train, 2×3 cross, 2×2 test
    assert_eq!(csv_rows(&out.join("kernels.csv")).len(), 1 + 9 + 6 + 4);
}
