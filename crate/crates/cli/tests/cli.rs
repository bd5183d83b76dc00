use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn minn(args: &[&str], cfg: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_minn"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = cfg {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// Desk preset shrunk so each command takes a few seconds.
fn tiny_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let out = dir.join("preset");
    let o = minn(&["grad-check", "--seed", "1"], None, &out);
    assert!(o.status.success());
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    cfg["data"]["mnist_dir"] = Value::from(mnist_dir().to_str().unwrap());
    cfg["restarts"] = 3.into();
    cfg["data"]["train_images"] = 200.into();
    cfg["data"]["test_images"] = 100.into();
    cfg["data"]["train_channels"] = 20.into();
    cfg["data"]["test_channels"] = 10.into();
    cfg["training"]["epochs"] = 1.into();
    cfg["arch"]["encoder_hidden"] = serde_json::json!([32]);
    cfg["arch"]["decoder_hidden"] = serde_json::json!([32]);
    cfg["baseline"]["channel_draws"] = 2.into();
    cfg["baseline"]["images_per_draw"] = 4.into();
    cfg["baseline"]["autoencoder_fit"]["epochs"] = 1.into();
    cfg["baseline"]["classifier_fit"]["epochs"] = 1.into();
    cfg["baseline"]["alternating"]["max_iterations"] = 1.into();
    edit(&mut cfg);
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn grad_check_passes_and_lists_every_block() {
    let dir = tempfile::tempdir().unwrap();
    let o = minn(&["grad-check"], None, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&dir.path().join("grad_check.csv"));
    assert_eq!(header, ["variant", "block", "params", "rel_error", "passed"]);
    let blocks = |variant: &str| -> Vec<String> {
        rows.iter().filter(|r| r[0] == variant).map(|r| r[1].clone()).collect()
    };
    assert_eq!(blocks("ris-reconfigurable-aware"), ["decoder", "encoder", "controller"]);
    assert_eq!(blocks("ris-fixed-agnostic"), ["decoder", "encoder", "phases"]);
    assert_eq!(blocks("none-fixed-aware"), ["decoder", "encoder"]);
    let sim3 = blocks("sim-fixed-agnostic (M=3)");
    assert_eq!(sim3.iter().filter(|b| b.starts_with("phases[layer")).count(), 3);
    assert!(rows.iter().all(|r| r[4] == "true"));
}

#[test]
fn injected_gradient_fault_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = minn(&["grad-check", "--inject-fault"], None, dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("worst"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"version": 1, "colour": "blue"}"#).unwrap();
    assert_eq!(minn(&["train"], Some(&unknown), dir.path()).status.code(), Some(1));
    let cfg = tiny_config(dir.path(), |c| c["restarts"] = 0.into());
    assert_eq!(minn(&["train"], Some(&cfg), dir.path()).status.code(), Some(1));
    let cfg = tiny_config(dir.path(), |c| c["version"] = 99.into());
    assert_eq!(minn(&["train"], Some(&cfg), dir.path()).status.code(), Some(1));
    assert_eq!(minn(&["train", "--preset", "huge"], None, dir.path()).status.code(), Some(1));
    assert_eq!(minn(&["frobnicate"], None, dir.path()).status.code(), Some(1));
}

#[test]
fn io_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(minn(&["train"], Some(&missing), dir.path()).status.code(), Some(2));
    let cfg = tiny_config(dir.path(), |c| c["data"]["mnist_dir"] = "/nonexistent/mnist".into());
    assert_eq!(minn(&["train"], Some(&cfg), dir.path()).status.code(), Some(2));
    // `eval` without a previous `train` finds no checkpoints.
    let cfg = tiny_config(dir.path(), |_| {});
    assert_eq!(minn(&["eval"], Some(&cfg), &dir.path().join("fresh")).status.code(), Some(2));
}

#[test]
fn gen_channels_is_reproducible_and_matches_pathloss() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = minn(&["gen-channels", "--seed", "5"], None, out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["sim-train.chset", "sim-test.chset"] {
        let bytes = std::fs::read(a.join(f)).unwrap();
        assert!(!bytes.is_empty());
        assert_eq!(bytes, std::fs::read(b.join(f)).unwrap());
    }
    let (header, rows) = csv_rows(&a.join("channel_summary.csv"));
    assert_eq!(header, ["set", "link", "measured", "expected", "rel_error"]);
    assert_eq!(rows.len(), 6);
    for r in rows.iter().filter(|r| r[0] == "sim-train") {
        let err: f64 = r[4].parse().unwrap();
        assert!(err < 0.02, "{} link off by {err}", r[1]);
    }
}

#[test]
fn train_eval_and_summary_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), |_| {});
    let out = dir.path().join("run");
    let o = minn(&["train"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&out.join("train_metrics.csv"));
    assert_eq!(header, ["variant", "restart", "seed", "epoch", "power_dbm", "train_loss", "test_acc"]);
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("train_summary.json")).unwrap()).unwrap();
    for s in summary.as_array().unwrap() {
        let variant = s["variant"].as_str().unwrap();
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == variant).collect();
        let seeds: std::collections::BTreeSet<&str> = mine.iter().map(|r| r[2].as_str()).collect();
        assert_eq!(seeds.len(), 3, "three seed-distinct restarts");
        let mut finals: Vec<f64> = mine.iter().map(|r| r[6].parse().unwrap()).collect();
        finals.sort_by(f64::total_cmp);
        assert_eq!(s["restarts"], 3);
        assert_eq!(s["median"].as_f64().unwrap(), finals[1]);
        assert_eq!(s["top"].as_f64().unwrap(), finals[2]);
        assert!((s["q1"].as_f64().unwrap() - 0.5 * (finals[0] + finals[1])).abs() < 1e-12);
        assert!((s["q3"].as_f64().unwrap() - 0.5 * (finals[1] + finals[2])).abs() < 1e-12);
    }
    for r in 0..3 {
        assert!(out.join(format!("checkpoints/sim-fixed-agnostic-r{r}.ckpt")).exists());
    }
    let o = minn(&["eval"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&out.join("eval_metrics.csv"));
    assert_eq!(header, ["variant", "restart", "power_dbm", "test_acc"]);
    assert_eq!(rows.len(), 6);
}

#[test]
fn anneal_follows_the_power_staircase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), |c| {
        c["restarts"] = 1.into();
        c["variants"] = serde_json::json!([{"kind": "sim", "mode": "fixed", "csi": "agnostic"}]);
        c["data"]["train_images"] = 50.into();
        c["anneal"]["floor_dbm"] = 15.0.into();
    });
    let out = dir.path().join("run");
    let o = minn(&["anneal"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&out.join("anneal_metrics.csv"));
    let powers: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    // One training epoch at 30 dBm, then 5 epochs at each of 30, 25, 20 and 15 dBm.
    let mut expected = vec![30.0];
    for level in [30.0, 25.0, 20.0, 15.0] {
        expected.extend([level; 5]);
    }
    assert_eq!(powers, expected);
    let epochs: Vec<usize> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(epochs, (1..=21).collect::<Vec<_>>());
}

#[test]
fn baseline_reports_per_channel_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), |_| {});
    let out = dir.path().join("run");
    let o = minn(&["baseline"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&out.join("baseline_metrics.csv"));
    assert_eq!(header, ["channel", "rate_bps_hz", "ser", "mse", "accuracy"]);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let rate: f64 = r[1].parse().unwrap();
        let ser: f64 = r[2].parse().unwrap();
        assert!(rate > 0.0 && (0.0..=1.0).contains(&ser));
    }
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("baseline_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["psk_order"], 65536);
    assert_eq!(summary["streams"], 4);
}
