use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ldbfss(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldbfss"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{"dims": [6, 8], "epochs": 2, "batch_size": 24, "batches_per_epoch": 2, "eval_size": 48,
            "eval_every": 1, "clusters": 3, "instances": 4, "output_dir": "out"{extra}}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldbfss(&["frobnicate"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldbfss(&["cluster", "--input", "x.csv", "--k", "2", "--bogus"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn zero_epochs_writes_one_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), r#", "epochs": 0"#);
    let out = ldbfss(&["train", "--config", "config.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("epoch,cls,conf,reg,con,dom,total,probe_obj,probe_cand,silhouette,agreement"));
    assert!(lines[1].starts_with("0,"));
    for name in ["metrics.csv", "embeddings.csv", "embeddings.json"] {
        let sidecar = dir.path().join(format!("out/{name}.config.json"));
        let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
        assert_eq!(resolved["epochs"], 0);
        assert_eq!(resolved["momentum"], 0.937);
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"epochs": 1, "learning_rte": 0.1}"#).unwrap();
    let out = ldbfss(&["train", "--config", "bad.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), "");
    let run = |extra: &[&str]| {
        let mut args = vec!["train", "--config", "config.json"];
        args.extend_from_slice(extra);
        assert!(ldbfss(&args, dir.path()).status.success());
        (
            fs::read(dir.path().join("out/metrics.csv")).unwrap(),
            fs::read(dir.path().join("out/embeddings.json")).unwrap(),
        )
    };
    let first = run(&[]);
    assert_eq!(first, run(&[]));
    let other = run(&["--seed", "9"]);
    assert_ne!(first.0, other.0);
    let sidecar = fs::read_to_string(dir.path().join("out/metrics.csv.config.json")).unwrap();
    assert!(sidecar.contains("\"seed\": 9"));
}

#[test]
fn cluster_splits_two_pairs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("emb.csv"), "id,scale,class,dim_0\na,0,0,0.0\nb,0,0,1.0\nc,0,1,5.0\nd,0,1,6.0\n").unwrap();
    let out = ldbfss(
        &["cluster", "--input", "emb.csv", "--k", "2", "--linkage", "single", "--output", "c.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(text, "id,cluster\na,0\nb,0\nc,1\nd,1\n");
    assert!(dir.path().join("c.csv.config.json").exists());
}

#[test]
fn cluster_reports_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("emb.csv"), "id,scale,class,dim_0\na,0,0,0.0\nb,0,0,oops\n").unwrap();
    let out = ldbfss(&["cluster", "--input", "emb.csv", "--k", "1"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("emb.csv:3"));
}

#[test]
fn trained_embeddings_feed_cluster_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), "");
    assert!(ldbfss(&["train", "--config", "config.json"], dir.path()).status.success());
    let out = ldbfss(&["eval", "--input", "out/embeddings.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "scale,rows,probe_accuracy,silhouette");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let fields: Vec<f64> = l.split(',').map(|f| f.parse().unwrap()).collect();
        assert!((0.0..=1.0).contains(&fields[2]));
        assert!((-1.0..=1.0).contains(&fields[3]));
    }

    let out = ldbfss(&["cluster", "--input", "out/embeddings.csv", "--k", "3"], dir.path());
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 2 * 48);
}

#[test]
fn sweep_and_ablate_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), r#", "epochs": 1"#);
    let out = ldbfss(&["sweep-k", "--config", "config.json", "--k-min", "3", "--k-max", "6"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(dir.path().join("out/sweep_k.csv")).unwrap();
    let ks: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["3", "4", "5", "6"]);
    assert!(dir.path().join("out/sweep_k.csv.config.json").exists());

    let out = ldbfss(&["ablate", "--config", "config.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let variants: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["baseline", "contrastive", "k_instance", "latent_domain"]);

    let bad = ldbfss(&["sweep-k", "--config", "config.json", "--k-min", "5", "--k-max", "3"], dir.path());
    assert!(!bad.status.success());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ldbfss(&["gradcheck", "--seeds", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(table.contains("composed_total_loss"));
}
