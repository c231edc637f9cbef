use std::path::Path;
use std::process::{Command, Output};

use eegvis::eval::MetricReport;

fn eegvis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegvis"))
        .args(args)
        .env_remove("EEGVIS_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = eegvis(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synthetic(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join("syn");
    let mut args = vec!["make-synthetic", "--out", p(&out), "--per-class", "40"];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("data")
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = eegvis(&["train-encoder", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = eegvis(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_and_missing_data_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), &[]);
    let out = eegvis(&["train-encoder", "--out", p(&dir.path().join("a")), "--data", p(&data), "--epochs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("missing");
    let out = eegvis(&["train-encoder", "--out", p(&dir.path().join("b")), "--data", p(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn triplet_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["train-encoder", "--regime", "triplet", "--seed", "7", "--epochs", "3", "--data", p(&data), "--out", p(&out)]);
        std::fs::read(out.join("logs/history.csv")).unwrap()
    };
    let (a, b) = (run("r1"), run("r2"));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), &[]);
    let out = dir.path().join("run");
    ok(&["train-encoder", "--epochs", "1", "--checkpoint-every", "1", "--data", p(&data), "--out", p(&out)]);
    for sub in ["checkpoints", "reports", "images", "logs"] {
        assert!(out.join(sub).is_dir(), "{sub}");
    }
    for file in [
        "config.json",
        "inputs.json",
        "logs/run.log",
        "logs/history.csv",
        "checkpoints/encoder.ckpt",
        "checkpoints/encoder_epoch0001.ckpt",
        "reports/val_kmeans.json",
    ] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let inputs: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("inputs.json")).unwrap()).unwrap();
    assert_eq!(inputs["data"]["sha256"].as_str().unwrap().len(), 64);
    let config: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["command"], "train-encoder");
    assert_eq!(config["deterministic"], true);
}

#[test]
fn one_hot_gan_without_labels_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), &["--unlabeled", "--image-size", "16"]);
    let out = eegvis(&[
        "train-gan", "--condition", "one-hot", "--image-size", "16", "--steps", "2", "--data", p(&data), "--out",
        p(&dir.path().join("gan")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn kmeans_on_exported_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), &[]);
    let enc = dir.path().join("enc");
    ok(&["train-encoder", "--epochs", "10", "--data", p(&data), "--out", p(&enc)]);
    let exp = dir.path().join("exp");
    let ckpt = enc.join("checkpoints/encoder.ckpt");
    ok(&["export-embeddings", "--split", "test", "--data", p(&data), "--encoder", p(&ckpt), "--out", p(&exp)]);
    let ev = dir.path().join("ev");
    let csv = exp.join("reports/embeddings_test.csv");
    ok(&["evaluate", "--metrics", "kmeans", "--embeddings", p(&csv), "--out", p(&ev)]);
    let report = MetricReport::read(&ev.join("reports/kmeans.json")).unwrap();
    assert_eq!(report.metric, "kmeans");
    assert!(report.value >= 0.95, "k-means accuracy {}", report.value);
}

#[test]
fn image_pipeline_commands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic(dir.path(), &["--image-size", "16"]);
    let enc = dir.path().join("enc");
    ok(&["train-encoder", "--epochs", "2", "--data", p(&data), "--out", p(&enc)]);
    let ckpt = enc.join("checkpoints/encoder.ckpt");

    let clip = dir.path().join("clip");
    ok(&["train-clip", "--epochs", "2", "--batch-size", "16", "--data", p(&data), "--out", p(&clip)]);
    let ev = dir.path().join("ev");
    let ranked = clip.join("reports/ranked_test.csv");
    let relevance = clip.join("reports/relevance_test.csv");
    ok(&["evaluate", "--metrics", "mrr,map,topk", "--ranked", p(&ranked), "--relevance", p(&relevance), "--out", p(&ev)]);
    let mrr = MetricReport::read(&ev.join("reports/mrr.json")).unwrap().value;
    let map = MetricReport::read(&ev.join("reports/map.json")).unwrap().value;
    // one relevant image per query makes the two measures coincide
    assert!((mrr - map).abs() < 1e-12);
    assert_eq!(MetricReport::read(&ev.join("reports/top10.json")).unwrap().value, 1.0);

    let gan = dir.path().join("gan");
    ok(&[
        "train-gan", "--image-size", "16", "--steps", "4", "--eval-every", "2", "--eval-samples", "8", "--encoder",
        p(&ckpt), "--data", p(&data), "--out", p(&gan),
    ]);
    assert!(gan.join("images/samples.png").is_file());
    let generator = gan.join("checkpoints/generator.ckpt");

    let syn = dir.path().join("synth");
    ok(&[
        "synthesize", "--count", "3", "--samples", "2", "--generator", p(&generator), "--encoder", p(&ckpt), "--data",
        p(&data), "--out", p(&syn),
    ]);
    let samples = syn.join("images/samples");
    assert_eq!(std::fs::read_dir(&samples).unwrap().count(), 6);

    let tr = dir.path().join("tr");
    ok(&["translate-image", "--generator", p(&generator), "--encoder", p(&ckpt), "--data", p(&data), "--out", p(&tr)]);
    assert!(tr.join("checkpoints/translator.ckpt").is_file());
    assert!(tr.join("images/translated.png").is_file());

    let real = data.join("images");
    let ev2 = dir.path().join("ev2");
    ok(&["evaluate", "--metrics", "fid,kid", "--kid-subset-size", "6", "--real", p(&real), "--fake", p(&samples), "--out", p(&ev2)]);
    assert!(MetricReport::read(&ev2.join("reports/fid.json")).unwrap().value >= 0.0);
}

#[test]
fn metric_without_its_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = eegvis(&["evaluate", "--metrics", "kmeans", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}
