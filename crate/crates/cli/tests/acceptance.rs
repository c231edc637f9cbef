//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so
//! wall-clock budgets are measured without contention.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use candle_core::{Device, Tensor, Var};
use eegvis::clip::{train_clip, ClipConfig, ClipModel};
use eegvis::data::{make_synthetic, Dataset, ImageStore, SyntheticImages, SyntheticSpec};
use eegvis::encoders::{ConvBackbone, Encoder, EncoderConfig, ImageFeatureExtractor};
use eegvis::eval::*;
use eegvis::gan::*;
use eegvis::metric::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run_criterion(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match outcome {
        Ok(v) => (v.pass, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(b) = budget {
        if elapsed > b {
            pass = false;
            detail.push_str(&format!("; over the {}s budget", b.as_secs()));
        }
    }
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {tag} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
    pass
}

fn open(spec: &SyntheticSpec, dir: &Path) -> Dataset {
    make_synthetic(spec, dir, "synthetic").unwrap();
    Dataset::open(dir).unwrap()
}

fn separable(classes: usize, per_class: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        ..SyntheticSpec::new(classes, 14, 32, per_class)
    }
}

fn paired(classes: usize, per_class: usize, image_size: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        images: Some(SyntheticImages {
            image_size,
            latent_coupling: 1.0,
        }),
        ..separable(classes, per_class, seed)
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mining_oracle() -> Verdict {
    let mut rng = eegvis::seeded_rng(1001);
    let margins = [0.1, 0.2, 1.0];
    let mut total_triples = 0usize;
    for instance in 0..200 {
        let b = rng.gen_range(3..=64);
        let classes = rng.gen_range(2..=8);
        let dim = rng.gen_range(1..=4);
        let margin = margins[instance % 3];
        // quarter-step grid values make distance ties and band edges common
        let emb: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..dim).map(|_| rng.gen_range(-4i32..=4) as f64 / 4.0).collect())
            .collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
        let mut expected = Vec::new();
        for a in 0..b {
            for p in 0..b {
                for n in 0..b {
                    if a == p || labels[a] != labels[p] || labels[n] == labels[a] {
                        continue;
                    }
                    let (ap, an) = (sq(&emb[a], &emb[p]), sq(&emb[a], &emb[n]));
                    if ap < an && an < ap + margin {
                        expected.push((a, p, n));
                    }
                }
            }
        }
        let got = mine_semihard(&emb, &labels, margin).triples;
        if got != expected {
            return verdict(false, format!("instance {instance} (B={b}, margin {margin}) differs"));
        }
        total_triples += expected.len();
    }
    verdict(true, format!("200 instances identical, {total_triples} triples in total"))
}

fn loss_oracle(emb: &[Vec<f64>], triples: &[(usize, usize, usize)], margin: f64) -> f64 {
    let mut total = 0.0;
    for &(a, p, n) in triples {
        total += (sq(&emb[a], &emb[p]) - sq(&emb[a], &emb[n]) + margin).max(0.0);
    }
    total / triples.len() as f64
}

fn loss_and_gradient() -> Verdict {
    let mut rng = eegvis::seeded_rng(2002);
    let (mut worst_loss, mut worst_grad) = (0.0f64, 0.0f64);
    let mut instances = 0;
    while instances < 50 {
        let b = rng.gen_range(4..=12);
        let dim = rng.gen_range(2..=6);
        let margin = rng.gen_range(0.05..1.5);
        let emb: Vec<Vec<f64>> = (0..b).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
        let set = mine_all_valid(&labels);
        // the hinge is not differentiable at zero; redraw instances that sit on it
        let near_kink = set.triples.iter().any(|&(a, p, n)| {
            (sq(&emb[a], &emb[p]) - sq(&emb[a], &emb[n]) + margin).abs() < 1e-4
        });
        if near_kink {
            continue;
        }
        instances += 1;
        let flat: Vec<f64> = emb.iter().flatten().copied().collect();
        let var = Var::from_tensor(&Tensor::from_vec(flat, (b, dim), &Device::Cpu).unwrap()).unwrap();
        let loss = triplet_loss(var.as_tensor(), &set, margin).unwrap();
        let value = loss.to_scalar::<f64>().unwrap();
        worst_loss = worst_loss.max((value - loss_oracle(&emb, &set.triples, margin)).abs());
        let grads = loss.backward().unwrap();
        let g: Vec<Vec<f64>> = grads.get(var.as_tensor()).unwrap().to_vec2().unwrap();
        let h = 1e-6;
        for i in 0..b {
            for k in 0..dim {
                let (mut plus, mut minus) = (emb.clone(), emb.clone());
                plus[i][k] += h;
                minus[i][k] -= h;
                let fd = (loss_oracle(&plus, &set.triples, margin) - loss_oracle(&minus, &set.triples, margin)) / (2.0 * h);
                let err = (fd - g[i][k]).abs();
                if err > 1e-9 {
                    worst_grad = worst_grad.max(err / fd.abs().max(g[i][k].abs()));
                }
            }
        }
    }
    verdict(
        worst_loss <= 1e-6 && worst_grad <= 1e-4,
        format!("max loss error {worst_loss:.2e}, max gradient relative error {worst_grad:.2e} over 50 instances"),
    )
}

fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianStats {
    let d = mean.len();
    GaussianStats::new(DVector::from_vec(mean), cov, d + 1).unwrap()
}

fn kernel_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let d = x[0].len() as f64;
    let k = |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / d + 1.0).powi(3);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                xx += k(&x[i], &x[j]);
            }
        }
    }
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                yy += k(&y[i], &y[j]);
            }
        }
    }
    for a in x {
        for b in y {
            xy += k(a, b);
        }
    }
    xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n)
}

fn metric_identities() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let k = 10;
    let uniform = vec![vec![1.0 / k as f64; k]; 50];
    check("IS uniform", (inception_score(&uniform, 1).unwrap().0 - 1.0).abs() <= 1e-4);
    let one_hots: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    check("IS one-hots", (inception_score(&one_hots, 1).unwrap().0 - k as f64).abs() <= 1e-4);

    let mut rng = eegvis::seeded_rng(3003);
    let feats: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let a = GaussianStats::from_features(&feats).unwrap();
    check("FID(A,A)", fid(&a, &a).unwrap().abs() <= 1e-6);
    let shift = vec![0.5, -1.0, 2.0, 0.0, 0.25];
    let norm2: f64 = shift.iter().map(|v| v * v).sum();
    let mean_b: Vec<f64> = a.mean.iter().zip(&shift).map(|(m, s)| m + s).collect();
    let b = stats(mean_b, a.cov.clone());
    check("FID mean shift", (fid(&a, &b).unwrap() - norm2).abs() <= 1e-6);
    let one = stats(vec![0.0], DMatrix::from_element(1, 1, 1.0));
    let four = stats(vec![0.0], DMatrix::from_element(1, 1, 4.0));
    check("FID 1-D variance", (fid(&one, &four).unwrap() - 1.0).abs() <= 1e-6);

    let x: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..25).map(|_| (0..4).map(|_| rng.gen_range(-0.5..1.5)).collect()).collect();
    let oracle = kernel_oracle(&x, &y);
    check("MMD double loop", (mmd2_unbiased(&x, &y).unwrap() - oracle).abs() <= 1e-8);
    // a full-size subset is a permutation, which leaves the statistic unchanged
    check("KID full subset", (kid(&x[..25], &y, 25, 1, 0).unwrap().0 - kernel_oracle(&x[..25], &y)).abs() <= 1e-8);

    let ids = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
    let q1 = RankedResult::new("q1", ids(3), vec![false, false, true]).unwrap();
    let q2 = RankedResult::new("q2", ids(3), vec![true, false, true]).unwrap();
    let results = [q1, q2];
    check("MRR hand case", mean_reciprocal_rank(&results).unwrap() == (1.0 / 3.0 + 1.0) / 2.0);
    check("mAP hand case", mean_average_precision(&results).unwrap() == (1.0 / 3.0 + (1.0 + 2.0 / 3.0) / 2.0) / 2.0);
    let top = topk_accuracy(&results, &[1, 3]).unwrap();
    check("top-k hand case", top[&1] == 0.5 && top[&3] == 1.0);

    let n = failures.len();
    verdict(n == 0, if n == 0 { "all 12 identities hold".to_string() } else { format!("failed: {failures:?}") })
}

fn rotate(points: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = eegvis::seeded_rng(seed);
    let d = points[0].len();
    let mut out = points.to_vec();
    for i in 0..d {
        for j in i + 1..d {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (c, s) = (t.cos(), t.sin());
            for p in &mut out {
                let (a, b) = (p[i], p[j]);
                p[i] = c * a - s * b;
                p[j] = s * a + c * b;
            }
        }
    }
    out
}

fn kmeans_criterion() -> Verdict {
    let mut rng = eegvis::seeded_rng(4004);
    let centers = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]];
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..30 {
            points.push(center.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let cfg = KMeansConfig::default();
    let perfect = kmeans_accuracy(&points, &labels, 3, &cfg).unwrap();
    let even = clustering_accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap();

    let mut overlap = Vec::new();
    let mut overlap_labels = Vec::new();
    for c in 0..3 {
        for _ in 0..40 {
            overlap.push((0..3).map(|j| if j == c { 1.5 } else { 0.0 } + rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
            overlap_labels.push(c);
        }
    }
    let before = kmeans_accuracy(&overlap, &overlap_labels, 3, &cfg).unwrap();
    let after = kmeans_accuracy(&rotate(&overlap, 9), &overlap_labels, 3, &cfg).unwrap();
    verdict(
        perfect == 1.0 && even == 0.5 && (before - after).abs() <= 1e-9,
        format!("perfect {perfect}, even split {even}, rotation {before} vs {after}"),
    )
}

fn embed(enc: &Encoder, ds: &Dataset, split: &str) -> eegvis::encoders::EmbeddingBatch {
    enc.encode_split(ds.split(split).unwrap(), 256).unwrap()
}

fn triplet_pipeline() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = open(&separable(3, 100, 5), dir.path());
    let mut enc = Encoder::build(&EncoderConfig::lstm(14, 32), 0).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 48,
        seed: 1,
        ..TrainConfig::default()
    };
    train_triplet(&mut enc, &ds, &TripletConfig::default(), &tc).unwrap();
    let (train, test) = (embed(&enc, &ds, "train"), embed(&enc, &ds, "test"));
    let km = kmeans_accuracy(&test.to_f64(), &test.labels, 3, &KMeansConfig::default()).unwrap();
    let probe = linear_probe_accuracy(
        &train.to_f64(),
        &train.labels,
        &test.to_f64(),
        &test.labels,
        &LinearProbeConfig::default(),
    )
    .unwrap();
    verdict(km >= 0.95 && probe >= 0.95, format!("test k-means {km:.3}, linear probe {probe:.3}"))
}

fn zero_shot() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = open(&separable(8, 60, 21), dir.path());
    let holdout = vec![6, 7];
    let mut enc = Encoder::build(&EncoderConfig::lstm(14, 32), 4).unwrap();
    let tc = TrainConfig {
        epochs: 15,
        batch_size: 48,
        seed: 2,
        ..TrainConfig::default()
    };
    train_triplet(&mut enc, &ds.excluding_classes(&holdout), &TripletConfig::default(), &tc).unwrap();
    let r = zero_shot_protocol(&ds, &enc, &ZeroShotConfig::new(holdout)).unwrap();
    verdict(
        r.kmeans >= 0.9,
        format!("unseen k-means {:.3} (svm {:.3}, knn {:.3}, {} test records)", r.kmeans, r.svm, r.knn, r.probe_test_records),
    )
}

fn clip_run() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = open(&paired(10, 40, 32, 3), dir.path());
    let store = ImageStore::open(&ds.image_dir().unwrap()).unwrap();
    let ext = ConvBackbone::tiny(0).unwrap();
    let before = ext.digest().unwrap();
    let cfg = ClipConfig {
        epochs: 100,
        batch_size: 32,
        seed: 1,
        ..ClipConfig::default()
    };
    let enc = Encoder::build(&EncoderConfig::lstm(14, 32), 0).unwrap();
    let mut model = ClipModel::new(enc, ext.feature_dim(), cfg).unwrap();
    let h = train_clip(&mut model, &ext, &ds, &store, None).unwrap();
    let top1 = h.records.last().unwrap().val_top1;
    let unchanged = ext.digest().unwrap() == before;
    verdict(
        top1 >= 0.8 && unchanged,
        format!("val top-1 {top1:.3} (chance 1/32), extractor unchanged: {unchanged}"),
    )
}

fn gan_smoke() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = open(&paired(4, 50, 32, 5), dir.path());
    let store = ImageStore::open(&ds.image_dir().unwrap()).unwrap();
    let enc = Encoder::build(&EncoderConfig::lstm(14, 32), 1).unwrap();
    let cfg = GanConfig {
        steps: 2000,
        seed: 2,
        ..GanConfig::default()
    };
    let out = train_gan(&ds, &store, &Conditioner::Eeg(&enc), &cfg).unwrap();
    let (first, last) = (out.history.initial_fid().unwrap(), out.history.final_fid().unwrap());
    let drop = 1.0 - last / first;
    let p_ok = out.history.records.iter().all(|r| (0.0..=1.0).contains(&r.ada_p));
    let conds = embed(&enc, &ds, "test").rows;
    let seeds: Vec<u64> = (0..conds.len() as u64).collect();
    let images = synthesize_images(&out.generator, &conds, &seeds).unwrap();
    let bounded = images.iter().all(|i| i.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    verdict(
        drop >= 0.3 && p_ok && bounded,
        format!(
            "FID {first:.3} -> {last:.3} ({:.0}% drop), final ADA p {:.4}, {} images bounded: {bounded}",
            drop * 100.0,
            out.ada.p,
            images.len()
        ),
    )
}

fn image_to_image() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = open(&paired(4, 100, 16, 3), dir.path());
    let store = ImageStore::open(&ds.image_dir().unwrap()).unwrap();
    let ext = ConvBackbone::tiny(11).unwrap();
    let split = ds.split("train").unwrap();
    let ids: Vec<String> = split.image_ids.iter().map(|i| i.clone().unwrap()).collect();
    let feats = eegvis::clip::image_features(&ext, &store, &ids, None).unwrap();
    let mut rng = eegvis::seeded_rng(5005);
    let out_dim = 16;
    let a: Vec<Vec<f32>> = (0..out_dim)
        .map(|_| (0..ext.feature_dim()).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let bias: Vec<f32> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let eeg: Vec<Vec<f32>> = feats
        .iter()
        .map(|x| a.iter().zip(&bias).map(|(row, b)| row.iter().zip(x).map(|(p, q)| p * q).sum::<f32>() + b).collect())
        .collect();
    let fit = fit_translator(&feats, &eeg, 0.2, 0, false).unwrap();
    let g = Generator::new(&NetShape::new(16, out_dim, 8).unwrap(), 0).unwrap();
    let test = ds.split("test").unwrap();
    let mut valid = true;
    for (i, id) in test.image_ids.iter().enumerate() {
        let img = store.load(id.as_ref().unwrap()).unwrap();
        let cond = translate_image(&ext, &fit.translator, &img).unwrap();
        let out = g.synthesize(&cond, &noise_vectors(i as u64, 1, 8)[0]).unwrap();
        valid &= (out.height, out.width) == (16, 16) && out.data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v));
    }
    verdict(
        fit.heldout_mse <= 1e-3 && valid,
        format!(
            "held-out MSE {:.2e} on {} records, {} translated images valid: {valid}",
            fit.heldout_mse,
            fit.heldout_records,
            test.len()
        ),
    )
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_eegvis"))
        .args(args)
        .env_remove("EEGVIS_CACHE_DIR")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    cli(&["make-synthetic", "--out", &s(&root.join("syn")), "--per-class", "40", "--image-size", "16", "--seed", "4"]);
    let data = s(&root.join("syn/data"));
    let enc_dir = root.join("enc0");
    cli(&["train-encoder", "--epochs", "2", "--data", &data, "--out", &s(&enc_dir)]);
    let encoder = s(&enc_dir.join("checkpoints/encoder.ckpt"));

    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("train-encoder triplet", vec!["train-encoder", "--regime", "triplet", "--epochs", "3"]),
        ("train-encoder supervised", vec!["train-encoder", "--regime", "supervised", "--epochs", "3"]),
        ("finetune", vec!["finetune", "--regime", "supervised", "--epochs", "2", "--encoder", &encoder]),
        ("train-clip", vec!["train-clip", "--epochs", "3", "--batch-size", "16"]),
        (
            "train-gan",
            vec![
                "train-gan", "--image-size", "16", "--steps", "30", "--eval-every", "10", "--eval-samples", "16",
                "--encoder", &encoder,
            ],
        ),
    ];
    let mut differing = Vec::new();
    for (i, (name, args)) in runs.iter().enumerate() {
        let mut histories = Vec::new();
        for rep in 0..2 {
            let out = root.join(format!("run{i}_{rep}"));
            let mut full = args.clone();
            let (o, d) = (s(&out), data.clone());
            full.extend(["--seed", "7", "--data", &d, "--out", &o]);
            cli(&full);
            histories.push(std::fs::read(out.join("logs/history.csv")).unwrap());
        }
        if histories[0] != histories[1] || histories[0].is_empty() {
            differing.push(*name);
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} training subcommands byte-identical across two runs", runs.len())
        } else {
            format!("history differs for {differing:?}")
        },
    )
}

fn architecture_contrast() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        class_separation: 1.0,
        noise_scale: 3.0,
        seed: 7,
        ..SyntheticSpec::new(10, 14, 32, 100)
    };
    let ds = open(&spec, dir.path());
    let tc = TrainConfig {
        epochs: 15,
        batch_size: 60,
        seed: 3,
        ..TrainConfig::default()
    };
    let score = |config: EncoderConfig| {
        let mut enc = Encoder::build(&config, 1).unwrap();
        train_triplet(&mut enc, &ds, &TripletConfig::default(), &tc).unwrap();
        let test = embed(&enc, &ds, "test");
        kmeans_accuracy(&test.to_f64(), &test.labels, 10, &KMeansConfig::default()).unwrap()
    };
    let cnn = score(EncoderConfig::cnn(14, 32));
    let lstm = score(EncoderConfig::lstm(14, 32));
    verdict(cnn < lstm, format!("test k-means CNN {cnn:.3} vs LSTM {lstm:.3} (expected CNN < LSTM)"))
}

#[test]
fn acceptance_suite() {
    let secs = Duration::from_secs;
    let criteria: Vec<(&str, Option<Duration>, fn() -> Verdict)> = vec![
        ("semi-hard mining oracle", Some(secs(30)), mining_oracle),
        ("triplet loss oracle and gradient", None, loss_and_gradient),
        ("metric identities", None, metric_identities),
        ("k-means accuracy", None, kmeans_criterion),
        ("desk-scale triplet pipeline", Some(secs(300)), triplet_pipeline),
        ("zero-shot on held-out classes", Some(secs(600)), zero_shot),
        ("joint EEG-image embedding", Some(secs(600)), clip_run),
        ("GAN smoke", Some(secs(1200)), gan_smoke),
        ("image-to-image recovery", Some(secs(300)), image_to_image),
        ("determinism", None, determinism),
        ("architecture contrast", None, architecture_contrast),
    ];
    let failed: Vec<&str> = criteria
        .into_iter()
        .filter_map(|(name, budget, f)| (!run_criterion(name, budget, f)).then_some(name))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
