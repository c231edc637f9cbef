mod common;

use eegvis::encoders::{ConvBackbone, Encoder, EncoderConfig, ImageFeatureExtractor};
use eegvis::gan::*;
use eegvis::Error;

fn config(steps: usize, seed: u64) -> GanConfig {
    GanConfig {
        image_size: 16,
        steps,
        eval_every: 0,
        eval_samples: 64,
        seed,
        ..GanConfig::default()
    }
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

#[test]
fn eeg_conditioned_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store) = common::open_with_images(&common::paired(4, 30, 16, 5), dir.path());
    let enc = Encoder::build(&EncoderConfig::lstm(8, 32), 1).unwrap();
    let out = train_gan(&ds, &store, &Conditioner::Eeg(&enc), &config(300, 2)).unwrap();
    assert_eq!(out.history.records.len(), 300);
    assert_eq!(out.history.fid_trace.first().unwrap().0, 0);
    assert_eq!(out.history.fid_trace.last().unwrap().0, 300);
    assert!(out.history.final_fid().unwrap() < out.history.initial_fid().unwrap());
    assert!(out.history.records.iter().all(|r| (0.0..=1.0).contains(&r.ada_p)));

    let test = ds.split("test").unwrap();
    let feats = enc.encode_split(test, 64).unwrap();
    let g = &out.generator;
    // same condition, two noise draws
    let zs = noise_vectors(9, 2, 64);
    let a = g.synthesize(&feats.rows[0], &zs[0]).unwrap();
    let b = g.synthesize(&feats.rows[0], &zs[1]).unwrap();
    assert!(mean_abs_diff(&a.data, &b.data) > 0.0);
    assert_eq!(a, g.synthesize(&feats.rows[0], &zs[0]).unwrap());
    assert!(a.data.iter().all(|v| (-1.0..=1.0).contains(v)));

    // condition sensitivity with shared noise per pair
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    let z = &zs[0];
    let imgs: Vec<_> = feats.rows.iter().map(|c| g.synthesize(c, z).unwrap()).collect();
    for i in 0..imgs.len() {
        for j in i + 1..imgs.len() {
            let d = mean_abs_diff(&imgs[i].data, &imgs[j].data);
            if feats.labels[i] == feats.labels[j] {
                same.push(d);
            } else {
                diff.push(d);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&diff) > mean(&same), "different-class {} vs same-class {}", mean(&diff), mean(&same));
}

#[test]
fn disabled_ada_keeps_p_at_zero_and_one_hot_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store) = common::open_with_images(&common::paired(3, 10, 16, 1), dir.path());
    let cfg = GanConfig {
        condition_mode: ConditionMode::OneHot,
        ada_enabled: false,
        ..config(20, 0)
    };
    let out = train_gan(&ds, &store, &Conditioner::OneHot { num_classes: 3 }, &cfg).unwrap();
    assert!(out.history.records.iter().all(|r| r.ada_p == 0.0));
    assert_eq!(out.generator.shape().cond_dim, 3);
    let img = out.generator.synthesize(&one_hot(1, 3), &noise_vectors(0, 1, 64)[0]).unwrap();
    assert_eq!((img.height, img.width), (16, 16));
}

#[test]
fn alternating_steps_touch_only_their_network() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store) = common::open_with_images(&common::paired(3, 10, 16, 1), dir.path());
    let enc = Encoder::build(&EncoderConfig::lstm(8, 32), 0).unwrap();
    let mut t = GanTrainer::new(&ds, &store, &Conditioner::Eeg(&enc), &config(10, 0)).unwrap();
    let digests = |t: &GanTrainer| {
        (
            t.generator().params().digest().unwrap(),
            t.discriminator().params().digest().unwrap(),
        )
    };
    let (g0, d0) = digests(&t);
    t.generator_step().unwrap();
    let (g1, d1) = digests(&t);
    assert_ne!(g0, g1);
    assert_eq!(d0, d1);
    t.discriminator_step(4).unwrap();
    let (g2, d2) = digests(&t);
    assert_eq!(g1, g2);
    assert_ne!(d1, d2);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store) = common::open_with_images(&common::paired(3, 10, 16, 1), dir.path());
    let enc = Encoder::build(&EncoderConfig::lstm(8, 32), 0).unwrap();
    let run = || train_gan(&ds, &store, &Conditioner::Eeg(&enc), &config(12, 4)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(
        a.generator.params().digest().unwrap(),
        b.generator.params().digest().unwrap()
    );
}

#[test]
fn preconditions_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let (mut ds, store) = common::open_with_images(&common::paired(3, 10, 16, 1), &dir.path().join("p"));
    let one_hot_cfg = GanConfig {
        condition_mode: ConditionMode::OneHot,
        ..config(1, 0)
    };
    let wrong = Encoder::build(&EncoderConfig::lstm(14, 32), 0).unwrap();
    let err = train_gan(&ds, &store, &Conditioner::Eeg(&wrong), &config(1, 0)).err().unwrap();
    assert!(matches!(err, Error::Geometry(_)));
    let err = train_gan(&ds, &store, &Conditioner::OneHot { num_classes: 3 }, &config(1, 0)).err().unwrap();
    assert!(matches!(err, Error::Config(_)));
    let bigger = GanConfig {
        image_size: 32,
        ..one_hot_cfg.clone()
    };
    let err = train_gan(&ds, &store, &Conditioner::OneHot { num_classes: 3 }, &bigger).err().unwrap();
    assert!(matches!(err, Error::Geometry(_)));

    ds.manifest.labeled = false;
    let err = train_gan(&ds, &store, &Conditioner::OneHot { num_classes: 3 }, &one_hot_cfg).err().unwrap();
    assert!(matches!(err, Error::Data(_)));

    let plain = tempfile::tempdir().unwrap();
    let unpaired = common::open(&common::separable(3, 10, 0), plain.path());
    let err = train_gan(&unpaired, &store, &Conditioner::OneHot { num_classes: 3 }, &one_hot_cfg).err().unwrap();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn generator_checkpoint_round_trip() {
    let shape = NetShape::new(16, 5, 8).unwrap();
    let g = Generator::new(&shape, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let meta = generator_meta(&GanConfig::default(), Some("abc"), "def");
    g.save(&path, meta.clone()).unwrap();
    let (back, m) = Generator::load(&path).unwrap();
    assert_eq!(m, meta);
    let conds = vec![vec![0.5; 5], vec![-1.0; 5]];
    assert_eq!(
        synthesize_images(&g, &conds, &[1, 2]).unwrap(),
        synthesize_images(&back, &conds, &[1, 2]).unwrap()
    );
}

#[test]
fn linear_image_to_eeg_map_is_recovered_and_synthesizes() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, store) = common::open_with_images(&common::paired(4, 100, 16, 3), dir.path());
    let ext = ConvBackbone::tiny(11).unwrap();
    let split = ds.split("train").unwrap();
    let ids: Vec<String> = split.image_ids.iter().map(|i| i.clone().unwrap()).collect();
    let img_feats = eegvis::clip::image_features(&ext, &store, &ids, None).unwrap();
    // ground-truth map into a 6-D "EEG" space
    let a: Vec<Vec<f32>> = (0..6)
        .map(|o| (0..ext.feature_dim()).map(|i| (((o * 31 + i * 17) % 13) as f32 - 6.0) / 13.0).collect())
        .collect();
    let eeg: Vec<Vec<f32>> = img_feats
        .iter()
        .map(|x| a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum::<f32>() + 0.25).collect())
        .collect();
    let fit = fit_translator(&img_feats, &eeg, 0.2, 0, false).unwrap();
    assert!(fit.heldout_mse <= 1e-3, "{}", fit.heldout_mse);

    let unseen = store.load(ds.split("test").unwrap().image_ids[0].as_ref().unwrap()).unwrap();
    let cond = translate_image(&ext, &fit.translator, &unseen).unwrap();
    let g = Generator::new(&NetShape::new(16, 6, 8).unwrap(), 0).unwrap();
    let img = g.synthesize(&cond, &noise_vectors(1, 1, 8)[0]).unwrap();
    assert!(img.data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));

    let enc = Encoder::build(&EncoderConfig::lstm(8, 32), 0).unwrap();
    let pipeline = fit_image_to_eeg(&ext, &enc, &ds, &store, 0.2, 0, None).unwrap();
    assert!(pipeline.translator.renormalize);
    assert_eq!(pipeline.translator.output_dim, 128);
    assert!(pipeline.heldout_mse.is_finite());
}
