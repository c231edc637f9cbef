use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::Result;
use eegvis::clip::{build_index, train_clip as fit_clip, write_ranked_csv, ClipConfig, ClipModel, FeatureCache};
use eegvis::data::{
    load_png, make_synthetic as write_synthetic, save_mosaic, save_png, Dataset, ImageStore, ImageTensor, MosaicCell,
    SplitData, SyntheticImages, SyntheticSpec,
};
use eegvis::encoders::{ClassifierHead, ConvBackbone, EmbeddingBatch, Encoder, EncoderConfig, EncoderKind, ImageFeatureExtractor};
use eegvis::eval::{
    export_embeddings as write_split_embeddings, fid, inception_score, kid, kmeans_accuracy, knn_accuracy,
    linear_probe_accuracy, mean_average_precision, mean_reciprocal_rank, read_embeddings, topk_accuracy,
    write_embeddings, zero_shot_protocol, GaussianStats, KMeansConfig, LinearProbeConfig, MetricReport, RankedResult,
    ZeroShotConfig,
};
use eegvis::gan::{
    fit_image_to_eeg, generator_meta, one_hot, synthesize_images, train_gan as fit_gan, translate_image as translate,
    ConditionMode, Conditioner, GanConfig, Generator,
};
use eegvis::hash::sha256_file;
use eegvis::metric::{train_supervised, train_triplet, History, TrainConfig, TripletConfig};
use eegvis::{derive_seed, Error};
use serde_json::json;

use crate::run::{write_json, RunDir};
use crate::{
    Condition, EvaluateArgs, ExportArgs, ExtractorArgs, FinetuneArgs, MakeSyntheticArgs, Metric, Regime,
    SynthesizeArgs, TrainClipArgs, TrainEncoderArgs, TrainGanArgs, TrainingArgs, TranslateImageArgs, ZeroShotArgs,
};

/// Environment variable naming the image-feature cache directory.
pub const CACHE_ENV: &str = "EEGVIS_CACHE_DIR";

fn start<T: serde::Serialize>(out: &Path, command: &str, fast: bool, args: &T, inputs: &[(&str, &Path)]) -> Result<RunDir> {
    let run = RunDir::create(out)?;
    run.init_logging()?;
    run.write_config(command, fast, args)?;
    run.write_inputs(inputs)?;
    log::info!("{command}: writing to {}", out.display());
    Ok(run)
}

fn feature_cache() -> Result<Option<FeatureCache>> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => Ok(Some(FeatureCache::new(Path::new(&dir))?)),
        _ => Ok(None),
    }
}

fn image_store(dataset: &Dataset) -> Result<ImageStore> {
    let dir = dataset
        .image_dir()
        .ok_or_else(|| Error::Data("dataset has no paired images".into()))?;
    Ok(ImageStore::open(&dir)?)
}

fn extractor(args: &ExtractorArgs) -> Result<ConvBackbone> {
    Ok(match &args.extractor {
        Some(path) => ConvBackbone::load(path)?,
        None => ConvBackbone::tiny(args.extractor_seed)?,
    })
}

fn extractor_inputs(args: &ExtractorArgs) -> Vec<(&'static str, &Path)> {
    args.extractor.iter().map(|p| ("extractor", p.as_path())).collect()
}

fn report(run: &RunDir, name: &str, mut r: MetricReport, dataset: Option<&Dataset>, checkpoint: Option<String>) -> Result<()> {
    r.dataset_hash = dataset.map(|d| d.content_hash().to_string());
    r.checkpoint_hash = checkpoint;
    log::info!("{name}: {}", r.value);
    r.write(&run.reports().join(format!("{name}.json")))?;
    Ok(())
}

fn paired_ids(split: &SplitData) -> Result<Vec<String>> {
    split
        .image_ids
        .iter()
        .zip(&split.ids)
        .map(|(img, id)| {
            img.clone()
                .ok_or_else(|| Error::Data(format!("record {id} has no paired image")).into())
        })
        .collect()
}

pub fn make_synthetic(args: &MakeSyntheticArgs, fast: bool) -> Result<()> {
    let run = start(&args.common.out, "make-synthetic", fast, args, &[])?;
    let spec = SyntheticSpec {
        class_separation: args.separation,
        noise_scale: args.noise,
        seed: args.common.seed,
        images: args.image_size.map(|image_size| SyntheticImages {
            image_size,
            latent_coupling: args.coupling,
        }),
        labeled: !args.unlabeled,
        ..SyntheticSpec::new(args.classes, args.channels, args.timesteps, args.per_class)
    };
    let dest = run.root().join("data");
    let manifest = write_synthetic(&spec, &dest, &args.name)?;
    log::info!(
        "wrote {} records of {}x{} to {}",
        manifest.total_records(),
        manifest.channels,
        manifest.timesteps,
        dest.display()
    );
    Ok(())
}

fn train_config(t: &TrainingArgs, seed: u64, run: &RunDir) -> TrainConfig {
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.lr,
        optimizer: t.optimizer,
        seed,
        checkpoint_every: t.checkpoint_every,
        checkpoint_dir: (t.checkpoint_every > 0).then(|| run.checkpoints()),
    }
}

/// Runs the chosen regime on `encoder` and writes checkpoints, history and
/// the final-epoch report.
fn fit_encoder(mut encoder: Encoder, dataset: &Dataset, t: &TrainingArgs, seed: u64, run: &RunDir) -> Result<()> {
    let cfg = train_config(t, seed, run);
    let dataset = if t.exclude_classes.is_empty() {
        dataset.clone()
    } else {
        dataset.excluding_classes(&t.exclude_classes)
    };
    let (history, metric): (History, &str) = match t.regime {
        Regime::Triplet => {
            encoder.set_normalize_output(true);
            let triplet = TripletConfig {
                margin: t.margin,
                mining: t.mining,
            };
            (train_triplet(&mut encoder, &dataset, &triplet, &cfg)?, "kmeans")
        }
        Regime::Supervised => {
            encoder.set_normalize_output(false);
            let classes = dataset.manifest.num_classes;
            let mut head = ClassifierHead::new(encoder.config().embed_dim, classes, derive_seed(seed, "head", 0))?;
            let h = train_supervised(&mut encoder, &mut head, &dataset, &cfg)?;
            head.to_checkpoint()?.save(&run.checkpoints().join("head.ckpt"))?;
            (h, "accuracy")
        }
    };
    history.write_csv(&run.logs().join("history.csv"))?;
    let hash = encoder.save(&run.checkpoints().join("encoder.ckpt"))?;
    let last = history
        .last()
        .ok_or_else(|| Error::Config("training ran no epochs".into()))?;
    let config = json!({ "regime": t.regime, "epoch": last.epoch, "train": last.train_metric });
    report(
        run,
        &format!("val_{metric}"),
        MetricReport::new(&format!("val_{metric}"), last.val_metric, config),
        Some(&dataset),
        Some(hash),
    )
}

fn default_encoder(kind: EncoderKind, dataset: &Dataset) -> EncoderConfig {
    let (c, t) = (dataset.manifest.channels, dataset.manifest.timesteps);
    match kind {
        EncoderKind::Lstm => EncoderConfig::lstm(c, t),
        EncoderKind::Cnn => EncoderConfig::cnn(c, t),
    }
}

pub fn train_encoder(args: &TrainEncoderArgs, fast: bool) -> Result<()> {
    let run = start(&args.common.out, "train-encoder", fast, args, &[("data", &args.data)])?;
    let dataset = Dataset::open(&args.data)?;
    let config = EncoderConfig {
        embed_dim: args.embed_dim,
        ..default_encoder(args.kind, &dataset)
    }
    .with_normalize(args.train.regime == Regime::Triplet);
    let encoder = Encoder::build(&config, derive_seed(args.common.seed, "encoder-init", 0))?;
    fit_encoder(encoder, &dataset, &args.train, args.common.seed, &run)
}

pub fn finetune(args: &FinetuneArgs, fast: bool) -> Result<()> {
    let inputs = [("data", args.data.as_path()), ("encoder", args.encoder.as_path())];
    let run = start(&args.common.out, "finetune", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let encoder = Encoder::load(&args.encoder)?;
    log::info!("starting from {} ({} prior regimes)", args.encoder.display(), encoder.trails().len());
    fit_encoder(encoder, &dataset, &args.train, args.common.seed, &run)
}

pub fn train_clip(args: &TrainClipArgs, fast: bool) -> Result<()> {
    let mut inputs = vec![("data", args.data.as_path())];
    inputs.extend(args.encoder.iter().map(|p| ("encoder", p.as_path())));
    inputs.extend(extractor_inputs(&args.extractor));
    let run = start(&args.common.out, "train-clip", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let images = image_store(&dataset)?;
    let extractor = extractor(&args.extractor)?;
    let cache = feature_cache()?;
    let encoder = match &args.encoder {
        Some(path) => Encoder::load(path)?,
        None => Encoder::build(&default_encoder(args.kind, &dataset), derive_seed(args.common.seed, "encoder-init", 0))?,
    };
    let config = ClipConfig {
        temperature: args.temperature,
        learnable_temperature: !args.fixed_temperature,
        projection_dim: args.projection_dim,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        optimizer: args.optimizer,
        seed: args.common.seed,
    };
    let mut model = ClipModel::new(encoder, extractor.feature_dim(), config)?;
    let digest_before = extractor.digest()?;
    let history = fit_clip(&mut model, &extractor, &dataset, &images, cache.as_ref())?;
    let digest_after = extractor.digest()?;
    if digest_before != digest_after {
        return Err(Error::Precondition("image extractor weights changed during training".into()).into());
    }
    history.write_csv(&run.logs().join("history.csv"))?;
    let hash = model.save(&run.checkpoints().join("clip.ckpt"))?;
    model.encoder().save(&run.checkpoints().join("encoder.ckpt"))?;

    let last = history
        .records
        .last()
        .ok_or_else(|| Error::Config("training ran no epochs".into()))?;
    let config = json!({ "epoch": last.epoch, "temperature": last.temperature, "extractor_digest": digest_after });
    report(&run, "val_top1", MetricReport::new("val_top1", last.val_top1, config), Some(&dataset), Some(hash.clone()))?;

    // rank every test image for every test record
    if let Ok(test) = dataset.split("test") {
        if !test.is_empty() {
            let ids = paired_ids(test)?;
            let index = build_index(&model, &extractor, &images, &ids, cache.as_ref())?;
            index.save(&run.checkpoints().join("index"))?;
            let queries = model.embed_eeg_rows(&test.signals, test.len())?;
            let mut ranked = BTreeMap::new();
            for (q, id) in queries.iter().zip(&test.ids) {
                ranked.insert(id.to_string(), index.retrieve(q, index.len())?);
            }
            write_ranked_csv(&run.reports().join("ranked_test.csv"), &ranked)?;
            let rel_path = run.reports().join("relevance_test.csv");
            let mut wtr = csv::Writer::from_path(&rel_path)?;
            wtr.write_record(["query_id", "image_id"])?;
            for (id, img) in test.ids.iter().zip(&ids) {
                wtr.write_record([id.to_string().as_str(), img.as_str()])?;
            }
            wtr.flush()?;
        }
    }
    Ok(())
}

fn gan_condition_rows(conditioner: &Conditioner<'_>, split: &SplitData) -> Result<Vec<Vec<f32>>> {
    Ok(conditioner.conditions(split)?)
}

/// Grid of `records × samples` images written as `images/<stem>.png` plus
/// its sidecar CSV.
fn write_grid(run: &RunDir, stem: &str, g: &Generator, conds: &[Vec<f32>], split: &SplitData, samples: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    let mut all_conds = Vec::new();
    let mut seeds = Vec::new();
    let mut cells = Vec::new();
    for (row, cond) in conds.iter().enumerate() {
        for col in 0..samples {
            let s = derive_seed(seed, stem, (row * samples + col) as u64);
            all_conds.push(cond.clone());
            seeds.push(s);
            cells.push(MosaicCell {
                row,
                col,
                class: split.labels[row],
                eeg_record_id: split.ids[row].to_string(),
                seed: s,
            });
        }
    }
    let images = synthesize_images(g, &all_conds, &seeds)?;
    save_mosaic(
        &run.images().join(format!("{stem}.png")),
        &run.images().join(format!("{stem}.csv")),
        &images,
        &cells,
        samples,
    )?;
    Ok(images)
}

fn first_records(split: &SplitData, count: usize) -> SplitData {
    let n = count.min(split.len());
    let records: Vec<_> = (0..n).map(|i| split.record(i)).collect();
    SplitData::from_records(&records, split.record_len)
}

pub fn train_gan(args: &TrainGanArgs, fast: bool) -> Result<()> {
    let mut inputs = vec![("data", args.data.as_path())];
    inputs.extend(args.encoder.iter().map(|p| ("encoder", p.as_path())));
    let run = start(&args.common.out, "train-gan", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let encoder = match (&args.condition, &args.encoder) {
        (Condition::Eeg, Some(path)) => Some(Encoder::load(path)?),
        (Condition::Eeg, None) => return Err(Error::Config("--condition eeg needs --encoder".into()).into()),
        (Condition::OneHot, _) => None,
    };
    let conditioner = match &encoder {
        Some(enc) => Conditioner::Eeg(enc),
        None => {
            dataset.require_labels("one-hot conditioning")?;
            Conditioner::OneHot {
                num_classes: dataset.manifest.num_classes,
            }
        }
    };
    let images = image_store(&dataset)?;
    let config = GanConfig {
        image_size: args.image_size,
        condition_mode: conditioner.mode(),
        noise_dim: args.noise_dim,
        steps: args.steps,
        batch_size: args.batch_size,
        lr_g: args.lr_g,
        lr_d: args.lr_d,
        ada_enabled: !args.no_ada,
        ada_target: args.ada_target,
        ada_step: args.ada_step,
        r1_gamma: args.r1_gamma,
        eval_every: args.eval_every,
        eval_samples: args.eval_samples,
        seed: args.common.seed,
        ..GanConfig::default()
    };
    let outcome = fit_gan(&dataset, &images, &conditioner, &config)?;
    outcome.history.write_csv(&run.logs().join("history.csv"))?;
    let encoder_hash = args.encoder.as_deref().map(sha256_file).transpose()?;
    let meta = generator_meta(&config, encoder_hash.as_deref(), dataset.content_hash());
    let hash = outcome
        .generator
        .save(&run.checkpoints().join("generator.ckpt"), meta)?;

    let initial = outcome.history.initial_fid().unwrap_or(f64::NAN);
    let last = outcome.history.final_fid().unwrap_or(f64::NAN);
    let config_json = json!({ "initial_fid": initial, "steps": args.steps, "ada_p": outcome.ada.p });
    report(&run, "fid", MetricReport::new("fid", last, config_json), Some(&dataset), Some(hash))?;

    let split = dataset
        .split("test")
        .ok()
        .filter(|s| !s.is_empty())
        .unwrap_or(dataset.split("train")?);
    let shown = first_records(split, 8);
    let conds = gan_condition_rows(&conditioner, &shown)?;
    write_grid(&run, "samples", &outcome.generator, &conds, &shown, 4, args.common.seed)?;
    Ok(())
}

pub fn synthesize(args: &SynthesizeArgs, fast: bool) -> Result<()> {
    let mut inputs = vec![("generator", args.generator.as_path()), ("data", args.data.as_path())];
    inputs.extend(args.encoder.iter().map(|p| ("encoder", p.as_path())));
    let run = start(&args.common.out, "synthesize", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let (generator, meta) = Generator::load(&args.generator)?;
    let mode: ConditionMode = serde_json::from_value(meta["condition_mode"].clone())
        .map_err(|_| Error::Data("generator checkpoint lacks a condition mode".into()))?;
    let shown = first_records(dataset.split(&args.split)?, args.count);
    if shown.is_empty() {
        return Err(Error::Data(format!("split `{}` is empty", args.split)).into());
    }
    let conds = match mode {
        ConditionMode::EegFeature => {
            let path = args
                .encoder
                .as_ref()
                .ok_or_else(|| Error::Config("an EEG-conditioned generator needs --encoder".into()))?;
            Encoder::load(path)?.encode_split(&shown, 256)?.rows
        }
        ConditionMode::OneHot => {
            dataset.require_labels("one-hot conditioning")?;
            shown
                .labels
                .iter()
                .map(|&l| one_hot(l, generator.shape().cond_dim))
                .collect()
        }
    };
    let images = write_grid(&run, "mosaic", &generator, &conds, &shown, args.samples, args.common.seed)?;
    let dir = run.images().join("samples");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, img) in images.iter().enumerate() {
        let (row, col) = (i / args.samples, i % args.samples);
        save_png(&dir.join(format!("r{}_s{col}.png", shown.ids[row])), img)?;
    }
    log::info!("wrote {} images", images.len());
    Ok(())
}

pub fn translate_image(args: &TranslateImageArgs, fast: bool) -> Result<()> {
    let mut inputs = vec![("data", args.data.as_path()), ("encoder", args.encoder.as_path())];
    inputs.extend(args.generator.iter().map(|p| ("generator", p.as_path())));
    inputs.extend(extractor_inputs(&args.extractor));
    let run = start(&args.common.out, "translate-image", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let images = image_store(&dataset)?;
    let extractor = extractor(&args.extractor)?;
    let encoder = Encoder::load(&args.encoder)?;
    let cache = feature_cache()?;
    let fit = fit_image_to_eeg(&extractor, &encoder, &dataset, &images, args.holdout, args.common.seed, cache.as_ref())?;
    let hash = fit.translator.save(&run.checkpoints().join("translator.ckpt"))?;
    let config = json!({ "train_records": fit.train_records, "heldout_records": fit.heldout_records });
    report(&run, "translator_mse", MetricReport::new("translator_mse", fit.heldout_mse, config), Some(&dataset), Some(hash))?;

    let test = dataset.split("test")?;
    let ids = paired_ids(test)?;
    let mut translated = EmbeddingBatch {
        labels: test.labels.clone(),
        record_ids: test.ids.clone(),
        subjects: test.subjects.clone(),
        ..EmbeddingBatch::default()
    };
    for id in &ids {
        translated.rows.push(translate(&extractor, &fit.translator, images.load(id)?.as_ref())?);
    }
    write_embeddings(&translated, &run.reports().join("translated_test.csv"))?;

    if let Some(path) = &args.generator {
        let (generator, _) = Generator::load(path)?;
        let shown = first_records(test, 8);
        let conds = &translated.rows[..shown.len()];
        write_grid(&run, "translated", &generator, conds, &shown, 4, args.common.seed)?;
    }
    Ok(())
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, metric: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("metric `{metric}` needs {flag}")).into())
}

fn numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let row = rec?
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Data(format!("{}: row {} is not numeric", path.display(), line + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Feature rows from a headerless CSV, or extractor features of every PNG in
/// a directory (sorted by file name).
fn sample_features(path: &Path, extractor: &dyn ImageFeatureExtractor) -> Result<Vec<Vec<f64>>> {
    if !path.is_dir() {
        return numeric_rows(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for chunk in files.chunks(64) {
        let imgs = chunk.iter().map(|p| load_png(p)).collect::<eegvis::Result<Vec<_>>>()?;
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        for f in extractor.extract_batch(&refs)? {
            out.push(f.into_iter().map(f64::from).collect());
        }
    }
    Ok(out)
}

fn ranked_results(ranked: &Path, relevance: &Path) -> Result<Vec<RankedResult>> {
    let mut relevant: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(relevance)?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Data(format!("{}: rows need query_id,image_id", relevance.display())).into());
        }
        relevant.entry(rec[0].to_string()).or_default().insert(rec[1].to_string());
    }
    let mut lists: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(ranked)?;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Data(format!("{}: rows need query_id,rank,image_id", ranked.display())).into());
        }
        let rank: usize = rec[1]
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad rank `{}`", ranked.display(), &rec[1])))?;
        lists.entry(rec[0].to_string()).or_default().push((rank, rec[2].to_string()));
    }
    let empty = BTreeSet::new();
    lists
        .into_iter()
        .map(|(q, mut items)| {
            items.sort();
            let rel = relevant.get(&q).unwrap_or(&empty);
            let flags = items.iter().map(|(_, id)| rel.contains(id)).collect();
            Ok(RankedResult::new(q, items.into_iter().map(|(_, id)| id).collect(), flags)?)
        })
        .collect()
}

pub fn evaluate(args: &EvaluateArgs, fast: bool) -> Result<()> {
    let mut inputs: Vec<(&str, &Path)> = Vec::new();
    for (name, p) in [
        ("embeddings", &args.embeddings),
        ("test_embeddings", &args.test_embeddings),
        ("ranked", &args.ranked),
        ("relevance", &args.relevance),
        ("probs", &args.probs),
        ("real", &args.real),
        ("fake", &args.fake),
        ("extractor", &args.extractor.extractor),
    ] {
        if let Some(p) = p {
            inputs.push((name, p.as_path()));
        }
    }
    let run = start(&args.common.out, "evaluate", fast, args, &inputs)?;
    let seed = args.common.seed;
    let metrics: BTreeSet<Metric> = args.metrics.iter().copied().collect();
    let mut summary = BTreeMap::new();
    let mut put = |name: &str, r: MetricReport| -> Result<()> {
        summary.insert(name.to_string(), r.value);
        report(&run, name, r, None, None)
    };

    let embeddings = |flag: &str, p: &Option<PathBuf>, metric: &str| -> Result<EmbeddingBatch> {
        Ok(read_embeddings(require(p, flag, metric)?)?)
    };
    for &metric in &metrics {
        match metric {
            Metric::Kmeans => {
                let e = embeddings("--embeddings", &args.embeddings, "kmeans")?;
                let k = args
                    .k
                    .unwrap_or_else(|| e.labels.iter().collect::<BTreeSet<_>>().len());
                let cfg = KMeansConfig {
                    seed,
                    ..KMeansConfig::default()
                };
                let acc = kmeans_accuracy(&e.to_f64(), &e.labels, k, &cfg)?;
                put("kmeans", MetricReport::new("kmeans", acc, json!({ "k": k, "points": e.len() })))?;
            }
            Metric::Svm | Metric::Knn => {
                let name = if metric == Metric::Svm { "svm" } else { "knn" };
                let train = embeddings("--embeddings", &args.embeddings, name)?;
                let test = embeddings("--test-embeddings", &args.test_embeddings, name)?;
                let (tr, te) = (train.to_f64(), test.to_f64());
                let (acc, config) = if metric == Metric::Svm {
                    let cfg = LinearProbeConfig {
                        seed,
                        ..LinearProbeConfig::default()
                    };
                    let acc = linear_probe_accuracy(&tr, &train.labels, &te, &test.labels, &cfg)?;
                    (acc, json!({ "lambda": cfg.lambda }))
                } else {
                    let acc = knn_accuracy(&tr, &train.labels, &te, &test.labels, args.knn_k)?;
                    (acc, json!({ "k": args.knn_k }))
                };
                put(name, MetricReport::new(name, acc, config))?;
            }
            Metric::Topk | Metric::Mrr | Metric::Map => {
                let name = match metric {
                    Metric::Topk => "topk",
                    Metric::Mrr => "mrr",
                    _ => "map",
                };
                let results = ranked_results(
                    require(&args.ranked, "--ranked", name)?,
                    require(&args.relevance, "--relevance", name)?,
                )?;
                let queries = json!({ "queries": results.len() });
                match metric {
                    Metric::Topk => {
                        for (k, v) in topk_accuracy(&results, &args.ks)? {
                            let n = format!("top{k}");
                            put(&n, MetricReport::new(&n, v, queries.clone()))?;
                        }
                    }
                    Metric::Mrr => put("mrr", MetricReport::new("mrr", mean_reciprocal_rank(&results)?, queries))?,
                    _ => put("map", MetricReport::new("map", mean_average_precision(&results)?, queries))?,
                }
            }
            Metric::Is => {
                let probs = numeric_rows(require(&args.probs, "--probs", "is")?)?;
                let (mean, std) = inception_score(&probs, args.is_splits)?;
                let r = MetricReport::new("is", mean, json!({ "splits": args.is_splits, "rows": probs.len() }));
                put("is", r.with_std(std))?;
            }
            Metric::Fid | Metric::Kid => {
                let name = if metric == Metric::Fid { "fid" } else { "kid" };
                let ex = extractor(&args.extractor)?;
                let real = sample_features(require(&args.real, "--real", name)?, &ex)?;
                let fake = sample_features(require(&args.fake, "--fake", name)?, &ex)?;
                let counts = json!({ "real": real.len(), "fake": fake.len() });
                if metric == Metric::Fid {
                    let v = fid(&GaussianStats::from_features(&real)?, &GaussianStats::from_features(&fake)?)?;
                    put("fid", MetricReport::new("fid", v, counts))?;
                } else {
                    let (mean, std) = kid(&real, &fake, args.kid_subset_size, args.kid_subsets, seed)?;
                    put("kid", MetricReport::new("kid", mean, counts).with_std(std))?;
                }
            }
        }
    }
    write_json(&run.reports().join("summary.json"), &summary)
}

pub fn zero_shot(args: &ZeroShotArgs, fast: bool) -> Result<()> {
    let inputs = [("data", args.data.as_path()), ("encoder", args.encoder.as_path())];
    let run = start(&args.common.out, "zero-shot", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let encoder = Encoder::load(&args.encoder)?;
    let mut config = ZeroShotConfig::new(args.holdout.clone());
    config.knn_k = args.knn_k;
    config.kmeans.seed = args.common.seed;
    config.probe.seed = args.common.seed;
    let result = zero_shot_protocol(&dataset, &encoder, &config)?;
    write_json(&run.reports().join("zero_shot.json"), &result)?;
    let hash = sha256_file(&args.encoder)?;
    let base = json!({ "holdout_classes": result.holdout_classes, "probe_test_records": result.probe_test_records });
    for (name, value) in [("kmeans", result.kmeans), ("svm", result.svm), ("knn", result.knn)] {
        let n = format!("zero_shot_{name}");
        report(&run, &n, MetricReport::new(&n, value, base.clone()), Some(&dataset), Some(hash.clone()))?;
    }
    Ok(())
}

pub fn export_embeddings(args: &ExportArgs, fast: bool) -> Result<()> {
    let inputs = [("data", args.data.as_path()), ("encoder", args.encoder.as_path())];
    let run = start(&args.common.out, "export-embeddings", fast, args, &inputs)?;
    let dataset = Dataset::open(&args.data)?;
    let encoder = Encoder::load(&args.encoder)?;
    let names: Vec<String> = if args.split == "all" {
        dataset.split_names().map(str::to_string).collect()
    } else {
        vec![args.split.clone()]
    };
    for name in names {
        let path = run.reports().join(format!("embeddings_{name}.csv"));
        let batch = write_split_embeddings(&encoder, dataset.split(&name)?, &path)?;
        log::info!("exported {} embeddings of split `{name}`", batch.len());
    }
    Ok(())
}
