//! Joint EEG-image embedding trained with a symmetric contrastive loss
//! against a frozen image extractor, and the image retrieval index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::Linear;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{BatchIter, Dataset, ImageStore, SplitData};
use crate::encoders::{Encoder, ImageFeatureExtractor};
use crate::error::{Error, Result};
use crate::hash::{f32_from_le_bytes, f32_le_bytes, sha256_hex, ContentHasher};
use crate::nn::{self, Checkpoint, NamedArray, Optimizer, OptimizerKind, ParamStore};

pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const MAX_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub temperature: f64,
    pub learnable_temperature: bool,
    pub projection_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            learnable_temperature: true,
            projection_dim: 128,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::AdaptiveMoments,
            seed: 0,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.projection_dim == 0 || self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("projection_dim and epochs must be positive, batch_size >= 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn arange(n: usize) -> Result<Tensor> {
    Ok(Tensor::arange(0u32, n as u32, &Device::Cpu)?)
}

/// Mean of row-wise and column-wise cross-entropy of `logits` against the
/// diagonal.
pub fn symmetric_cross_entropy(logits: &Tensor) -> Result<Tensor> {
    let (b, b2) = logits.dims2()?;
    if b != b2 || b < 2 {
        return Err(Error::Precondition(format!("contrastive loss needs a square batch >= 2, got {b}x{b2}")));
    }
    let target = arange(b)?;
    let rows = candle_nn::loss::cross_entropy(logits, &target)?;
    let cols = candle_nn::loss::cross_entropy(&logits.t()?.contiguous()?, &target)?;
    Ok(((rows + cols)? * 0.5)?)
}

/// Symmetric contrastive loss of unit-norm `B×D` EEG and image embeddings.
pub fn clip_loss(eeg: &Tensor, img: &Tensor, temperature: f64) -> Result<Tensor> {
    if eeg.dims() != img.dims() {
        return Err(Error::Geometry(format!("embedding shapes differ: {:?} vs {:?}", eeg.dims(), img.dims())));
    }
    let sim = eeg.matmul(&img.t()?)?;
    symmetric_cross_entropy(&(sim / temperature)?)
}

/// EEG encoder plus one projection head per modality and a temperature.
#[derive(Debug, Clone)]
pub struct ClipModel {
    pub config: ClipConfig,
    encoder: Encoder,
    store: ParamStore,
    eeg_proj: Linear,
    img_proj: Linear,
    image_dim: usize,
    log_tau: Var,
}

impl ClipModel {
    pub fn new(encoder: Encoder, image_dim: usize, config: ClipConfig) -> Result<Self> {
        config.validate()?;
        Self::assemble(encoder, image_dim, config, ParamStore::new(DType::F32), None)
    }

    fn assemble(
        encoder: Encoder,
        image_dim: usize,
        config: ClipConfig,
        mut store: ParamStore,
        log_tau: Option<f64>,
    ) -> Result<Self> {
        let mut rng = crate::seeded_rng(crate::derive_seed(config.seed, "clip-heads", 0));
        let eeg_dim = encoder.config().embed_dim;
        let eeg_proj = nn::linear(&mut store, "eeg_proj", eeg_dim, config.projection_dim, &mut rng)?;
        let img_proj = nn::linear(&mut store, "img_proj", image_dim, config.projection_dim, &mut rng)?;
        store.finish()?;
        let init = log_tau.unwrap_or_else(|| config.temperature.clamp(MIN_TEMPERATURE, MAX_TEMPERATURE).ln());
        let log_tau = Var::from_tensor(&Tensor::new(init as f32, &Device::Cpu)?)?;
        Ok(Self {
            config,
            encoder,
            store,
            eeg_proj,
            img_proj,
            image_dim,
            log_tau,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn into_encoder(self) -> Encoder {
        self.encoder
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn temperature(&self) -> Result<f64> {
        Ok(self.log_tau.as_tensor().to_scalar::<f32>()?.exp() as f64)
    }

    fn trainable(&self) -> Vec<Var> {
        let mut vars = self.encoder.params().vars();
        vars.extend(self.store.vars());
        if self.config.learnable_temperature {
            vars.push(self.log_tau.clone());
        }
        vars
    }

    fn clamp_temperature(&self) -> Result<()> {
        let t = self.log_tau.as_tensor().to_scalar::<f32>()? as f64;
        let c = t.clamp(MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
        if c != t {
            self.log_tau.set(&Tensor::new(c as f32, &Device::Cpu)?)?;
        }
        Ok(())
    }

    /// Unit-norm joint embeddings of `B×C×N` signals.
    pub fn embed_eeg(&self, signals: &Tensor) -> Result<Tensor> {
        nn::l2_normalize(&self.eeg_proj.forward(&self.encoder.forward(signals)?)?)
    }

    /// Unit-norm joint embeddings of `B×F` precomputed image features.
    pub fn embed_image_features(&self, features: &Tensor) -> Result<Tensor> {
        nn::l2_normalize(&self.img_proj.forward(features)?)
    }

    fn logits(&self, eeg: &Tensor, img: &Tensor) -> Result<Tensor> {
        let sim = eeg.matmul(&img.t()?)?;
        Ok(sim.broadcast_mul(&self.log_tau.as_tensor().neg()?.exp()?)?)
    }

    pub fn embed_eeg_rows(&self, signals: &[f32], batch: usize) -> Result<Vec<Vec<f32>>> {
        let x = self.encoder.signals_tensor(signals, batch)?;
        nn::to_rows(&self.embed_eeg(&x)?.detach())
    }

    pub fn embed_feature_rows(&self, features: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let t = rows_tensor(features)?;
        nn::to_rows(&self.embed_image_features(&t)?.detach())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let enc = self.encoder.to_checkpoint()?;
        let mut tensors: Vec<NamedArray> = enc
            .tensors
            .into_iter()
            .map(|t| NamedArray {
                name: format!("encoder.{}", t.name),
                ..t
            })
            .collect();
        tensors.extend(self.store.snapshot()?);
        Ok(Checkpoint::new(
            "clip",
            json!({ "clip": self.config, "encoder": enc.config, "image_dim": self.image_dim }),
            json!({ "encoder_meta": enc.meta, "log_temperature": self.log_tau.as_tensor().to_scalar::<f32>()? }),
            tensors,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("clip")?;
        let config: ClipConfig = serde_json::from_value(ck.config["clip"].clone())?;
        let image_dim = ck.config["image_dim"]
            .as_u64()
            .ok_or_else(|| Error::Data("clip checkpoint lacks image_dim".into()))? as usize;
        let (enc_tensors, head_tensors): (Vec<_>, Vec<_>) =
            ck.tensors.iter().cloned().partition(|t| t.name.starts_with("encoder."));
        let enc_ck = Checkpoint::new(
            "encoder",
            ck.config["encoder"].clone(),
            ck.meta["encoder_meta"].clone(),
            enc_tensors
                .into_iter()
                .map(|t| NamedArray {
                    name: t.name["encoder.".len()..].to_string(),
                    ..t
                })
                .collect(),
        );
        let encoder = Encoder::from_checkpoint(&enc_ck, DType::F32)?;
        let log_tau = ck.meta["log_temperature"].as_f64();
        Self::assemble(
            encoder,
            image_dim,
            config,
            ParamStore::with_values(DType::F32, true, head_tensors),
            log_tau,
        )
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn rows_tensor(rows: &[Vec<f32>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?)
}

/// On-disk cache of extractor features keyed by extractor digest and image id.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, digest: &str, id: &str) -> PathBuf {
        self.dir.join(&digest[..digest.len().min(16)]).join(format!("{id}.f32"))
    }

    fn get(&self, digest: &str, id: &str, dim: usize) -> Option<Vec<f32>> {
        let bytes = std::fs::read(self.path(digest, id)).ok()?;
        let v = f32_from_le_bytes(&bytes);
        (v.len() == dim).then_some(v)
    }

    fn put(&self, digest: &str, id: &str, v: &[f32]) -> Result<()> {
        let path = self.path(digest, id);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, f32_le_bytes(v)).map_err(|e| Error::io(&path, e))
    }
}

/// Extractor features for each image id, computed in batches of 64 and
/// optionally served from `cache`.
pub fn image_features(
    extractor: &dyn ImageFeatureExtractor,
    images: &ImageStore,
    ids: &[String],
    cache: Option<&FeatureCache>,
) -> Result<Vec<Vec<f32>>> {
    let digest = extractor.digest()?;
    let dim = extractor.feature_dim();
    let mut out: Vec<Option<Vec<f32>>> = ids
        .iter()
        .map(|id| cache.and_then(|c| c.get(&digest, id, dim)))
        .collect();
    let missing: Vec<usize> = (0..ids.len()).filter(|&i| out[i].is_none()).collect();
    for chunk in missing.chunks(64) {
        let loaded = chunk.iter().map(|&i| images.load(&ids[i])).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = loaded.iter().map(|a| a.as_ref()).collect();
        let feats = extractor.extract_batch(&refs)?;
        for (&i, f) in chunk.iter().zip(feats) {
            if let Some(c) = cache {
                c.put(&digest, &ids[i], &f)?;
            }
            out[i] = Some(f);
        }
    }
    Ok(out.into_iter().map(|f| f.expect("filled above")).collect())
}

pub(crate) fn split_image_ids(split: &SplitData, name: &str) -> Result<Vec<String>> {
    split
        .image_ids
        .iter()
        .zip(&split.ids)
        .map(|(img, id)| {
            img.clone()
                .ok_or_else(|| Error::Data(format!("record {id} in split `{name}` has no paired image")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub temperature: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipHistory {
    pub records: Vec<ClipEpoch>,
}

impl ClipHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Pair-retrieval top-1 on consecutive chunks of `chunk` records: each EEG
/// query ranks the images of its chunk and scores when its own image wins.
pub fn pair_retrieval_top1(model: &ClipModel, split: &SplitData, features: &[Vec<f32>], chunk: usize) -> Result<f64> {
    if split.is_empty() {
        return Ok(f64::NAN);
    }
    let image_ids = split_image_ids(split, "eval")?;
    let indices: Vec<usize> = (0..split.len()).collect();
    let mut correct = 0usize;
    for idx in indices.chunks(chunk.max(1)) {
        let eeg = model.embed_eeg_rows(&split.gather_signals(idx), idx.len())?;
        let feats: Vec<Vec<f32>> = idx.iter().map(|&i| features[i].clone()).collect();
        let img = model.embed_feature_rows(&feats)?;
        for (qi, q) in eeg.iter().enumerate() {
            let best = img
                .iter()
                .enumerate()
                .map(|(j, g)| (j, q.iter().zip(g).map(|(a, b)| a * b).sum::<f32>()))
                .fold((0, f32::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
                .0;
            if image_ids[idx[best]] == image_ids[idx[qi]] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Trains the EEG encoder and both projection heads; the image extractor is
/// only ever read.
pub fn train_clip(
    model: &mut ClipModel,
    extractor: &dyn ImageFeatureExtractor,
    dataset: &Dataset,
    images: &ImageStore,
    cache: Option<&FeatureCache>,
) -> Result<ClipHistory> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if extractor.feature_dim() != model.image_dim {
        return Err(Error::Geometry(format!(
            "extractor yields {}-D features, model expects {}",
            extractor.feature_dim(),
            model.image_dim
        )));
    }
    let train = dataset.split("train")?;
    let train_feats = image_features(extractor, images, &split_image_ids(train, "train")?, cache)?;
    let val = dataset.split("val").ok().filter(|s| !s.is_empty());
    let val_feats = match val {
        Some(v) => Some(image_features(extractor, images, &split_image_ids(v, "val")?, cache)?),
        None => None,
    };

    let mut opt = Optimizer::new(cfg.optimizer, model.trainable(), cfg.learning_rate)?;
    let mut history = ClipHistory::default();
    for epoch in 0..cfg.epochs {
        let seed = crate::derive_seed(cfg.seed, "clip-batches", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in BatchIter::new(train, cfg.batch_size, Some(seed), false)? {
            if batch.len() < 2 {
                continue;
            }
            let x = model.encoder.signals_tensor(&batch.signals, batch.len())?;
            let feats: Vec<Vec<f32>> = batch.indices.iter().map(|&i| train_feats[i].clone()).collect();
            let eeg = model.embed_eeg(&x)?;
            let img = model.embed_image_features(&rows_tensor(&feats)?)?;
            let loss = symmetric_cross_entropy(&model.logits(&eeg, &img)?)?;
            total += loss.to_scalar::<f32>()? as f64;
            count += 1;
            opt.backward_step(&loss)?;
            model.clamp_temperature()?;
        }
        let record = ClipEpoch {
            epoch,
            loss: total / count.max(1) as f64,
            temperature: model.temperature()?,
            val_top1: match (val, &val_feats) {
                (Some(v), Some(f)) => pair_retrieval_top1(model, v, f, cfg.batch_size)?,
                _ => f64::NAN,
            },
        };
        log::info!(
            "clip epoch {epoch}: loss {:.4} tau {:.4} val top-1 {:.3}",
            record.loss,
            record.temperature,
            record.val_top1
        );
        history.records.push(record);
    }
    Ok(history)
}

/// Unit-norm image embeddings keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    keys: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    count: usize,
    dim: usize,
    hash: String,
}

impl RetrievalIndex {
    /// Rows must already have unit norm (within 1e-5).
    pub fn new(keys: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        if keys.len() != rows.len() {
            return Err(Error::Precondition("index keys and rows differ in count".into()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        for (k, r) in keys.iter().zip(&rows) {
            if r.len() != dim {
                return Err(Error::Geometry("index rows differ in dimension".into()));
            }
            let norm = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::Precondition(format!("index row `{k}` has norm {norm}")));
            }
        }
        Ok(Self {
            keys,
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Top-`k` gallery entries by cosine similarity, ties in index order.
    pub fn retrieve(&self, query: &[f32], k: usize) -> Result<Vec<(String, f32)>> {
        if self.is_empty() {
            return Err(Error::Precondition("retrieval index is empty".into()));
        }
        if k > self.len() {
            return Err(Error::Precondition(format!("k={k} exceeds gallery size {}", self.len())));
        }
        if query.len() != self.dim {
            return Err(Error::Geometry(format!("query has {} dims, index has {}", query.len(), self.dim)));
        }
        let qn = query.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let dot: f64 = self.row(i).iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
                (i, if qn > 0.0 { dot / qn } else { 0.0 })
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.keys[i].clone(), s as f32))
            .collect())
    }

    fn digest(&self) -> String {
        let mut h = ContentHasher::new();
        h.update(self.keys.join("\n").as_bytes());
        h.update(&f32_le_bytes(&self.data));
        h.finish()
    }

    /// Writes `keys.csv`, `gallery.f32` and `index.json`; returns the hash.
    pub fn save(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let keys_path = dir.join("keys.csv");
        let mut wtr = csv::Writer::from_path(&keys_path)?;
        wtr.write_record(["image_id"])?;
        for k in &self.keys {
            wtr.write_record([k])?;
        }
        wtr.flush().map_err(|e| Error::io(&keys_path, e))?;
        let blob = dir.join("gallery.f32");
        std::fs::write(&blob, f32_le_bytes(&self.data)).map_err(|e| Error::io(&blob, e))?;
        let meta = IndexMeta {
            count: self.len(),
            dim: self.dim,
            hash: self.digest(),
        };
        let meta_path = dir.join("index.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Ok(meta.hash)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("index.json");
        let meta: IndexMeta =
            serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
        let mut rdr = csv::Reader::from_path(dir.join("keys.csv"))?;
        let keys = rdr
            .records()
            .map(|r| Ok(r?[0].to_string()))
            .collect::<Result<Vec<String>>>()?;
        let blob = dir.join("gallery.f32");
        let data = f32_from_le_bytes(&std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?);
        if keys.len() != meta.count || data.len() != meta.count * meta.dim {
            return Err(Error::Data(format!("retrieval index at {} is inconsistent", dir.display())));
        }
        let index = Self {
            keys,
            dim: meta.dim,
            data,
        };
        let found = index.digest();
        if found != meta.hash {
            return Err(Error::HashMismatch {
                path: dir.to_path_buf(),
                expected: meta.hash,
                found,
            });
        }
        Ok(index)
    }
}

/// Embeds every distinct image of `ids` into a retrieval index.
pub fn build_index(
    model: &ClipModel,
    extractor: &dyn ImageFeatureExtractor,
    images: &ImageStore,
    ids: &[String],
    cache: Option<&FeatureCache>,
) -> Result<RetrievalIndex> {
    let unique: Vec<String> = ids
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let feats = image_features(extractor, images, &unique, cache)?;
    let rows = model.embed_feature_rows(&feats)?;
    RetrievalIndex::new(unique, rows)
}

/// Writes `query_id,rank,image_id,similarity` rows (rank is 1-based).
pub fn write_ranked_csv(path: &Path, results: &BTreeMap<String, Vec<(String, f32)>>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["query_id", "rank", "image_id", "similarity"])?;
    for (q, ranked) in results {
        for (r, (id, s)) in ranked.iter().enumerate() {
            wtr.write_record([q.as_str(), &(r + 1).to_string(), id.as_str(), &s.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Short content hash of an extractor's weights, for reports.
pub fn extractor_fingerprint(extractor: &dyn ImageFeatureExtractor) -> Result<String> {
    Ok(sha256_hex(extractor.digest()?.as_bytes()))
}
