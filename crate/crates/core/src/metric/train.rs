use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::mining::{mine, triplet_loss, TripletConfig};
use crate::data::{BatchIter, Dataset, SplitData};
use crate::encoders::{ClassifierHead, Encoder, TrainingTrail};
use crate::error::{Error, Result};
use crate::eval::{kmeans_accuracy, KMeansConfig};
use crate::nn::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::AdaptiveMoments,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        // zero is accepted so a run can be checked for leaving parameters untouched
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_dir".into()));
        }
        Ok(())
    }
}

/// One row of the training history.
///
/// For triplet training `train_metric`/`val_metric` are k-means accuracies;
/// for supervised training they are classification accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mined_fraction: f64,
    pub train_metric: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let records = rdr.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn labels_tensor(labels: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    Ok(Tensor::from_vec(v, labels.len(), &Device::Cpu)?)
}

fn seen_classes(dataset: &Dataset) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    for name in ["train", "val"] {
        if let Ok(split) = dataset.split(name) {
            seen.extend(split.classes());
        }
    }
    seen.into_iter().collect()
}

fn embedding_kmeans(encoder: &Encoder, split: &SplitData, seed: u64) -> Result<f64> {
    let emb = encoder.encode_split(split, 256)?;
    let k = split.classes().len();
    if k < 2 || split.len() < k {
        return Ok(f64::NAN);
    }
    let cfg = KMeansConfig {
        seed,
        ..KMeansConfig::default()
    };
    kmeans_accuracy(&emb.to_f64(), &emb.labels, k, &cfg)
}

fn checkpoint_due(cfg: &TrainConfig, epoch: usize) -> Option<&Path> {
    match &cfg.checkpoint_dir {
        Some(dir) if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 => Some(dir),
        _ => None,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains `encoder` with within-batch mined triplets. Batches whose mining
/// comes back empty are skipped; `mined_fraction` is the share of batches
/// that were not.
pub fn train_triplet(
    encoder: &mut Encoder,
    dataset: &Dataset,
    triplet: &TripletConfig,
    train: &TrainConfig,
) -> Result<History> {
    triplet.validate()?;
    train.validate()?;
    dataset.require_labels("triplet training")?;
    let split = dataset.split("train")?;
    let val = dataset.split("val").ok().filter(|s| !s.is_empty());
    let mut opt = Optimizer::new(train.optimizer, encoder.params().vars(), train.learning_rate)?;
    let mut history = History::default();

    for epoch in 0..train.epochs {
        let batch_seed = crate::derive_seed(train.seed, "triplet-batches", epoch as u64);
        let mut total = 0.0;
        let (mut used, mut seen) = (0usize, 0usize);
        for batch in BatchIter::new(split, train.batch_size, Some(batch_seed), true)? {
            seen += 1;
            let x = encoder.signals_tensor(&batch.signals, batch.len())?;
            let emb = encoder.forward(&x)?;
            let rows: Vec<Vec<f64>> = crate::nn::to_rows(&emb.detach())?
                .into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect();
            let triples = mine(&rows, &batch.labels, triplet);
            let loss = match triplet_loss(&emb, &triples, triplet.margin) {
                Ok(loss) => loss,
                Err(Error::EmptyTriplets) => continue,
                Err(e) => return Err(e),
            };
            total += loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            used += 1;
            opt.backward_step(&loss)?;
        }
        let metric_seed = crate::derive_seed(train.seed, "triplet-kmeans", epoch as u64);
        let record = EpochRecord {
            epoch,
            loss: if used > 0 { total / used as f64 } else { 0.0 },
            mined_fraction: used as f64 / seen as f64,
            train_metric: embedding_kmeans(encoder, split, metric_seed)?,
            val_metric: match val {
                Some(v) => embedding_kmeans(encoder, v, metric_seed)?,
                None => f64::NAN,
            },
        };
        log::info!(
            "triplet epoch {epoch}: loss {:.5} mined {:.2} train-kmeans {:.3} val-kmeans {:.3}",
            record.loss,
            record.mined_fraction,
            record.train_metric,
            record.val_metric
        );
        history.records.push(record);
        if let Some(dir) = checkpoint_due(train, epoch) {
            ensure_dir(dir)?;
            encoder.save(&dir.join(format!("encoder_epoch{:04}.ckpt", epoch + 1)))?;
        }
    }
    encoder.push_trail(TrainingTrail {
        regime: "triplet".into(),
        dataset_hash: dataset.content_hash().to_string(),
        classes_seen: seen_classes(dataset),
    });
    Ok(history)
}

/// Fraction of records whose arg-max prediction matches the label.
pub fn classification_accuracy(encoder: &Encoder, head: &ClassifierHead, split: &SplitData) -> Result<f64> {
    if split.is_empty() {
        return Ok(f64::NAN);
    }
    let indices: Vec<usize> = (0..split.len()).collect();
    let mut correct = 0usize;
    for idx in indices.chunks(256) {
        let x = encoder.signals_tensor(&split.gather_signals(idx), idx.len())?;
        let pred: Vec<u32> = head.logits(&encoder.forward(&x)?)?.argmax(1)?.to_vec1()?;
        correct += idx
            .iter()
            .zip(&pred)
            .filter(|(&i, &p)| split.labels[i] == p as usize)
            .count();
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Cross-entropy training of encoder and head together.
pub fn train_supervised(
    encoder: &mut Encoder,
    head: &mut ClassifierHead,
    dataset: &Dataset,
    train: &TrainConfig,
) -> Result<History> {
    train.validate()?;
    dataset.require_labels("supervised training")?;
    let split = dataset.split("train")?;
    if let Some(&max) = split.labels.iter().max() {
        if max >= head.num_classes() {
            return Err(Error::Data(format!(
                "label {max} exceeds head with {} classes",
                head.num_classes()
            )));
        }
    }
    let val = dataset.split("val").ok().filter(|s| !s.is_empty());
    let mut vars = encoder.params().vars();
    vars.extend(head.params().vars());
    let mut opt = Optimizer::new(train.optimizer, vars, train.learning_rate)?;
    let mut history = History::default();

    for epoch in 0..train.epochs {
        let batch_seed = crate::derive_seed(train.seed, "supervised-batches", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in BatchIter::new(split, train.batch_size, Some(batch_seed), false)? {
            let x = encoder.signals_tensor(&batch.signals, batch.len())?;
            let logits = head.logits(&encoder.forward(&x)?)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &labels_tensor(&batch.labels)?)?;
            total += loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            count += 1;
            opt.backward_step(&loss)?;
        }
        let record = EpochRecord {
            epoch,
            loss: total / count as f64,
            mined_fraction: 1.0,
            train_metric: classification_accuracy(encoder, head, split)?,
            val_metric: match val {
                Some(v) => classification_accuracy(encoder, head, v)?,
                None => f64::NAN,
            },
        };
        log::info!(
            "supervised epoch {epoch}: loss {:.5} train-acc {:.3} val-acc {:.3}",
            record.loss,
            record.train_metric,
            record.val_metric
        );
        history.records.push(record);
        if let Some(dir) = checkpoint_due(train, epoch) {
            ensure_dir(dir)?;
            encoder.save(&dir.join(format!("encoder_epoch{:04}.ckpt", epoch + 1)))?;
            head.to_checkpoint()?
                .save(&dir.join(format!("head_epoch{:04}.ckpt", epoch + 1)))?;
        }
    }
    encoder.push_trail(TrainingTrail {
        regime: "supervised".into(),
        dataset_hash: dataset.content_hash().to_string(),
        classes_seen: seen_classes(dataset),
    });
    Ok(history)
}
