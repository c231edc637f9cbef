use serde::{Deserialize, Serialize};

use super::cluster::{kmeans_accuracy, KMeansConfig};
use super::probes::{knn_accuracy, linear_probe_accuracy, LinearProbeConfig};
use crate::data::{Dataset, SplitData};
use crate::encoders::{EmbeddingBatch, Encoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotConfig {
    pub holdout_classes: Vec<usize>,
    pub knn_k: usize,
    pub probe: LinearProbeConfig,
    pub kmeans: KMeansConfig,
}

impl ZeroShotConfig {
    pub fn new(holdout_classes: Vec<usize>) -> Self {
        Self {
            holdout_classes,
            knn_k: 5,
            probe: LinearProbeConfig::default(),
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub holdout_classes: Vec<usize>,
    pub kmeans: f64,
    pub svm: f64,
    pub knn: f64,
    pub probe_train_records: usize,
    pub probe_test_records: usize,
}

/// Fails when any training trail of `encoder` saw a held-out class.
pub fn audit_leakage(encoder: &Encoder, holdout: &[usize]) -> Result<()> {
    for trail in encoder.trails() {
        if let Some(c) = holdout.iter().find(|c| trail.classes_seen.contains(c)) {
            return Err(Error::Leakage(format!(
                "encoder was trained ({} regime, dataset {}) on held-out class {c}",
                trail.regime,
                &trail.dataset_hash[..trail.dataset_hash.len().min(12)]
            )));
        }
    }
    Ok(())
}

fn unseen_embeddings(encoder: &Encoder, split: &SplitData, holdout: &[usize]) -> Result<EmbeddingBatch> {
    let idx: Vec<usize> = (0..split.len()).filter(|&i| holdout.contains(&split.labels[i])).collect();
    let mut out = EmbeddingBatch::default();
    for chunk in idx.chunks(256) {
        out.rows.extend(encoder.encode(&split.gather_signals(chunk), chunk.len())?);
        for &i in chunk {
            out.labels.push(split.labels[i]);
            out.record_ids.push(split.ids[i]);
            out.subjects.push(split.subjects[i]);
        }
    }
    Ok(out)
}

/// Probes a frozen encoder on classes it never trained on.
///
/// Unseen-class records of the train and val splits fit the linear and kNN
/// probes; unseen-class test records are scored by all three probes
/// (k-means runs on the test records alone).
pub fn zero_shot_protocol(dataset: &Dataset, encoder: &Encoder, config: &ZeroShotConfig) -> Result<ZeroShotReport> {
    let holdout = &config.holdout_classes;
    if holdout.len() < 2 {
        return Err(Error::Config("zero-shot evaluation needs at least two held-out classes".into()));
    }
    if let Some(c) = holdout.iter().find(|&&c| c >= dataset.manifest.num_classes) {
        return Err(Error::Config(format!("held-out class {c} out of range")));
    }
    audit_leakage(encoder, holdout)?;

    let mut probe_train = EmbeddingBatch::default();
    for name in ["train", "val"] {
        if let Ok(split) = dataset.split(name) {
            let e = unseen_embeddings(encoder, split, holdout)?;
            probe_train.rows.extend(e.rows);
            probe_train.labels.extend(e.labels);
        }
    }
    let probe_test = unseen_embeddings(encoder, dataset.split("test")?, holdout)?;
    if probe_train.is_empty() || probe_test.is_empty() {
        return Err(Error::Data("held-out classes have no records to probe".into()));
    }
    let (train, test) = (probe_train.to_f64(), probe_test.to_f64());
    let k = probe_test.labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    Ok(ZeroShotReport {
        holdout_classes: holdout.clone(),
        kmeans: kmeans_accuracy(&test, &probe_test.labels, k, &config.kmeans)?,
        svm: linear_probe_accuracy(&train, &probe_train.labels, &test, &probe_test.labels, &config.probe)?,
        knn: knn_accuracy(&train, &probe_train.labels, &test, &probe_test.labels, config.knn_k)?,
        probe_train_records: train.len(),
        probe_test_records: test.len(),
    })
}
