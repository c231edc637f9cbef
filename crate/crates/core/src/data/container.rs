use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{container_root, manifest_path, read_manifest_unchecked, DatasetManifest};
use crate::error::{Error, Result};
use crate::hash::{f32_from_le_bytes, f32_le_bytes, ContentHasher};

/// One trial: a channels-first `C×N` signal plus its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecord {
    pub id: u64,
    /// Row-major `C×N`.
    pub signal: Vec<f32>,
    pub label: usize,
    pub subject: u32,
    pub image_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    record_index: u64,
    label: usize,
    subject: u32,
    image_id: String,
}

/// Writes an EEGPACK v1 container. The split lists of `manifest` are replaced
/// by the ids of `records`; the resulting manifest is returned.
pub fn write_container(
    dir: &Path,
    manifest: &DatasetManifest,
    records: &BTreeMap<String, Vec<EegRecord>>,
) -> Result<DatasetManifest> {
    let mut manifest = manifest.clone();
    manifest.splits = records
        .iter()
        .map(|(split, recs)| (split.clone(), recs.iter().map(|r| r.id).collect()))
        .collect();
    manifest.validate()?;
    let len = manifest.record_len();
    for recs in records.values() {
        for r in recs {
            check_record(&manifest, r.id, &r.signal, r.label, len)?;
        }
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, recs) in records {
        let blob: Vec<u8> = recs.iter().flat_map(|r| f32_le_bytes(&r.signal)).collect();
        let blob_path = DatasetManifest::blob_path(dir, split);
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;

        let labels_path = DatasetManifest::labels_path(dir, split);
        let mut w = csv::Writer::from_path(&labels_path)?;
        for r in recs {
            w.serialize(LabelRow {
                record_index: r.id,
                label: r.label,
                subject: r.subject,
                image_id: r.image_id.clone().unwrap_or_default(),
            })?;
        }
        w.flush().map_err(|e| Error::io(&labels_path, e))?;
    }
    let path = manifest_path(dir);
    fs::write(&path, manifest.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn check_record(m: &DatasetManifest, id: u64, signal: &[f32], label: usize, len: usize) -> Result<()> {
    if signal.len() != len {
        return Err(Error::Geometry(format!(
            "record {id} has {} values, expected {}x{}={len}",
            signal.len(),
            m.channels,
            m.timesteps
        )));
    }
    if label >= m.num_classes {
        return Err(Error::Data(format!(
            "record {id} has label {label} but num_classes is {}",
            m.num_classes
        )));
    }
    if let Some(pos) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "record {id} has a non-finite sample at offset {pos}"
        )));
    }
    Ok(())
}

fn read_label_rows(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<LabelRow>, _>>()?;
    Ok(rows)
}

pub(crate) fn check_split_files(
    root: &Path,
    manifest: &DatasetManifest,
    split: &str,
    ids: &[u64],
) -> Result<()> {
    let blob_path = DatasetManifest::blob_path(root, split);
    let size = fs::metadata(&blob_path).map_err(|e| Error::io(&blob_path, e))?.len();
    let expected = (ids.len() * manifest.record_len() * 4) as u64;
    if size != expected {
        return Err(Error::Geometry(format!(
            "{} holds {size} bytes, expected {} records of {}x{} f32 = {expected} bytes",
            blob_path.display(),
            ids.len(),
            manifest.channels,
            manifest.timesteps
        )));
    }
    let rows = read_label_rows(&DatasetManifest::labels_path(root, split))?;
    check_label_rows(manifest, split, ids, &rows)
}

fn check_label_rows(m: &DatasetManifest, split: &str, ids: &[u64], rows: &[LabelRow]) -> Result<()> {
    if rows.len() != ids.len() {
        return Err(Error::Geometry(format!(
            "split `{split}` lists {} records but its label table has {} rows",
            ids.len(),
            rows.len()
        )));
    }
    for (row, &id) in rows.iter().zip(ids) {
        if row.record_index != id {
            return Err(Error::Data(format!(
                "split `{split}`: label row for record {} where manifest lists {id}",
                row.record_index
            )));
        }
        if row.label >= m.num_classes {
            return Err(Error::Data(format!(
                "record {id} has label {} but num_classes is {}",
                row.label, m.num_classes
            )));
        }
    }
    Ok(())
}

/// Column-oriented records of one split.
#[derive(Debug, Clone, Default)]
pub struct SplitData {
    pub ids: Vec<u64>,
    /// `len × C × N`, row-major.
    pub signals: Vec<f32>,
    pub labels: Vec<usize>,
    pub subjects: Vec<u32>,
    pub image_ids: Vec<Option<String>>,
    pub record_len: usize,
}

impl SplitData {
    pub fn from_records(records: &[EegRecord], record_len: usize) -> Self {
        let mut out = SplitData {
            record_len,
            ..Default::default()
        };
        for r in records {
            out.push(r);
        }
        out
    }

    fn push(&mut self, r: &EegRecord) {
        self.ids.push(r.id);
        self.signals.extend_from_slice(&r.signal);
        self.labels.push(r.label);
        self.subjects.push(r.subject);
        self.image_ids.push(r.image_id.clone());
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn signal(&self, i: usize) -> &[f32] {
        &self.signals[i * self.record_len..(i + 1) * self.record_len]
    }

    pub fn record(&self, i: usize) -> EegRecord {
        EegRecord {
            id: self.ids[i],
            signal: self.signal(i).to_vec(),
            label: self.labels[i],
            subject: self.subjects[i],
            image_id: self.image_ids[i].clone(),
        }
    }

    /// Gathers the signals of `indices` into one contiguous `B×C×N` buffer.
    pub fn gather_signals(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.record_len);
        for &i in indices {
            out.extend_from_slice(self.signal(i));
        }
        out
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    fn filter(&self, keep: impl Fn(usize) -> bool) -> SplitData {
        let mut out = SplitData {
            record_len: self.record_len,
            ..Default::default()
        };
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.push(&self.record(i));
        }
        out
    }
}

/// A loaded container. Immutable once opened; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: Option<PathBuf>,
    splits: BTreeMap<String, SplitData>,
    content_hash: String,
    excluded_classes: Vec<usize>,
}

impl Dataset {
    /// Opens a container, validating geometry and rejecting non-finite records.
    pub fn open(path: &Path) -> Result<Self> {
        let root = container_root(path);
        let manifest = read_manifest_unchecked(&root)?;
        manifest.validate()?;
        let manifest_bytes =
            fs::read(manifest_path(&root)).map_err(|e| Error::io(manifest_path(&root), e))?;
        let mut hasher = ContentHasher::new();
        hasher.update(&manifest_bytes);

        let len = manifest.record_len();
        let mut splits = BTreeMap::new();
        for (split, ids) in &manifest.splits {
            check_split_files(&root, &manifest, split, ids)?;
            let blob_path = DatasetManifest::blob_path(&root, split);
            let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
            let labels_path = DatasetManifest::labels_path(&root, split);
            let label_bytes = fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
            hasher.update(split).update(&bytes).update(&label_bytes);

            let rows = read_label_rows(&labels_path)?;
            let mut signals = f32_from_le_bytes(&bytes);
            for (i, row) in rows.iter().enumerate() {
                let rec = &mut signals[i * len..(i + 1) * len];
                check_record(&manifest, row.record_index, rec, row.label, len)?;
                if manifest.normalize {
                    z_normalize(rec, manifest.channels, manifest.timesteps);
                }
            }
            let data = SplitData {
                ids: ids.clone(),
                signals,
                labels: rows.iter().map(|r| r.label).collect(),
                subjects: rows.iter().map(|r| r.subject).collect(),
                image_ids: rows
                    .iter()
                    .map(|r| (!r.image_id.is_empty()).then(|| r.image_id.clone()))
                    .collect(),
                record_len: len,
            };
            splits.insert(split.clone(), data);
        }
        Ok(Dataset {
            manifest,
            root: Some(root),
            splits,
            content_hash: hasher.finish(),
            excluded_classes: Vec::new(),
        })
    }

    /// Builds a dataset directly from records, without a backing container.
    pub fn in_memory(manifest: DatasetManifest, records: BTreeMap<String, Vec<EegRecord>>) -> Result<Self> {
        let mut manifest = manifest;
        manifest.splits = records
            .iter()
            .map(|(s, r)| (s.clone(), r.iter().map(|r| r.id).collect()))
            .collect();
        manifest.validate()?;
        let len = manifest.record_len();
        let mut hasher = ContentHasher::new();
        hasher.update(manifest.to_json()?);
        let mut splits = BTreeMap::new();
        for (split, recs) in &records {
            let mut recs = recs.clone();
            for r in &mut recs {
                check_record(&manifest, r.id, &r.signal, r.label, len)?;
                hasher.update(f32_le_bytes(&r.signal));
                if manifest.normalize {
                    z_normalize(&mut r.signal, manifest.channels, manifest.timesteps);
                }
            }
            splits.insert(split.clone(), SplitData::from_records(&recs, len));
        }
        Ok(Dataset {
            manifest,
            root: None,
            splits,
            content_hash: hasher.finish(),
            excluded_classes: Vec::new(),
        })
    }

    pub fn split(&self, name: &str) -> Result<&SplitData> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Data(format!("split `{name}` not present in `{}`", self.manifest.name)))
    }

    pub fn split_names(&self) -> impl Iterator<Item = &str> {
        self.splits.keys().map(String::as_str)
    }

    /// Hash of the container contents plus any class exclusions applied since.
    /// Errors unless the label column carries real classes.
    pub fn require_labels(&self, purpose: &str) -> Result<()> {
        if self.manifest.labeled {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "{purpose} needs class labels but dataset `{}` is unlabeled",
                self.manifest.name
            )))
        }
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn excluded_classes(&self) -> &[usize] {
        &self.excluded_classes
    }

    pub fn image_dir(&self) -> Option<PathBuf> {
        match (&self.root, &self.manifest.image_root) {
            (Some(root), Some(_)) => self.manifest.image_dir(root),
            _ => None,
        }
    }

    /// A view with every record of `classes` removed from all splits.
    pub fn excluding_classes(&self, classes: &[usize]) -> Dataset {
        let drop: BTreeSet<usize> = classes.iter().copied().collect();
        let splits: BTreeMap<String, SplitData> = self
            .splits
            .iter()
            .map(|(k, s)| (k.clone(), s.filter(|i| !drop.contains(&s.labels[i]))))
            .collect();
        let mut manifest = self.manifest.clone();
        for (k, s) in &splits {
            manifest.splits.insert(k.clone(), s.ids.clone());
        }
        let mut excluded: BTreeSet<usize> = self.excluded_classes.iter().copied().collect();
        excluded.extend(drop);
        let excluded: Vec<usize> = excluded.into_iter().collect();
        let mut hasher = ContentHasher::new();
        hasher.update(&self.content_hash).update(format!("exclude:{excluded:?}"));
        Dataset {
            manifest,
            root: self.root.clone(),
            splits,
            content_hash: hasher.finish(),
            excluded_classes: excluded,
        }
    }

    /// A copy with labels permuted across records within each split.
    pub fn with_shuffled_labels(&self, seed: u64) -> Dataset {
        use rand::seq::SliceRandom;
        let mut rng = crate::seeded_rng(seed);
        let mut out = self.clone();
        for s in out.splits.values_mut() {
            s.labels.shuffle(&mut rng);
        }
        let mut hasher = ContentHasher::new();
        hasher.update(&self.content_hash).update(format!("shuffle:{seed}"));
        out.content_hash = hasher.finish();
        out
    }

    /// Classes that appear in any split.
    pub fn classes(&self) -> BTreeSet<usize> {
        self.splits.values().flat_map(|s| s.labels.iter().copied()).collect()
    }
}

/// Per-channel zero mean, unit variance over time. Constant channels become zero.
pub(crate) fn z_normalize(signal: &mut [f32], channels: usize, timesteps: usize) {
    for c in 0..channels {
        let row = &mut signal[c * timesteps..(c + 1) * timesteps];
        let n = timesteps as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = if std > 1e-8 { 1.0 / std } else { 0.0 };
        for v in row.iter_mut() {
            *v = ((*v as f64 - mean) * scale) as f32;
        }
    }
}
