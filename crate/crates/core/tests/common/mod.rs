#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use eegvis::data::{make_synthetic, Dataset, DatasetManifest, EegRecord, ImageStore, SyntheticImages, SyntheticSpec};

pub fn separable(classes: usize, per_class: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        class_separation: 5.0,
        noise_scale: 0.1,
        seed,
        ..SyntheticSpec::new(classes, 14, 32, per_class)
    }
}

pub fn paired(classes: usize, per_class: usize, image_size: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        channels: 8,
        seed,
        images: Some(SyntheticImages {
            image_size,
            latent_coupling: 1.0,
        }),
        ..SyntheticSpec::new(classes, 8, 32, per_class)
    }
}

pub fn open(spec: &SyntheticSpec, dir: &Path) -> Dataset {
    make_synthetic(spec, dir, "synthetic").unwrap();
    Dataset::open(dir).unwrap()
}

pub fn open_with_images(spec: &SyntheticSpec, dir: &Path) -> (Dataset, ImageStore) {
    let ds = open(spec, dir);
    let store = ImageStore::open(&ds.image_dir().unwrap()).unwrap();
    (ds, store)
}

/// Small in-memory dataset; `train_counts[k]` records of class k in train.
pub fn in_memory(train_counts: &[usize], channels: usize, timesteps: usize) -> Dataset {
    let len = channels * timesteps;
    let mut id = 0u64;
    let mut records = BTreeMap::new();
    let mut make = |label: usize| {
        id += 1;
        EegRecord {
            id,
            signal: (0..len).map(|i| ((i * (label + 1) + id as usize) % 7) as f32).collect(),
            label,
            subject: 0,
            image_id: None,
        }
    };
    let train: Vec<EegRecord> = train_counts
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| (0..n).map(move |_| k).collect::<Vec<_>>())
        .map(&mut make)
        .collect();
    let val: Vec<EegRecord> = (0..train_counts.len()).map(&mut make).collect();
    records.insert("train".to_string(), train);
    records.insert("val".to_string(), val);
    let manifest = DatasetManifest {
        format_version: 1,
        name: "mem".into(),
        channels,
        timesteps,
        num_classes: train_counts.len(),
        splits: BTreeMap::new(),
        image_root: None,
        variant: None,
        normalize: true,
        labeled: true,
    };
    Dataset::in_memory(manifest, records).unwrap()
}
