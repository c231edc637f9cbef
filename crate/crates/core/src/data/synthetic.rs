use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::container::{write_container, EegRecord};
use super::images::{render_class_image, save_png};
use super::manifest::{DatasetManifest, FORMAT_VERSION};
use crate::error::{Error, Result};

/// Paired-image options for synthetic containers.
///
/// Each record gets its own image whose shape encodes the class and whose
/// position, size and brightness encode a per-record latent in `[-1,1]^4`.
/// The same latent is mixed into the EEG signal through fixed random
/// patterns scaled by `latent_coupling`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImages {
    pub image_size: usize,
    pub latent_coupling: f32,
}

/// Desk-scale class-template-plus-noise dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub records_per_class: usize,
    pub class_separation: f32,
    pub noise_scale: f32,
    pub seed: u64,
    #[serde(default)]
    pub images: Option<SyntheticImages>,
    /// When false every label is written as 0 and the manifest is marked
    /// unlabeled; splits are still stratified by the hidden class.
    #[serde(default = "default_true")]
    pub labeled: bool,
}

fn default_true() -> bool {
    true
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, channels: usize, timesteps: usize, records_per_class: usize) -> Self {
        Self {
            num_classes,
            channels,
            timesteps,
            records_per_class,
            class_separation: 5.0,
            noise_scale: 0.1,
            seed: 0,
            images: None,
            labeled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.channels == 0 || self.timesteps == 0 || self.records_per_class == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::Config("class_separation must be > 0".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise_scale must be >= 0".into()));
        }
        if let Some(img) = &self.images {
            if img.image_size < 8 || !img.image_size.is_power_of_two() {
                return Err(Error::Config("synthetic image_size must be a power of two >= 8".into()));
            }
        }
        Ok(())
    }
}

const SUBJECTS: usize = 4;

fn normals(rng: &mut impl Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * scale).collect()
}

/// Writes a synthetic EEGPACK container to `dest` with a stratified 80/10/10
/// train/val/test split. Deterministic in `spec.seed`.
pub fn make_synthetic(spec: &SyntheticSpec, dest: &Path, name: &str) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut rng = crate::seeded_rng(spec.seed);
    let len = spec.channels * spec.timesteps;
    let templates: Vec<Vec<f32>> = (0..spec.num_classes)
        .map(|_| normals(&mut rng, len, spec.class_separation))
        .collect();
    let bases: Vec<Vec<f32>> = match &spec.images {
        Some(_) => (0..4).map(|_| normals(&mut rng, len, 1.0)).collect(),
        None => Vec::new(),
    };

    let image_dir = dest.join("images");
    if spec.images.is_some() {
        std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    }

    let mut splits: BTreeMap<String, Vec<EegRecord>> = ["train", "val", "test"]
        .iter()
        .map(|s| (s.to_string(), Vec::new()))
        .collect();
    for (class, template) in templates.iter().enumerate() {
        let mut class_records = Vec::with_capacity(spec.records_per_class);
        for r in 0..spec.records_per_class {
            let id = (class * spec.records_per_class + r) as u64;
            let mut signal = template.clone();
            let mut image_id = None;
            if let Some(img) = &spec.images {
                let latent: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0f32..1.0));
                for (u, basis) in latent.iter().zip(&bases) {
                    for (s, b) in signal.iter_mut().zip(basis) {
                        *s += img.latent_coupling * u * b;
                    }
                }
                let key = format!("img{id:06}");
                save_png(
                    &image_dir.join(format!("{key}.png")),
                    &render_class_image(class, &latent, img.image_size),
                )?;
                image_id = Some(key);
            }
            for (s, n) in signal.iter_mut().zip(normals(&mut rng, len, spec.noise_scale)) {
                *s += n;
            }
            class_records.push(EegRecord {
                id,
                signal,
                label: if spec.labeled { class } else { 0 },
                subject: (r % SUBJECTS) as u32,
                image_id,
            });
        }
        class_records.shuffle(&mut rng);
        let n = class_records.len();
        let n_train = (n as f64 * 0.8).round() as usize;
        let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        let mut it = class_records.into_iter();
        splits.get_mut("train").unwrap().extend(it.by_ref().take(n_train));
        splits.get_mut("val").unwrap().extend(it.by_ref().take(n_val));
        splits.get_mut("test").unwrap().extend(it);
    }
    for recs in splits.values_mut() {
        recs.sort_by_key(|r| r.id);
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        name: name.to_string(),
        channels: spec.channels,
        timesteps: spec.timesteps,
        num_classes: spec.num_classes,
        splits: BTreeMap::new(),
        image_root: spec.images.as_ref().map(|_| "images".to_string()),
        variant: Some("synthetic".into()),
        normalize: true,
        labeled: spec.labeled,
    };
    write_container(dest, &manifest, &splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().display().to_string();
                    out.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            seed: 7,
            ..SyntheticSpec::new(3, 14, 32, 100)
        }
    }

    #[test]
    fn byte_identical_for_same_seed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut s = spec();
        s.images = Some(SyntheticImages {
            image_size: 16,
            latent_coupling: 1.0,
        });
        make_synthetic(&s, a.path(), "syn").unwrap();
        make_synthetic(&s, b.path(), "syn").unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    }

    #[test]
    fn stratified_eighty_ten_ten() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic(&spec(), dir.path(), "syn").unwrap();
        assert_eq!(m.splits["train"].len(), 240);
        assert_eq!(m.splits["val"].len(), 30);
        assert_eq!(m.splits["test"].len(), 30);
        assert_eq!(m.total_records(), 300);
        let ds = Dataset::open(dir.path()).unwrap();
        for split in ["train", "val", "test"] {
            let s = ds.split(split).unwrap();
            for k in 0..3 {
                let n = s.labels.iter().filter(|&&l| l == k).count();
                assert_eq!(n, s.len() / 3, "class {k} in {split}");
            }
        }
    }

    #[test]
    fn zero_noise_records_identical_within_class() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec();
        s.noise_scale = 0.0;
        make_synthetic(&s, dir.path(), "syn").unwrap();
        let mut m = crate::data::load_manifest(dir.path()).unwrap();
        m.normalize = false;
        std::fs::write(dir.path().join("manifest.json"), m.to_json().unwrap()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let train = ds.split("train").unwrap();
        for i in 0..train.len() {
            for j in 0..train.len() {
                if train.labels[i] == train.labels[j] {
                    assert_eq!(train.signal(i), train.signal(j));
                }
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = spec();
        s.class_separation = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec();
        s.records_per_class = 0;
        assert!(s.validate().is_err());
    }
}
