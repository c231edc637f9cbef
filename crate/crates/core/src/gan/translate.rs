use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clip::{image_features, split_image_ids, FeatureCache};
use crate::data::{Dataset, ImageStore, ImageTensor};
use crate::encoders::{Encoder, ImageFeatureExtractor};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, NamedArray};

/// Affine map from image-feature space into EEG-feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translator {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim × input_dim`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    /// L2-normalize outputs, used when the EEG space is unit-norm.
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorFit {
    pub translator: Translator,
    pub train_records: usize,
    pub heldout_records: usize,
    /// Mean over held-out rows and dimensions of the squared error.
    pub heldout_mse: f64,
}

impl Translator {
    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.input_dim {
            return Err(Error::Geometry(format!(
                "translator expects {}-D image features, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut y: Vec<f32> = (0..self.output_dim)
            .map(|o| {
                let row = &self.weight[o * self.input_dim..(o + 1) * self.input_dim];
                let s: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
                (s + self.bias[o] as f64) as f32
            })
            .collect();
        if self.renormalize {
            let n = y.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
            y.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
        }
        Ok(y)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "translator",
            json!({ "input_dim": self.input_dim, "output_dim": self.output_dim, "renormalize": self.renormalize }),
            json!({}),
            vec![
                NamedArray {
                    name: "weight".into(),
                    shape: vec![self.output_dim, self.input_dim],
                    data: self.weight.clone(),
                },
                NamedArray {
                    name: "bias".into(),
                    shape: vec![self.output_dim],
                    data: self.bias.clone(),
                },
            ],
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("translator")?;
        let field = |k: &str| ck.config.get(k).cloned().ok_or_else(|| Error::Data(format!("translator config lacks `{k}`")));
        let input_dim: usize = serde_json::from_value(field("input_dim")?)?;
        let output_dim: usize = serde_json::from_value(field("output_dim")?)?;
        let renormalize: bool = serde_json::from_value(field("renormalize")?)?;
        let get = |name: &str, len: usize| -> Result<Vec<f32>> {
            let t = ck
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Data(format!("translator lacks tensor `{name}`")))?;
            if t.data.len() != len {
                return Err(Error::Data(format!("translator tensor `{name}` has wrong size")));
            }
            Ok(t.data.clone())
        };
        Ok(Self {
            input_dim,
            output_dim,
            weight: get("weight", input_dim * output_dim)?,
            bias: get("bias", output_dim)?,
            renormalize,
        })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn mse(t: &Translator, xs: &[&Vec<f32>], ys: &[&Vec<f32>]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let p = t.apply(x)?;
        total += p.iter().zip(y.iter()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
    }
    Ok(total / (xs.len() * t.output_dim) as f64)
}

/// Least-squares affine fit `eeg ≈ W·image + b` on a seeded train part of
/// the pairs, with MSE reported on the held-out rest.
pub fn fit_translator(
    image_feats: &[Vec<f32>],
    eeg_feats: &[Vec<f32>],
    holdout_fraction: f64,
    seed: u64,
    renormalize: bool,
) -> Result<TranslatorFit> {
    if image_feats.is_empty() || image_feats.len() != eeg_feats.len() {
        return Err(Error::Data(format!(
            "translator needs paired features, got {} image and {} EEG rows",
            image_feats.len(),
            eeg_feats.len()
        )));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::Config("holdout_fraction must lie in [0,1)".into()));
    }
    let din = image_feats[0].len();
    let dout = eeg_feats[0].len();
    if din == 0 || dout == 0 || image_feats.iter().any(|r| r.len() != din) || eeg_feats.iter().any(|r| r.len() != dout) {
        return Err(Error::Geometry("feature rows must share one nonzero length".into()));
    }
    let n = image_feats.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seeded_rng(crate::derive_seed(seed, "translator-holdout", 0)));
    let n_hold = ((n as f64 * holdout_fraction).round() as usize).min(n - 1);
    let (held, train) = order.split_at(n_hold);

    let x = DMatrix::from_fn(train.len(), din + 1, |r, c| {
        if c == din {
            1.0
        } else {
            image_feats[train[r]][c] as f64
        }
    });
    let y = DMatrix::from_fn(train.len(), dout, |r, c| eeg_feats[train[r]][c] as f64);
    // minimum-norm solution, so underdetermined fits stay well defined
    let beta = x
        .svd(true, true)
        .solve(&y, 1e-10)
        .map_err(|e| Error::Precondition(format!("least squares failed: {e}")))?;
    let translator = Translator {
        input_dim: din,
        output_dim: dout,
        weight: (0..dout).flat_map(|o| (0..din).map(move |i| (o, i))).map(|(o, i)| beta[(i, o)] as f32).collect(),
        bias: (0..dout).map(|o| beta[(din, o)] as f32).collect(),
        renormalize,
    };
    let eval = if held.is_empty() { train } else { held };
    let heldout_mse = mse(
        &translator,
        &eval.iter().map(|&i| &image_feats[i]).collect::<Vec<_>>(),
        &eval.iter().map(|&i| &eeg_feats[i]).collect::<Vec<_>>(),
    )?;
    Ok(TranslatorFit {
        translator,
        train_records: train.len(),
        heldout_records: held.len(),
        heldout_mse,
    })
}

/// Fits the translator on the paired train records of `dataset`, with both
/// networks frozen.
pub fn fit_image_to_eeg(
    extractor: &dyn ImageFeatureExtractor,
    encoder: &Encoder,
    dataset: &Dataset,
    images: &ImageStore,
    holdout_fraction: f64,
    seed: u64,
    cache: Option<&FeatureCache>,
) -> Result<TranslatorFit> {
    let split = dataset.split("train")?;
    if split.is_empty() {
        return Err(Error::Data("no paired train records".into()));
    }
    let ids = split_image_ids(split, "train")?;
    let img = image_features(extractor, images, &ids, cache)?;
    let eeg = encoder.encode_split(split, 256)?.rows;
    fit_translator(&img, &eeg, holdout_fraction, seed, encoder.config().normalize_output)
}

/// Image → extractor features → EEG space.
pub fn translate_image(extractor: &dyn ImageFeatureExtractor, translator: &Translator, image: &ImageTensor) -> Result<Vec<f32>> {
    translator.apply(&extractor.extract(image)?)
}
