use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear};
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::nn::{self, leaky_relu, Init, ParamStore};

/// Shapes shared by generator and discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub image_size: usize,
    pub cond_dim: usize,
    pub noise_dim: usize,
    /// Channel widths of the generator from the 4×4 stage upwards, one per
    /// doubling; the discriminator uses them in reverse.
    pub widths: Vec<usize>,
}

impl NetShape {
    pub fn new(image_size: usize, cond_dim: usize, noise_dim: usize) -> Result<Self> {
        let stages = stage_count(image_size)?;
        let widths = (0..stages).map(|i| (32usize >> i).max(8)).collect();
        Ok(Self {
            image_size,
            cond_dim,
            noise_dim,
            widths,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let stages = stage_count(self.image_size)?;
        if self.widths.len() != stages || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "image size {} needs {stages} nonzero stage widths",
                self.image_size
            )));
        }
        if self.cond_dim == 0 || self.noise_dim == 0 {
            return Err(Error::Config("condition and noise dimensions must be positive".into()));
        }
        Ok(())
    }
}

fn stage_count(image_size: usize) -> Result<usize> {
    if image_size < 8 || !image_size.is_power_of_two() {
        return Err(Error::Config(format!("image_size must be a power of two >= 8, got {image_size}")));
    }
    Ok(image_size.trailing_zeros() as usize - 2)
}

fn conv3(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut crate::SeededRng) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        stride,
        ..Default::default()
    };
    nn::conv2d(store, name, cin, cout, 3, cfg, rng)
}

/// `condition ⊕ z → dense → 4×4 → (upsample, conv3×3, leaky ReLU)* → RGB → tanh`.
#[derive(Debug, Clone)]
pub struct Generator {
    shape: NetShape,
    store: ParamStore,
    dense: Linear,
    stages: Vec<Conv2d>,
    to_rgb: Conv2d,
}

impl Generator {
    pub fn new(shape: &NetShape, seed: u64) -> Result<Self> {
        Self::assemble(shape, seed, ParamStore::new(DType::F32))
    }

    pub(crate) fn assemble(shape: &NetShape, seed: u64, mut store: ParamStore) -> Result<Self> {
        shape.validate()?;
        let mut rng = crate::seeded_rng(seed);
        let w0 = shape.widths[0];
        let dense = nn::linear(&mut store, "g.dense", shape.cond_dim + shape.noise_dim, w0 * 16, &mut rng)?;
        let mut stages = Vec::new();
        let mut cin = w0;
        for (i, &w) in shape.widths.iter().enumerate() {
            stages.push(conv3(&mut store, &format!("g.up{i}"), cin, w, 1, &mut rng)?);
            cin = w;
        }
        let to_rgb = conv3(&mut store, "g.rgb", cin, 3, 1, &mut rng)?;
        store.finish()?;
        Ok(Self {
            shape: shape.clone(),
            store,
            dense,
            stages,
            to_rgb,
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// `cond`: `B×cond_dim`, `z`: `B×noise_dim` → `B×3×S×S` in `[-1,1]`.
    pub fn forward(&self, cond: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (b, c) = cond.dims2()?;
        let (bz, nz) = z.dims2()?;
        if c != self.shape.cond_dim || nz != self.shape.noise_dim || b != bz {
            return Err(Error::Geometry(format!(
                "generator expects B×{} conditions and B×{} noise, got {b}×{c} and {bz}×{nz}",
                self.shape.cond_dim, self.shape.noise_dim
            )));
        }
        let input = Tensor::cat(&[cond, z], 1)?;
        let mut h = leaky_relu(&self.dense.forward(&input)?)?.reshape((b, self.shape.widths[0], 4, 4))?;
        for conv in &self.stages {
            let (_, _, hh, ww) = h.dims4()?;
            h = leaky_relu(&conv.forward(&h.upsample_nearest2d(hh * 2, ww * 2)?)?)?;
        }
        Ok(self.to_rgb.forward(&h)?.tanh()?)
    }

    /// One image from a single condition vector and noise vector.
    pub fn synthesize(&self, cond: &[f32], z: &[f32]) -> Result<ImageTensor> {
        Ok(self.synthesize_batch(&[cond.to_vec()], &[z.to_vec()])?.remove(0))
    }

    pub fn synthesize_batch(&self, conds: &[Vec<f32>], zs: &[Vec<f32>]) -> Result<Vec<ImageTensor>> {
        if conds.len() != zs.len() || conds.is_empty() {
            return Err(Error::Geometry("need one noise vector per condition".into()));
        }
        if let Some(bad) = conds.iter().find(|c| c.len() != self.shape.cond_dim || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Geometry(format!(
                "condition of length {} (expected finite {}-vector)",
                bad.len(),
                self.shape.cond_dim
            )));
        }
        if zs.iter().any(|z| z.len() != self.shape.noise_dim) {
            return Err(Error::Geometry(format!("noise must have {} entries", self.shape.noise_dim)));
        }
        let to_t = |rows: &[Vec<f32>], d: usize| -> Result<Tensor> {
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?)
        };
        let out = self
            .forward(&to_t(conds, self.shape.cond_dim)?, &to_t(zs, self.shape.noise_dim)?)?
            .detach();
        tensor_to_images(&out)
    }
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let (b, _, h, w) = t.dims4()?;
    let flat: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let per = 3 * h * w;
    Ok((0..b)
        .map(|i| ImageTensor {
            height: h,
            width: w,
            data: flat[i * per..(i + 1) * per].to_vec(),
        })
        .collect())
}

/// Strided conv stack with a projection-conditioned output:
/// `D(x, c) = w·h + b + <E c, h>` where `h` is the pooled feature.
#[derive(Debug, Clone)]
pub struct Discriminator {
    shape: NetShape,
    store: ParamStore,
    convs: Vec<Conv2d>,
    feature: Linear,
    out: Linear,
    embed: Tensor,
}

const D_FEATURES: usize = 128;

impl Discriminator {
    pub fn new(shape: &NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut store = ParamStore::new(DType::F32);
        let mut rng = crate::seeded_rng(seed);
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &w) in shape.widths.iter().rev().enumerate() {
            convs.push(conv3(&mut store, &format!("d.down{i}"), cin, w, 2, &mut rng)?);
            cin = w;
        }
        let feature = nn::linear(&mut store, "d.feature", cin * 16, D_FEATURES, &mut rng)?;
        let out = nn::linear(&mut store, "d.out", D_FEATURES, 1, &mut rng)?;
        let bound = 1.0 / (shape.cond_dim as f64).sqrt();
        let embed = store.add("d.embed", &[D_FEATURES, shape.cond_dim], Init::Uniform(bound), &mut rng)?;
        store.finish()?;
        Ok(Self {
            shape: shape.clone(),
            store,
            convs,
            feature,
            out,
            embed,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Logits `B` for images `B×3×S×S` under conditions `B×cond_dim`.
    pub fn forward(&self, images: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = images.dims4()?;
        if c != 3 || h != self.shape.image_size || w != self.shape.image_size {
            return Err(Error::Geometry(format!(
                "discriminator expects 3×{0}×{0} images, got {c}×{h}×{w}",
                self.shape.image_size
            )));
        }
        let mut x = images.clone();
        for conv in &self.convs {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        let feat = leaky_relu(&self.feature.forward(&x.reshape((b, ()))?)?)?;
        let projected = cond.matmul(&self.embed.t()?)?;
        let proj = (projected * &feat)?.sum(D::Minus1)?;
        Ok((self.out.forward(&feat)?.squeeze(1)? + proj)?)
    }
}
