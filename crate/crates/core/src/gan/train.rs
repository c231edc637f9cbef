use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ada::{ada_update, augment, AdaState};
use super::models::{Discriminator, Generator, NetShape};
use crate::data::{Dataset, ImageStore, ImageTensor, SplitData};
use crate::encoders::{images_tensor, ConvBackbone, Encoder, ImageFeatureExtractor};
use crate::error::{Error, Result};
use crate::eval::{fid, GaussianStats};
use crate::nn::{Checkpoint, Optimizer, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    EegFeature,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub image_size: usize,
    pub condition_mode: ConditionMode,
    pub noise_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub ada_enabled: bool,
    pub ada_target: f64,
    pub ada_step: f64,
    /// R1 weight γ; the penalty is γ/2·E‖∇D(x)‖² on real images.
    pub r1_gamma: f64,
    /// Apply R1 every this many steps, scaled up by the same factor.
    pub r1_every: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            condition_mode: ConditionMode::EegFeature,
            noise_dim: 64,
            steps: 2000,
            batch_size: 16,
            lr_g: 2e-3,
            lr_d: 2e-3,
            ada_enabled: true,
            ada_target: 0.6,
            ada_step: 1e-4,
            r1_gamma: 1.0,
            r1_every: 4,
            eval_every: 250,
            eval_samples: 256,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::Config(format!("image_size must be a power of two >= 8, got {}", self.image_size)));
        }
        if self.noise_dim == 0 || self.batch_size < 2 || self.eval_samples < 2 {
            return Err(Error::Config("noise_dim > 0, batch_size >= 2 and eval_samples >= 2 required".into()));
        }
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0) || !(self.r1_gamma >= 0.0) {
            return Err(Error::Config("learning rates and r1_gamma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ada_target) || !(self.ada_step >= 0.0) {
            return Err(Error::Config("ada_target must lie in [0,1] and ada_step >= 0".into()));
        }
        Ok(())
    }
}

/// Source of generator conditions: a frozen EEG encoder or class one-hots.
pub enum Conditioner<'a> {
    Eeg(&'a Encoder),
    OneHot { num_classes: usize },
}

impl Conditioner<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Conditioner::Eeg(enc) => enc.config().embed_dim,
            Conditioner::OneHot { num_classes } => *num_classes,
        }
    }

    pub fn mode(&self) -> ConditionMode {
        match self {
            Conditioner::Eeg(_) => ConditionMode::EegFeature,
            Conditioner::OneHot { .. } => ConditionMode::OneHot,
        }
    }

    /// One condition row per record of `split`.
    pub fn conditions(&self, split: &SplitData) -> Result<Vec<Vec<f32>>> {
        match self {
            Conditioner::Eeg(enc) => Ok(enc.encode_split(split, 256)?.rows),
            Conditioner::OneHot { num_classes } => Ok(split.labels.iter().map(|&l| one_hot(l, *num_classes)).collect()),
        }
    }
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanStep {
    pub step: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub ada_p: f64,
    pub fid_eval: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanHistory {
    pub records: Vec<GanStep>,
    /// `(step, fid)` pairs, including the untrained generator at step 0.
    pub fid_trace: Vec<(usize, f64)>,
}

impl GanHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn initial_fid(&self) -> Option<f64> {
        self.fid_trace.first().map(|f| f.1)
    }

    pub fn final_fid(&self) -> Option<f64> {
        self.fid_trace.last().map(|f| f.1)
    }
}

/// Trained generator plus the metadata needed to reuse it.
pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: GanHistory,
    pub ada: AdaState,
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    // relu(x) + log(1 + exp(-|x|)), stable for large |x|
    Ok((x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

fn rows_tensor(rows: &[&Vec<f32>]) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?)
}

fn noise(rng: &mut impl Rng, n: usize, d: usize) -> Result<Tensor> {
    let v: Vec<f32> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (n, d), &Device::Cpu)?)
}

/// Generator-vs-real FID on a fixed slice with fixed noise.
struct FidProbe {
    extractor: ConvBackbone,
    real: GaussianStats,
    conds: Tensor,
    z: Tensor,
}

impl FidProbe {
    fn new(images: &[ImageTensor], conds: &[&Vec<f32>], noise_dim: usize, seed: u64) -> Result<Self> {
        let extractor = ConvBackbone::tiny(crate::derive_seed(seed, "fid-extractor", 0))?;
        let refs: Vec<&ImageTensor> = images.iter().collect();
        let real = GaussianStats::from_features(&features_f64(&extractor, &images_tensor(&refs)?)?)?;
        let mut rng = crate::seeded_rng(crate::derive_seed(seed, "fid-noise", 0));
        Ok(Self {
            extractor,
            real,
            conds: rows_tensor(conds)?,
            z: noise(&mut rng, conds.len(), noise_dim)?,
        })
    }

    fn measure(&self, g: &Generator) -> Result<f64> {
        let n = self.conds.dim(0)?;
        let mut feats = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let len = 64.min(n - start);
            let imgs = g.forward(&self.conds.narrow(0, start, len)?, &self.z.narrow(0, start, len)?)?.detach();
            feats.extend(features_f64(&self.extractor, &imgs)?);
            start += len;
        }
        fid(&self.real, &GaussianStats::from_features(&feats)?)
    }
}

fn features_f64(extractor: &ConvBackbone, images: &Tensor) -> Result<Vec<Vec<f64>>> {
    let f = extractor.forward(images)?;
    Ok(crate::nn::to_rows(&f)?
        .into_iter()
        .map(|r| r.into_iter().map(f64::from).collect())
        .collect())
}

/// Central-difference estimate of `E‖∇ₓD(x)‖²` along one random direction
/// per image. Differentiable in the discriminator parameters.
fn r1_estimate(d: &Discriminator, x: &Tensor, cond: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    const EPS: f64 = 1e-2;
    let dims = x.dims().to_vec();
    let n: usize = dims.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let v = (Tensor::from_vec(v, dims, &Device::Cpu)? * EPS)?;
    let plus = d.forward(&(x + &v)?, cond)?;
    let minus = d.forward(&(x - &v)?, cond)?;
    let dir = ((plus - minus)? / (2.0 * EPS))?;
    Ok(dir.sqr()?.mean_all()?)
}

/// Loads the image of every record in `split`.
pub fn load_split_images(split: &SplitData, store: &ImageStore, image_size: usize) -> Result<Vec<ImageTensor>> {
    split
        .image_ids
        .iter()
        .zip(&split.ids)
        .map(|(img, id)| {
            let key = img
                .as_ref()
                .ok_or_else(|| Error::Data(format!("record {id} has no paired image")))?;
            let t = store.load(key)?;
            if t.height != image_size || t.width != image_size {
                return Err(Error::Geometry(format!(
                    "image `{key}` is {}x{}, config expects {image_size}x{image_size}",
                    t.height, t.width
                )));
            }
            Ok((*t).clone())
        })
        .collect()
}

/// Alternating generator/discriminator updates over the train split.
///
/// Each `*_step` draws its own batch and noise from the trainer's RNG and
/// updates only the named network.
pub struct GanTrainer {
    config: GanConfig,
    real_images: Vec<ImageTensor>,
    conds: Vec<Vec<f32>>,
    g: Generator,
    d: Discriminator,
    opt_g: Optimizer,
    opt_d: Optimizer,
    rng: crate::SeededRng,
    probe: FidProbe,
    ada: AdaState,
    step: usize,
}

impl GanTrainer {
    pub fn new(dataset: &Dataset, images: &ImageStore, conditioner: &Conditioner<'_>, config: &GanConfig) -> Result<Self> {
        config.validate()?;
        if config.condition_mode != conditioner.mode() {
            return Err(Error::Config("condition_mode does not match the conditioner".into()));
        }
        if let Conditioner::OneHot { num_classes } = conditioner {
            dataset.require_labels("one-hot conditioning")?;
            if *num_classes != dataset.manifest.num_classes {
                return Err(Error::Config("one-hot width differs from the dataset's class count".into()));
            }
        }
        if let Conditioner::Eeg(enc) = conditioner {
            let c = enc.config();
            if c.input_channels != dataset.manifest.channels || c.input_timesteps != dataset.manifest.timesteps {
                return Err(Error::Geometry(format!(
                    "encoder expects {}x{} signals, dataset has {}x{}",
                    c.input_channels, c.input_timesteps, dataset.manifest.channels, dataset.manifest.timesteps
                )));
            }
        }
        let split = dataset.split("train")?;
        if split.len() < 2 {
            return Err(Error::Data("GAN training needs at least two train records".into()));
        }
        let real_images = load_split_images(split, images, config.image_size)?;
        let conds = conditioner.conditions(split)?;

        let shape = NetShape::new(config.image_size, conditioner.dim(), config.noise_dim)?;
        let g = Generator::new(&shape, crate::derive_seed(config.seed, "generator", 0))?;
        let d = Discriminator::new(&shape, crate::derive_seed(config.seed, "discriminator", 0))?;
        let opt_g = Optimizer::adam(g.params().vars(), config.lr_g, 0.0, 0.99)?;
        let opt_d = Optimizer::adam(d.params().vars(), config.lr_d, 0.0, 0.99)?;

        let eval_idx: Vec<usize> = {
            let m = config.eval_samples.min(split.len());
            let mut r = crate::seeded_rng(crate::derive_seed(config.seed, "fid-slice", 0));
            let mut v = sample(&mut r, split.len(), m).into_vec();
            v.sort_unstable();
            v
        };
        let probe = FidProbe::new(
            &eval_idx.iter().map(|&i| real_images[i].clone()).collect::<Vec<_>>(),
            &eval_idx.iter().map(|&i| &conds[i]).collect::<Vec<_>>(),
            config.noise_dim,
            config.seed,
        )?;
        Ok(Self {
            config: config.clone(),
            real_images,
            conds,
            g,
            d,
            opt_g,
            opt_d,
            rng: crate::seeded_rng(crate::derive_seed(config.seed, "gan-steps", 0)),
            probe,
            ada: AdaState::new(config.ada_target, config.ada_step),
            step: 0,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.g
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.d
    }

    pub fn ada(&self) -> &AdaState {
        &self.ada
    }

    /// FID of the current generator on the fixed evaluation slice.
    pub fn fid(&self) -> Result<f64> {
        self.probe.measure(&self.g)
    }

    fn draw_batch(&mut self) -> Result<(Tensor, Tensor)> {
        let batch = self.config.batch_size.min(self.real_images.len());
        let idx = sample(&mut self.rng, self.real_images.len(), batch).into_vec();
        let refs: Vec<&ImageTensor> = idx.iter().map(|&i| &self.real_images[i]).collect();
        let cond = rows_tensor(&idx.iter().map(|&i| &self.conds[i]).collect::<Vec<_>>())?;
        Ok((images_tensor(&refs)?, cond))
    }

    fn augment_p(&self) -> f64 {
        if self.config.ada_enabled {
            self.ada.p
        } else {
            0.0
        }
    }

    /// One discriminator update, with lazy R1 on every `r1_every`-th call
    /// counted by `step`. Returns the loss.
    pub fn discriminator_step(&mut self, step: usize) -> Result<f64> {
        let (real, cond) = self.draw_batch()?;
        let b = real.dim(0)?;
        let p = self.augment_p();
        let z = noise(&mut self.rng, b, self.config.noise_dim)?;
        let fake = self.g.forward(&cond, &z)?.detach();
        let real_aug = augment(&real, p, &mut self.rng)?;
        let d_real = self.d.forward(&real_aug, &cond)?;
        let d_fake = self.d.forward(&augment(&fake, p, &mut self.rng)?, &cond)?;
        let mut loss = (softplus(&d_real.neg()?)?.mean_all()? + softplus(&d_fake)?.mean_all()?)?;
        let c = &self.config;
        if c.r1_gamma > 0.0 && c.r1_every > 0 && step % c.r1_every == 0 {
            let r1 = r1_estimate(&self.d, &real_aug.detach(), &cond, &mut self.rng)?;
            loss = (loss + (r1 * (c.r1_gamma * 0.5 * c.r1_every as f64))?)?;
        }
        let value = loss.to_scalar::<f32>()? as f64;
        self.opt_d.backward_step(&loss)?;
        if self.config.ada_enabled {
            self.ada = ada_update(&self.ada, &d_real.detach().to_vec1::<f32>()?)?;
        }
        Ok(value)
    }

    /// One generator update; discriminator parameters are not in its optimizer.
    pub fn generator_step(&mut self) -> Result<f64> {
        let (_, cond) = self.draw_batch()?;
        let b = cond.dim(0)?;
        let p = self.augment_p();
        let z = noise(&mut self.rng, b, self.config.noise_dim)?;
        let fake = self.g.forward(&cond, &z)?;
        let d_gen = self.d.forward(&augment(&fake, p, &mut self.rng)?, &cond)?;
        let loss = softplus(&d_gen.neg()?)?.mean_all()?;
        let value = loss.to_scalar::<f32>()? as f64;
        self.opt_g.backward_step(&loss)?;
        Ok(value)
    }

    /// Runs the configured number of alternating steps, measuring FID at
    /// step 0, every `eval_every` steps and at the end.
    pub fn run(mut self) -> Result<GanOutcome> {
        let mut history = GanHistory::default();
        let initial = self.fid()?;
        history.fid_trace.push((0, initial));
        log::info!("gan step 0: fid {initial:.3}");
        let steps = self.config.steps;
        while self.step < steps {
            self.step += 1;
            let step = self.step;
            let d_loss = self.discriminator_step(step)?;
            let g_loss = self.generator_step()?;
            let c = &self.config;
            let fid_eval = if (c.eval_every > 0 && step % c.eval_every == 0) || step == steps {
                let f = self.fid()?;
                history.fid_trace.push((step, f));
                log::info!("gan step {step}: g {g_loss:.4} d {d_loss:.4} p {:.4} fid {f:.3}", self.ada.p);
                Some(f)
            } else {
                None
            };
            history.records.push(GanStep {
                step,
                g_loss,
                d_loss,
                ada_p: self.ada.p,
                fid_eval,
            });
        }
        Ok(GanOutcome {
            generator: self.g,
            discriminator: self.d,
            history,
            ada: self.ada,
        })
    }
}

/// Non-saturating logistic GAN with lazy R1 and optional ADA on the train
/// split. The conditioner is never updated.
pub fn train_gan(
    dataset: &Dataset,
    images: &ImageStore,
    conditioner: &Conditioner<'_>,
    config: &GanConfig,
) -> Result<GanOutcome> {
    GanTrainer::new(dataset, images, conditioner, config)?.run()
}

impl Generator {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            "generator",
            serde_json::to_value(self.shape())?,
            meta,
            self.params().snapshot()?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("generator")?;
        let shape: NetShape = serde_json::from_value(ck.config.clone())?;
        Self::assemble(
            &shape,
            0,
            ParamStore::with_values(candle_core::DType::F32, true, ck.tensors.clone()),
        )
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<String> {
        self.to_checkpoint(meta)?.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let ck = Checkpoint::load(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck.meta))
    }
}

/// Metadata stored with generator checkpoints.
pub fn generator_meta(config: &GanConfig, encoder_hash: Option<&str>, dataset_hash: &str) -> serde_json::Value {
    json!({
        "condition_mode": config.condition_mode,
        "encoder_checkpoint": encoder_hash,
        "dataset_hash": dataset_hash,
        "seed": config.seed,
    })
}

/// Seeded standard-normal noise vectors.
pub fn noise_vectors(seed: u64, count: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut rng = crate::seeded_rng(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Images for the given conditions, one noise vector per seed.
pub fn synthesize_images(g: &Generator, conds: &[Vec<f32>], seeds: &[u64]) -> Result<Vec<ImageTensor>> {
    let zs: Vec<Vec<f32>> = seeds
        .iter()
        .map(|&s| noise_vectors(s, 1, g.shape().noise_dim).remove(0))
        .collect();
    let mut out = Vec::with_capacity(conds.len());
    for (c, z) in conds.chunks(64).zip(zs.chunks(64)) {
        out.extend(g.synthesize_batch(c, z)?);
    }
    Ok(out)
}
