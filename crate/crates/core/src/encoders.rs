//! Recurrent and convolutional EEG encoders, the classification head, and
//! frozen image feature extractors.

use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{ImageTensor, SplitData};
use crate::error::{Error, Result};
use crate::nn::{self, Checkpoint, Init, Lstm, ParamStore, TemporalConv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lstm,
    Cnn,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Self::Lstm),
            "cnn" => Ok(Self::Cnn),
            other => Err(Error::Config(format!("unknown encoder kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub input_channels: usize,
    pub input_timesteps: usize,
    pub embed_dim: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub cnn_channel_widths: Vec<usize>,
    pub cnn_kernel: usize,
    pub cnn_stride: usize,
    pub normalize_output: bool,
}

impl EncoderConfig {
    fn base(kind: EncoderKind, channels: usize, timesteps: usize) -> Self {
        Self {
            kind,
            input_channels: channels,
            input_timesteps: timesteps,
            embed_dim: 128,
            lstm_layers: 2,
            lstm_hidden: 128,
            cnn_channel_widths: vec![32, 64, 128, 256],
            cnn_kernel: 3,
            cnn_stride: 2,
            normalize_output: true,
        }
    }

    /// Two-layer LSTM, hidden 128, 128-D output.
    pub fn lstm(channels: usize, timesteps: usize) -> Self {
        Self::base(EncoderKind::Lstm, channels, timesteps)
    }

    /// Four unpadded stride-2 temporal convolutions (32, 64, 128, 256 wide),
    /// global average pooling, 128-D output.
    pub fn cnn(channels: usize, timesteps: usize) -> Self {
        Self::base(EncoderKind::Cnn, channels, timesteps)
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize_output = normalize;
        self
    }

    /// Temporal length after each convolution block; errors when a block
    /// would shrink the signal below one step.
    pub fn cnn_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.input_timesteps;
        let mut out = Vec::with_capacity(self.cnn_channel_widths.len());
        for (i, _) in self.cnn_channel_widths.iter().enumerate() {
            if len < self.cnn_kernel {
                return Err(Error::Geometry(format!(
                    "cnn block {i} receives {len} timesteps, fewer than kernel {}; \
                     {} timesteps cannot support {} stride-{} blocks",
                    self.cnn_kernel,
                    self.input_timesteps,
                    self.cnn_channel_widths.len(),
                    self.cnn_stride
                )));
            }
            len = (len - self.cnn_kernel) / self.cnn_stride + 1;
            out.push(len);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.input_channels == 0 || self.input_timesteps == 0 {
            return Err(Error::Config("embed_dim, input_channels and input_timesteps must be positive".into()));
        }
        match self.kind {
            EncoderKind::Lstm => {
                if self.lstm_layers == 0 || self.lstm_hidden == 0 {
                    return Err(Error::Config("lstm encoder needs lstm_layers and lstm_hidden > 0".into()));
                }
            }
            EncoderKind::Cnn => {
                if self.cnn_channel_widths.is_empty()
                    || self.cnn_channel_widths.contains(&0)
                    || self.cnn_kernel == 0
                    || self.cnn_stride == 0
                {
                    return Err(Error::Config("cnn encoder needs nonzero widths, kernel and stride".into()));
                }
                self.cnn_lengths()?;
            }
        }
        Ok(())
    }
}

/// Which data an encoder was trained on; checked by the zero-shot protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrail {
    pub regime: String,
    pub dataset_hash: String,
    pub classes_seen: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Body {
    Lstm(Lstm),
    Cnn(Vec<TemporalConv>),
}

/// EEG feature encoder `B×C×N → B×embed_dim`.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    seed: u64,
    store: ParamStore,
    body: Body,
    proj: Linear,
    trails: Vec<TrainingTrail>,
}

impl Encoder {
    pub fn build(config: &EncoderConfig, seed: u64) -> Result<Self> {
        Self::build_with_dtype(config, seed, DType::F32)
    }

    pub fn build_with_dtype(config: &EncoderConfig, seed: u64, dtype: DType) -> Result<Self> {
        Self::assemble(config, seed, ParamStore::new(dtype))
    }

    fn assemble(config: &EncoderConfig, seed: u64, mut store: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seeded_rng(seed);
        let (body, feat) = match config.kind {
            EncoderKind::Lstm => {
                let lstm = Lstm::new(
                    &mut store,
                    "lstm",
                    config.input_channels,
                    config.lstm_hidden,
                    config.lstm_layers,
                    &mut rng,
                )?;
                (Body::Lstm(lstm), config.lstm_hidden)
            }
            EncoderKind::Cnn => {
                let mut convs = Vec::new();
                let mut input = config.input_channels;
                for (i, &w) in config.cnn_channel_widths.iter().enumerate() {
                    convs.push(nn::conv1d(&mut store, &format!("conv{i}"), input, w, config.cnn_kernel, config.cnn_stride, &mut rng)?);
                    input = w;
                }
                (Body::Cnn(convs), input)
            }
        };
        let proj = nn::linear(&mut store, "proj", feat, config.embed_dim, &mut rng)?;
        store.finish()?;
        Ok(Self {
            config: config.clone(),
            seed,
            store,
            body,
            proj,
            trails: Vec::new(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn trails(&self) -> &[TrainingTrail] {
        &self.trails
    }

    pub fn push_trail(&mut self, trail: TrainingTrail) {
        self.trails.push(trail);
    }

    /// Toggles output normalization without touching parameters.
    pub fn set_normalize_output(&mut self, normalize: bool) {
        self.config.normalize_output = normalize;
    }

    /// `x`: `B×C×N` → `B×embed_dim`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, n) = x.dims3()?;
        if c != self.config.input_channels || n != self.config.input_timesteps {
            return Err(Error::Geometry(format!(
                "encoder expects {}x{} signals, got {c}x{n}",
                self.config.input_channels, self.config.input_timesteps
            )));
        }
        let x = x.to_dtype(self.dtype())?;
        let feat = match &self.body {
            // channels-first records become a length-N sequence of C-vectors
            Body::Lstm(lstm) => lstm.forward_last(&x.transpose(1, 2)?)?,
            Body::Cnn(convs) => {
                let mut h = x;
                for conv in convs {
                    h = conv.forward(&h)?.relu()?;
                }
                h.mean(D::Minus1)?
            }
        };
        let out = self.proj.forward(&feat)?;
        if self.config.normalize_output {
            nn::l2_normalize(&out)
        } else {
            Ok(out)
        }
    }

    pub fn signals_tensor(&self, signals: &[f32], batch: usize) -> Result<Tensor> {
        let (c, n) = (self.config.input_channels, self.config.input_timesteps);
        if signals.len() != batch * c * n {
            return Err(Error::Geometry(format!(
                "{} values cannot form {batch} signals of {c}x{n}",
                signals.len()
            )));
        }
        Ok(Tensor::from_slice(signals, (batch, c, n), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Embeds a flat `B×C×N` buffer.
    pub fn encode(&self, signals: &[f32], batch: usize) -> Result<Vec<Vec<f32>>> {
        let x = self.signals_tensor(signals, batch)?;
        nn::to_rows(&self.forward(&x)?.detach())
    }

    /// Embeds every record of a split in chunks of `chunk`.
    pub fn encode_split(&self, split: &SplitData, chunk: usize) -> Result<EmbeddingBatch> {
        let mut rows = Vec::with_capacity(split.len());
        let indices: Vec<usize> = (0..split.len()).collect();
        for idx in indices.chunks(chunk.max(1)) {
            rows.extend(self.encode(&split.gather_signals(idx), idx.len())?);
        }
        Ok(EmbeddingBatch {
            rows,
            labels: split.labels.clone(),
            record_ids: split.ids.clone(),
            subjects: split.subjects.clone(),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            "encoder",
            serde_json::to_value(&self.config)?,
            json!({ "seed": self.seed, "trails": self.trails }),
            self.store.snapshot()?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<Self> {
        ck.expect_kind("encoder")?;
        let config: EncoderConfig = serde_json::from_value(ck.config.clone())?;
        let seed = ck.meta.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        let store = ParamStore::with_values(dtype, true, ck.tensors.clone());
        let mut enc = Self::assemble(&config, seed, store)?;
        if let Some(t) = ck.meta.get("trails") {
            enc.trails = serde_json::from_value(t.clone())?;
        }
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, DType::F32)
    }
}

/// Encoder outputs with aligned record annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingBatch {
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub record_ids: Vec<u64>,
    pub subjects: Vec<u32>,
}

impl EmbeddingBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// Linear classification head over encoder features.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    store: ParamStore,
    linear: Linear,
    input_dim: usize,
    num_classes: usize,
}

impl ClassifierHead {
    pub fn new(input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        Self::assemble(input_dim, num_classes, seed, ParamStore::new(DType::F32), false)
    }

    /// A head whose weights and biases are all zero.
    pub fn zeros(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::assemble(input_dim, num_classes, 0, ParamStore::new(DType::F32), true)
    }

    fn assemble(input_dim: usize, num_classes: usize, seed: u64, mut store: ParamStore, zero: bool) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        let mut rng = crate::seeded_rng(seed);
        let linear = if zero {
            let w = store.add("head.weight", &[num_classes, input_dim], Init::Const(0.0), &mut rng)?;
            let b = store.add("head.bias", &[num_classes], Init::Const(0.0), &mut rng)?;
            Linear::new(w, Some(b))
        } else {
            nn::linear(&mut store, "head", input_dim, num_classes, &mut rng)?
        };
        store.finish()?;
        Ok(Self {
            store,
            linear,
            input_dim,
            num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let d = features.dim(D::Minus1)?;
        if d != self.input_dim {
            return Err(Error::Geometry(format!(
                "head expects {}-D features, got {d}",
                self.input_dim
            )));
        }
        Ok(self.linear.forward(&features.to_dtype(self.store.dtype())?)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            "classifier_head",
            json!({ "input_dim": self.input_dim, "num_classes": self.num_classes }),
            json!({}),
            self.store.snapshot()?,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("classifier_head")?;
        let get = |k: &str| {
            ck.config
                .get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Data(format!("head checkpoint lacks `{k}`")))
        };
        let store = ParamStore::with_values(DType::F32, true, ck.tensors.clone());
        Self::assemble(get("input_dim")?, get("num_classes")?, 0, store, false)
    }
}

/// Class probabilities `B×num_classes` for a flat batch of signals.
pub fn classify(encoder: &Encoder, head: &ClassifierHead, signals: &[f32], batch: usize) -> Result<Vec<Vec<f32>>> {
    if head.input_dim != encoder.config().embed_dim {
        return Err(Error::Geometry(format!(
            "head input {} does not match encoder output {}",
            head.input_dim,
            encoder.config().embed_dim
        )));
    }
    let x = encoder.signals_tensor(signals, batch)?;
    let logits = head.logits(&encoder.forward(&x)?)?;
    nn::to_rows(&candle_nn::ops::softmax_last_dim(&logits.detach())?)
}

/// A frozen image feature extractor. Implementations never expose trainable
/// variables, so no optimizer in this crate can modify them.
pub trait ImageFeatureExtractor: Send + Sync {
    fn feature_dim(&self) -> usize;

    /// `B×3×H×W` in `[-1,1]` → `B×feature_dim`, detached from any graph.
    fn forward(&self, images: &Tensor) -> Result<Tensor>;

    /// Hash of the extractor weights.
    fn digest(&self) -> Result<String>;

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        Ok(self.extract_batch(&[image])?.remove(0))
    }

    fn extract_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        nn::to_rows(&self.forward(&images_tensor(images)?)?)
    }
}

/// Stacks images into a `B×3×H×W` `f32` tensor.
pub fn images_tensor(images: &[&ImageTensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("no images to stack".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::Geometry("images in one batch differ in size".into()));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolution stack followed by average pooling onto a `pool_grid²` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: Vec<BackboneLayer>,
    pub pool_grid: usize,
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        Self {
            layers: vec![
                BackboneLayer {
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                },
                BackboneLayer {
                    out_channels: 32,
                    kernel: 3,
                    stride: 2,
                },
            ],
            pool_grid: 2,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(3, |l| l.out_channels) * self.pool_grid * self.pool_grid
    }
}

/// Frozen convolutional backbone. [`ConvBackbone::tiny`] is a seeded,
/// untrained extractor for desk-scale runs; [`ConvBackbone::load`] adapts an
/// externally supplied `image_backbone` checkpoint.
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    config: BackboneConfig,
    store: ParamStore,
    convs: Vec<Conv2d>,
}

impl ConvBackbone {
    pub fn tiny(seed: u64) -> Result<Self> {
        Self::assemble(BackboneConfig::tiny(), seed, ParamStore::frozen(DType::F32))
    }

    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        Self::assemble(config, seed, ParamStore::frozen(DType::F32))
    }

    fn assemble(config: BackboneConfig, seed: u64, mut store: ParamStore) -> Result<Self> {
        if config.pool_grid == 0 || config.layers.iter().any(|l| l.kernel == 0 || l.stride == 0) {
            return Err(Error::Config("invalid backbone configuration".into()));
        }
        let mut rng = crate::seeded_rng(seed);
        let mut convs = Vec::new();
        let mut input = 3;
        for (i, l) in config.layers.iter().enumerate() {
            let cfg = Conv2dConfig {
                padding: l.kernel / 2,
                stride: l.stride,
                ..Default::default()
            };
            // He-style scale keeps activations from vanishing through ReLUs
            let fan_in = (input * l.kernel * l.kernel) as f64;
            let w = store.add(
                &format!("conv{i}.weight"),
                &[l.out_channels, input, l.kernel, l.kernel],
                Init::Normal((2.0 / fan_in).sqrt()),
                &mut rng,
            )?;
            let b = store.add(&format!("conv{i}.bias"), &[l.out_channels], Init::Const(0.0), &mut rng)?;
            convs.push(Conv2d::new(w, Some(b), cfg));
            input = l.out_channels;
        }
        store.finish()?;
        Ok(Self { config, store, convs })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            "image_backbone",
            serde_json::to_value(&self.config)?,
            json!({}),
            self.store.snapshot()?,
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind("image_backbone")?;
        let config: BackboneConfig = serde_json::from_value(ck.config.clone())?;
        Self::assemble(config, 0, ParamStore::with_values(DType::F32, false, ck.tensors))
    }
}

impl ImageFeatureExtractor for ConvBackbone {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(Error::Geometry(format!("expected 3-channel images, got {c}")));
        }
        let mut h = images.detach().to_dtype(DType::F32)?;
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let (_, _, hh, ww) = h.dims4()?;
        let g = self.config.pool_grid;
        if hh % g != 0 || ww % g != 0 {
            return Err(Error::Geometry(format!(
                "feature map {hh}x{ww} does not divide into a {g}x{g} pooling grid"
            )));
        }
        let pooled = h.avg_pool2d((hh / g, ww / g))?;
        Ok(pooled.reshape((b, ()))?.detach())
    }

    fn digest(&self) -> Result<String> {
        self.store.digest()
    }
}
