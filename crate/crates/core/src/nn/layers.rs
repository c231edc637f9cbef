use candle_core::{Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear};

use super::params::{Init, ParamStore};
use crate::error::Result;
use crate::SeededRng;

/// Fully connected layer with uniform `±1/sqrt(fan_in)` initialization.
pub fn linear(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut SeededRng) -> Result<Linear> {
    let bound = 1.0 / (input as f64).sqrt();
    let w = store.add(&format!("{name}.weight"), &[output, input], Init::Uniform(bound), rng)?;
    let b = store.add(&format!("{name}.bias"), &[output], Init::Uniform(bound), rng)?;
    Ok(Linear::new(w, Some(b)))
}

/// Strided temporal convolution over `B×C×N` without padding.
///
/// Runs as a height-1 2-D convolution: candle's CPU `conv1d` ignores the
/// strides of a non-contiguous kernel, which its own backward pass produces,
/// so weight gradients through `conv1d` come out wrong. The input is cropped
/// to the span the strided kernel covers, because the 2-D backward pass
/// infers width padding from the height axis.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl TemporalConv {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.dim(2)?;
        let k = self.weight.dim(2)?;
        if n < k {
            return Err(crate::Error::Geometry(format!("sequence of length {n} is shorter than kernel {k}")));
        }
        let covered = (n - k) / self.stride * self.stride + k;
        let y = x
            .narrow(2, 0, covered)?
            .unsqueeze(2)?
            .conv2d(&self.weight.unsqueeze(2)?, 0, self.stride, 1, 1)?
            .squeeze(2)?;
        Ok(y.broadcast_add(&self.bias.unsqueeze(1)?)?)
    }
}

pub fn conv1d(
    store: &mut ParamStore,
    name: &str,
    input: usize,
    output: usize,
    kernel: usize,
    stride: usize,
    rng: &mut SeededRng,
) -> Result<TemporalConv> {
    let bound = 1.0 / ((input * kernel) as f64).sqrt();
    let weight = store.add(&format!("{name}.weight"), &[output, input, kernel], Init::Uniform(bound), rng)?;
    let bias = store.add(&format!("{name}.bias"), &[output], Init::Uniform(bound), rng)?;
    Ok(TemporalConv { weight, bias, stride })
}

pub fn conv2d(
    store: &mut ParamStore,
    name: &str,
    input: usize,
    output: usize,
    kernel: usize,
    cfg: Conv2dConfig,
    rng: &mut SeededRng,
) -> Result<Conv2d> {
    let bound = 1.0 / ((input * kernel * kernel) as f64).sqrt();
    let w = store.add(
        &format!("{name}.weight"),
        &[output, input, kernel, kernel],
        Init::Uniform(bound),
        rng,
    )?;
    let b = store.add(&format!("{name}.bias"), &[output], Init::Uniform(bound), rng)?;
    Ok(Conv2d::new(w, Some(b), cfg))
}

/// Row-wise L2 normalization over the last dimension.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-20)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
}

/// Stacked LSTM with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let fan_in = if l == 0 { input } else { hidden };
            let p = format!("{name}.{l}");
            layers.push(LstmLayer {
                w_ih: store.add(&format!("{p}.w_ih"), &[4 * hidden, fan_in], Init::Uniform(bound), rng)?,
                w_hh: store.add(&format!("{p}.w_hh"), &[4 * hidden, hidden], Init::Uniform(bound), rng)?,
                bias: store.add(&format!("{p}.bias"), &[4 * hidden], Init::Uniform(bound), rng)?,
            });
        }
        Ok(Self { layers, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x`: `B×T×input` → final hidden state of the top layer, `B×hidden`.
    pub fn forward_last(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h = self.hidden;
        // time-major sequence, T×B×F
        let mut seq = x.transpose(0, 1)?.contiguous()?;
        let mut last = Tensor::zeros((b, h), x.dtype(), x.device())?;
        for layer in &self.layers {
            let fan_in = seq.dim(2)?;
            let xw = seq
                .reshape((t * b, fan_in))?
                .matmul(&layer.w_ih.t()?)?
                .broadcast_add(&layer.bias)?
                .reshape((t, b, 4 * h))?;
            let w_hh_t = layer.w_hh.t()?;
            let mut hs = Tensor::zeros((b, h), x.dtype(), x.device())?;
            let mut cs = Tensor::zeros((b, h), x.dtype(), x.device())?;
            let mut outputs = Vec::with_capacity(t);
            for step in 0..t {
                let gates = (xw.get(step)? + hs.matmul(&w_hh_t)?)?;
                let i = candle_nn::ops::sigmoid(&gates.narrow(1, 0, h)?)?;
                let f = candle_nn::ops::sigmoid(&gates.narrow(1, h, h)?)?;
                let g = gates.narrow(1, 2 * h, h)?.tanh()?;
                let o = candle_nn::ops::sigmoid(&gates.narrow(1, 3 * h, h)?)?;
                cs = ((f * &cs)? + (i * g)?)?;
                hs = (o * cs.tanh()?)?;
                outputs.push(hs.clone());
            }
            last = hs;
            seq = Tensor::stack(&outputs, 0)?;
        }
        Ok(last)
    }
}

/// Leaky ReLU with slope 0.2 for negative inputs.
pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * 0.2)?)?)
}
