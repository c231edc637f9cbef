//! Parameter storage, layers, optimizers and the checkpoint archive format.

mod checkpoint;
mod layers;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, NamedArray};
pub use layers::{conv1d, conv2d, l2_normalize, leaky_relu, linear, Lstm, TemporalConv};
pub use optim::{Optimizer, OptimizerKind, SgdMomentum};
pub use params::{Init, ParamStore};

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Copies a 2-D tensor into row vectors of `f32`.
pub fn to_rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(t.to_dtype(DType::F32)?.to_vec2::<f32>()?)
}

/// Builds a tensor from a flat `f32` buffer, converting to `dtype`.
pub fn tensor_from_f32(data: &[f32], shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}
