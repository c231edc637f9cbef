use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::checkpoint::NamedArray;
use crate::error::{Error, Result};
use crate::hash::{f32_le_bytes, ContentHasher};
use crate::SeededRng;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

#[derive(Debug, Clone)]
enum Param {
    Trainable(Var),
    Frozen(Tensor),
}

impl Param {
    fn tensor(&self) -> &Tensor {
        match self {
            Param::Trainable(v) => v.as_tensor(),
            Param::Frozen(t) => t,
        }
    }
}

/// Ordered, named model parameters.
///
/// A store created with [`ParamStore::with_values`] hands out the supplied
/// arrays instead of drawing fresh ones, which is how checkpoints are loaded.
/// A frozen store hands out plain tensors that no optimizer can reach.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    trainable: bool,
    entries: Vec<(String, Param)>,
    preset: HashMap<String, NamedArray>,
    loading: bool,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            trainable: true,
            entries: Vec::new(),
            preset: HashMap::new(),
            loading: false,
        }
    }

    pub fn frozen(dtype: DType) -> Self {
        Self {
            trainable: false,
            ..Self::new(dtype)
        }
    }

    pub fn with_values(dtype: DType, trainable: bool, arrays: Vec<NamedArray>) -> Self {
        Self {
            dtype,
            trainable,
            entries: Vec::new(),
            preset: arrays.into_iter().map(|a| (a.name.clone(), a)).collect(),
            loading: true,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut SeededRng) -> Result<Tensor> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let count: usize = shape.iter().product();
        let values: Vec<f32> = match self.preset.remove(name) {
            Some(a) => {
                if a.shape != shape {
                    return Err(Error::Geometry(format!(
                        "parameter `{name}` has shape {:?} in checkpoint, model expects {shape:?}",
                        a.shape
                    )));
                }
                a.data
            }
            None if self.loading => {
                return Err(Error::Data(format!("checkpoint lacks parameter `{name}`")));
            }
            None => match init {
                Init::Uniform(b) => (0..count).map(|_| rng.gen_range(-b..=b) as f32).collect(),
                Init::Normal(s) => (0..count)
                    .map(|_| (rng.sample::<f64, _>(StandardNormal) * s) as f32)
                    .collect(),
                Init::Const(c) => vec![c as f32; count],
            },
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let param = if self.trainable {
            Param::Trainable(Var::from_tensor(&t)?)
        } else {
            Param::Frozen(t)
        };
        let out = param.tensor().clone();
        self.entries.push((name.to_string(), param));
        Ok(out)
    }

    /// Fails when a checkpoint supplied arrays the model never asked for.
    pub fn finish(&self) -> Result<()> {
        if let Some(name) = self.preset.keys().min() {
            return Err(Error::Data(format!("checkpoint has unknown parameter `{name}`")));
        }
        Ok(())
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter_map(|(_, p)| match p {
                Param::Trainable(v) => Some(v.clone()),
                Param::Frozen(_) => None,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.tensor().elem_count()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p.tensor())
    }

    /// Current values as `f32` arrays in registration order.
    pub fn snapshot(&self) -> Result<Vec<NamedArray>> {
        self.entries
            .iter()
            .map(|(name, p)| {
                let t = p.tensor();
                Ok(NamedArray {
                    name: name.clone(),
                    shape: t.dims().to_vec(),
                    data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    /// Overwrites trainable parameters in place from `arrays`.
    pub fn assign(&self, arrays: &[NamedArray]) -> Result<()> {
        for a in arrays {
            let (_, p) = self
                .entries
                .iter()
                .find(|(n, _)| *n == a.name)
                .ok_or_else(|| Error::Data(format!("unknown parameter `{}`", a.name)))?;
            match p {
                Param::Trainable(v) => {
                    let t = Tensor::from_slice(&a.data, a.shape.as_slice(), &Device::Cpu)?
                        .to_dtype(self.dtype)?;
                    v.set(&t)?;
                }
                Param::Frozen(_) => {
                    return Err(Error::Config(format!("parameter `{}` is frozen", a.name)))
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and `f32` values.
    pub fn digest(&self) -> Result<String> {
        let mut h = ContentHasher::new();
        for a in self.snapshot()? {
            h.update(&a.name)
                .update(format!("{:?}", a.shape))
                .update(f32_le_bytes(&a.data));
        }
        Ok(h.finish())
    }
}
