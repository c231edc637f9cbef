use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer as _, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoments,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(Self::SgdMomentum),
            "adaptive_moments" | "adam" => Ok(Self::AdaptiveMoments),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Plain SGD with heavy-ball momentum: `v ← μv + g; θ ← θ − lr·v`.
#[derive(Debug)]
pub struct SgdMomentum {
    vars: Vec<(Var, Option<Tensor>)>,
    lr: f64,
    momentum: f64,
}

impl SgdMomentum {
    pub fn new(vars: Vec<Var>, lr: f64, momentum: f64) -> Self {
        Self {
            vars: vars.into_iter().map(|v| (v, None)).collect(),
            lr,
            momentum,
        }
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (var, velocity) in &mut self.vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let v = match velocity.take() {
                Some(prev) => ((prev * self.momentum)? + g)?,
                None => g.clone(),
            };
            var.set(&(var.as_tensor() - (&v * self.lr)?)?)?;
            *velocity = Some(v);
        }
        Ok(())
    }
}

enum Inner {
    Adam(AdamW),
    Sgd(SgdMomentum),
}

/// Optimizer over a fixed set of variables.
pub struct Optimizer {
    inner: Inner,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, vars: Vec<Var>, lr: f64) -> Result<Self> {
        if !(lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        Ok(match kind {
            OptimizerKind::AdaptiveMoments => Self::adam(vars, lr, 0.9, 0.999)?,
            OptimizerKind::SgdMomentum => Self {
                inner: Inner::Sgd(SgdMomentum::new(vars, lr, 0.9)),
            },
        })
    }

    /// Adam without weight decay.
    pub fn adam(vars: Vec<Var>, lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Self {
            inner: Inner::Adam(AdamW::new(vars, params)?),
        })
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        match &mut self.inner {
            Inner::Adam(a) => a.step(grads)?,
            Inner::Sgd(s) => s.step(grads)?,
        }
        Ok(())
    }

    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let grads = loss.backward()?;
        self.step(&grads)
    }
}
