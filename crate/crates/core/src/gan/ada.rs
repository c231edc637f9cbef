use candle_core::{Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive discriminator augmentation controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaState {
    pub p: f64,
    pub overfit_estimate: f64,
    pub target: f64,
    pub adjustment_step: f64,
}

impl AdaState {
    pub fn new(target: f64, adjustment_step: f64) -> Self {
        Self {
            p: 0.0,
            overfit_estimate: 0.0,
            target,
            adjustment_step,
        }
    }
}

impl Default for AdaState {
    /// Target 0.6; a step of 1e-4 lets `p` cross `[0,1]` in 10k updates.
    fn default() -> Self {
        Self::new(0.6, 1e-4)
    }
}

/// `r = mean(sign(outputs))`, `p ← clamp(p + step·sign(r − target), 0, 1)`.
pub fn ada_update(state: &AdaState, real_outputs: &[f32]) -> Result<AdaState> {
    if real_outputs.is_empty() {
        return Err(Error::Precondition("ADA update needs discriminator outputs".into()));
    }
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let r = real_outputs.iter().map(|&v| sign(v as f64)).sum::<f64>() / real_outputs.len() as f64;
    Ok(AdaState {
        p: (state.p + state.adjustment_step * sign(r - state.target)).clamp(0.0, 1.0),
        overfit_estimate: r,
        ..*state
    })
}

/// Applies horizontal flip, integer translation (wrapping, at most 1/8 of
/// the side) and brightness/contrast jitter, each independently with
/// probability `p` per image. Built from differentiable tensor ops so
/// gradients reach generated images.
pub fn augment(images: &Tensor, p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(images.clone());
    }
    let (b, _, h, w) = images.dims4()?;
    let max_shift = (h.min(w) / 8) as i64;
    let index = |v: Vec<u32>| -> Result<Tensor> {
        let n = v.len();
        Ok(Tensor::from_vec(v, n, &Device::Cpu)?)
    };
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut x = images.narrow(0, i, 1)?;
        if rng.gen_bool(p) {
            x = x.index_select(&index((0..w as u32).rev().collect())?, 3)?;
        }
        if rng.gen_bool(p) && max_shift > 0 {
            let dx = rng.gen_range(-max_shift..=max_shift);
            let dy = rng.gen_range(-max_shift..=max_shift);
            let roll = |n: usize, d: i64| -> Vec<u32> { (0..n as i64).map(|j| (j - d).rem_euclid(n as i64) as u32).collect() };
            x = x.index_select(&index(roll(w, dx))?, 3)?.index_select(&index(roll(h, dy))?, 2)?;
        }
        if rng.gen_bool(p) {
            let shift: f64 = rng.sample::<f64, _>(StandardNormal) * 0.2;
            x = (x + shift)?;
        }
        if rng.gen_bool(p) {
            let scale = (rng.sample::<f64, _>(StandardNormal) * 0.5 * std::f64::consts::LN_2).exp();
            let mean = x.mean_all()?;
            x = (x.broadcast_sub(&mean)? * scale)?.broadcast_add(&mean)?;
        }
        out.push(x);
    }
    Ok(Tensor::cat(&out, 0)?)
}
