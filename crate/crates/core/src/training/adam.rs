use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::estimator::ModelWeights;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// A zero learning rate is allowed and freezes the weights.
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
            || !unit(self.beta1)
            || !unit(self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {:?}", self)));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let zeros: Vec<Tensor> = weights.tensors().iter().map(Tensor::zeros_like).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check(&self, weights: &ModelWeights) -> Result<()> {
        let ok = self.m.len() == weights.len()
            && self.v.len() == weights.len()
            && weights
                .tensors()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(w, (m, v))| w.shape() == m.shape() && w.shape() == v.shape());
        if !ok {
            return Err(Error::dim("optimizer moments do not match the parameters"));
        }
        Ok(())
    }

    /// Bias-corrected Adam update in place.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::dim("parameter, gradient and moment counts differ"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if g.shape() != p.shape() {
                return Err(Error::dim(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (m.re_mut(), v.re_mut());
            for (i, w) in p.re_mut().iter_mut().enumerate() {
                let gi = g.re()[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                *w -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global ℓ2 norm is at most `max_norm`
/// (0 disables); returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.re().iter().chain(g.im().unwrap_or(&[])).map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.re_mut() {
                *v *= s;
            }
            if let Some(im) = g.im_mut() {
                for v in im {
                    *v *= s;
                }
            }
        }
    }
    norm
}
