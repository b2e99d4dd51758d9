use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EstimatorConfig, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Uniform,
    Zeros,
    Ones,
}

/// Canonical parameter table `(name, shape, init)` of a configuration.
pub(crate) fn parameter_specs(cfg: &EstimatorConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff) = (cfg.d_model, cfg.ff_dim);
    let mut v: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let linear = |v: &mut Vec<_>, name: &str, out: usize, inp: usize, bias: bool| {
        v.push((format!("{}.weight", name), vec![out, inp], Init::Uniform));
        if bias {
            v.push((format!("{}.bias", name), vec![out], Init::Zeros));
        }
    };
    let norm = |v: &mut Vec<(String, Vec<usize>, Init)>, name: &str| {
        v.push((format!("{}.gain", name), vec![d], Init::Ones));
        v.push((format!("{}.bias", name), vec![d], Init::Zeros));
    };
    linear(&mut v, "embed", d, cfg.input_dim(), true);
    for b in 0..cfg.n_blocks {
        let p = format!("blocks.{}", b);
        if cfg.variant == Variant::Tac {
            linear(&mut v, &format!("{}.tac.l1", p), d / 2, d, false);
            linear(&mut v, &format!("{}.tac.l2", p), d / 2, d, false);
        }
        norm(&mut v, &format!("{}.ln1", p));
        for w in ["wq", "wk", "wv", "wo"] {
            linear(&mut v, &format!("{}.attn.{}", p, w), d, d, true);
        }
        norm(&mut v, &format!("{}.ln2", p));
        linear(&mut v, &format!("{}.ffn.w1", p), ff, d, true);
        linear(&mut v, &format!("{}.ffn.w2", p), d, ff, true);
    }
    norm(&mut v, "final_ln");
    for head in ["head_speech", "head_noise"] {
        linear(&mut v, &format!("{}.wq", head), d, d, true);
        linear(&mut v, &format!("{}.wk", head), d, d, true);
    }
    v
}

/// Named parameter tensors of one estimator, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: EstimatorConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelWeights {
    /// Builds a weight set from named tensors, requiring exactly the
    /// parameters of `config` with matching shapes.
    pub fn new(config: EstimatorConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let specs = parameter_specs(&config);
        if named.len() != specs.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                named.len()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = vec![None; specs.len()];
        for (name, t) in named {
            let k = specs
                .iter()
                .position(|s| s.0 == name)
                .ok_or_else(|| Error::Contract(format!("unexpected parameter `{}`", name)))?;
            if t.shape() != specs[k].1.as_slice() || t.is_complex() {
                return Err(Error::Contract(format!(
                    "parameter `{}` has shape {:?}, expected real {:?}",
                    name,
                    t.shape(),
                    specs[k].1
                )));
            }
            if slots[k].replace(t).is_some() {
                return Err(Error::Contract(format!("parameter `{}` given twice", name)));
            }
        }
        Ok(ModelWeights {
            config,
            names: specs.into_iter().map(|s| s.0).collect(),
            tensors: slots.into_iter().map(|t| t.unwrap()).collect(),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    /// Replaces the value of one parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{}`", name)))?;
        if value.shape() != self.tensors[i].shape() || value.is_complex() {
            return Err(Error::dim(format!("parameter `{}` shape mismatch", name)));
        }
        self.tensors[i] = value;
        Ok(())
    }

    /// Mutable access to every parameter value (shapes must be preserved).
    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

/// Uniform Glorot initialization for weight matrices, zero biases, unit
/// layer-norm gains.
pub fn init_weights(config: &EstimatorConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let named = parameter_specs(config)
        .into_iter()
        .map(|(name, shape, init)| {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform => {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
            };
            Ok((name, Tensor::real(&shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::new(config.clone(), named)
}
