use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::weights::ModelWeights;
use super::{AttentionWeights, EstimatorConfig, Variant};
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::tensor::{Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Estimator parameters recorded on a tape.
pub struct Params<'t> {
    config: EstimatorConfig,
    names: Vec<String>,
    vars: Vec<Var<'t>>,
}

impl<'t> Params<'t> {
    /// Records every parameter on `tape`, as differentiable leaves when
    /// `trainable` and as constants otherwise.
    pub fn new(tape: &'t Tape, weights: &ModelWeights, trainable: bool) -> Self {
        let vars = weights
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Params {
            config: weights.config().clone(),
            names: weights.names().to_vec(),
            vars,
        }
    }

    /// Parameters from variables already on a tape, named in canonical order.
    pub fn from_vars(config: &EstimatorConfig, names: &[String], vars: &[Var<'t>]) -> Self {
        Params {
            config: config.clone(),
            names: names.to_vec(),
            vars: vars.to_vec(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.names
            .iter()
            .position(|n| n == name)
            .and_then(|i| self.vars.get(i).copied())
            .ok_or_else(|| Error::Contract(format!("missing parameter `{}`", name)))
    }

    /// Parameter variables in canonical order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }
}

fn linear<'t>(x: &Var<'t>, p: &Params<'t>, name: &str, bias: bool) -> Result<Var<'t>> {
    let w = p.get(&format!("{}.weight", name))?;
    let y = x.matmul(&w.transpose()?)?;
    if bias {
        y.add(&p.get(&format!("{}.bias", name))?)
    } else {
        Ok(y)
    }
}

fn norm<'t>(x: &Var<'t>, p: &Params<'t>, name: &str) -> Result<Var<'t>> {
    x.layer_norm(LN_EPS)?
        .mul(&p.get(&format!("{}.gain", name))?)?
        .add(&p.get(&format!("{}.bias", name))?)
}

/// Sinusoidal position code `[T, D]`: sin on even, cos on odd features.
pub fn positional_encoding(frames: usize, d_model: usize) -> Tensor {
    let mut data = alloc::vec![0.0; frames * d_model];
    for t in 0..frames {
        for i in 0..d_model / 2 {
            let rate = 10000f64.powf(-((2 * i) as f64) / d_model as f64);
            data[t * d_model + 2 * i] = (t as f64 * rate).sin();
            data[t * d_model + 2 * i + 1] = (t as f64 * rate).cos();
        }
    }
    Tensor::real(&[frames, d_model], data).expect("consistent shape")
}

/// Transform-average-concatenate over streams `[C, T, D]`: the first half of
/// each output is the stream's own `ReLU(L1 z)`, the second half the mean of
/// `ReLU(L2 z)` over all streams.
pub fn tac_block<'t>(z: &Var<'t>, l1: &Var<'t>, l2: &Var<'t>) -> Result<Var<'t>> {
    let s = z.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("TAC input must be [C, T, D], got {:?}", s)));
    }
    let d = s[2];
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("TAC needs an even feature size, got {}", d)));
    }
    for l in [l1, l2] {
        if l.shape() != [d / 2, d] {
            return Err(Error::dim(format!("TAC transform must be [{}, {}], got {:?}", d / 2, d, l.shape())));
        }
    }
    let own = z.matmul(&l1.transpose()?)?.relu()?;
    let shared = z.matmul(&l2.transpose()?)?.relu()?.mean_axis(0)?;
    let shared = shared.reshape(&[1, s[1], d / 2])?.broadcast_to(&[s[0], s[1], d / 2])?;
    Var::concat(&[own, shared], 2)
}

/// Multi-head self-attention over the second-to-last axis of `x` (`[..., T, D]`).
fn mha<'t>(x: &Var<'t>, p: &Params<'t>, prefix: &str, heads: usize) -> Result<Var<'t>> {
    let s = x.shape();
    let nd = s.len();
    let (t, d) = (s[nd - 2], s[nd - 1]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{} heads do not divide d_model {}", heads, d)));
    }
    let dh = d / heads;
    let mut split_shape = s[..nd - 2].to_vec();
    split_shape.extend_from_slice(&[t, heads, dh]);
    // [..., T, H, dh] -> [..., H, T, dh]
    let mut order: Vec<usize> = (0..nd - 2).collect();
    order.extend_from_slice(&[nd - 1, nd - 2, nd]);
    let split = |name: &str| -> Result<Var<'t>> {
        linear(x, p, &format!("{}.{}", prefix, name), true)?
            .reshape(&split_shape)?
            .permute(&order)
    };
    let (q, k, v) = (split("wq")?, split("wk")?, split("wv")?);
    let attn = q.matmul(&k.transpose()?)?.scale(1.0 / (dh as f64).sqrt()).softmax_rows()?;
    let merged = attn.matmul(&v)?.permute(&order)?.reshape(&s)?;
    linear(&merged, p, &format!("{}.wo", prefix), true)
}

/// Pre-norm transformer encoder block: `x + MHA(LN(x))`, then `+ FFN(LN(·))`.
pub fn mha_encoder_block<'t>(x: &Var<'t>, p: &Params<'t>, block: usize) -> Result<Var<'t>> {
    let pre = format!("blocks.{}", block);
    let heads = p.config().n_heads;
    let h = x.add(&mha(&norm(x, p, &format!("{}.ln1", pre))?, p, &format!("{}.attn", pre), heads)?)?;
    let ff = linear(&norm(&h, p, &format!("{}.ln2", pre))?, p, &format!("{}.ffn.w1", pre), true)?.relu()?;
    h.add(&linear(&ff, p, &format!("{}.ffn.w2", pre), true)?)
}

/// Single-head attention score matrix `softmax(Q Kᵀ / √D)` of `[T, D]`.
pub fn sha_head<'t>(x: &Var<'t>, p: &Params<'t>, head: &str) -> Result<Var<'t>> {
    let d = *x.shape().last().unwrap();
    let q = linear(x, p, &format!("{}.wq", head), true)?;
    let k = linear(x, p, &format!("{}.wk", head), true)?;
    q.matmul(&k.transpose()?)?.scale(1.0 / (d as f64).sqrt()).softmax_rows()
}

fn check_input(features: &FeatureTensor, cfg: &EstimatorConfig) -> Result<()> {
    if features.layout() != cfg.layout() {
        return Err(Error::Contract(format!(
            "{:?} estimator expects {:?} features, got {:?}",
            cfg.variant,
            cfg.layout(),
            features.layout()
        )));
    }
    if features.dim() != cfg.input_dim() {
        return Err(Error::dim(format!(
            "estimator built for {}-dimensional input (F = {}, C = {:?}) got {} features",
            cfg.input_dim(),
            cfg.num_bins,
            cfg.channels,
            features.dim()
        )));
    }
    if features.num_frames() == 0 {
        return Err(Error::Input("no frames".into()));
    }
    Ok(())
}

/// Speech and noise attention matrices `[T, T]` recorded on the tape.
pub fn forward<'t>(tape: &'t Tape, p: &Params<'t>, features: &FeatureTensor) -> Result<(Var<'t>, Var<'t>)> {
    let cfg = p.config();
    check_input(features, cfg)?;
    let t = features.num_frames();
    let x = tape.constant(features.values().clone());
    let pe = tape.constant(positional_encoding(t, cfg.d_model));
    let mut h = linear(&x, p, "embed", true)?.add(&pe)?;
    if cfg.variant == Variant::Tac {
        for b in 0..cfg.n_blocks {
            let l1 = p.get(&format!("blocks.{}.tac.l1.weight", b))?;
            let l2 = p.get(&format!("blocks.{}.tac.l2.weight", b))?;
            h = mha_encoder_block(&tac_block(&h, &l1, &l2)?, p, b)?;
        }
        h = h.mean_axis(0)?;
    } else {
        for b in 0..cfg.n_blocks {
            h = mha_encoder_block(&h, p, b)?;
        }
    }
    let h = norm(&h, p, "final_ln")?;
    Ok((sha_head(&h, p, "head_speech")?, sha_head(&h, p, "head_noise")?))
}

/// Inference-only forward pass.
pub fn estimate_attention_weights(features: &FeatureTensor, weights: &ModelWeights) -> Result<AttentionWeights> {
    let tape = Tape::new();
    let p = Params::new(&tape, weights, false);
    let (s, n) = forward(&tape, &p, features)?;
    AttentionWeights::new((*s.value()).clone(), (*n.value()).clone())
}
