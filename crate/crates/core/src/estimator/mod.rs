//! Attention-weight estimator: a transformer trunk (optionally interleaved
//! with transform-average-concatenate blocks) and two single-head attention
//! heads whose score matrices are the speech and noise aggregation weights.

mod model;
mod weights;

use alloc::format;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureLayout};
use crate::tensor::Tensor;

pub use model::{
    estimate_attention_weights, forward, mha_encoder_block, positional_encoding, sha_head, tac_block, Params,
};
pub use weights::{init_weights, ModelWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Flat multichannel features; the channel count is fixed at build time.
    Concat,
    /// Per-channel streams with TAC; any channel count.
    Tac,
}

fn default_d_model() -> usize {
    64
}
fn default_heads() -> usize {
    4
}
fn default_blocks() -> usize {
    2
}
fn default_ff() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub variant: Variant,
    pub feature_kind: FeatureKind,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_ff")]
    pub ff_dim: usize,
    /// Frequency bins F of the input features.
    pub num_bins: usize,
    /// Channel count C of the concat variant; ignored by the TAC variant.
    #[serde(default)]
    pub channels: Option<usize>,
}

impl EstimatorConfig {
    pub fn new(variant: Variant, feature_kind: FeatureKind, num_bins: usize, channels: Option<usize>) -> Self {
        EstimatorConfig {
            variant,
            feature_kind,
            d_model: default_d_model(),
            n_heads: default_heads(),
            n_blocks: default_blocks(),
            ff_dim: default_ff(),
            num_bins,
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: alloc::string::String| Err(Error::Config(m));
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return cfg(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return cfg(format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.ff_dim == 0 || self.num_bins == 0 {
            return cfg("ff_dim and num_bins must be positive".into());
        }
        match (self.variant, self.feature_kind, self.channels) {
            (Variant::Tac, FeatureKind::Iscm, _) => {
                cfg("the TAC variant needs per-channel features; ISCM features are inherently multichannel".into())
            }
            (Variant::Concat, _, None) | (Variant::Concat, _, Some(0)) => {
                cfg("the concat variant needs a fixed channel count".into())
            }
            _ => Ok(()),
        }
    }

    /// Per-frame input dimension of the embedding layer.
    pub fn input_dim(&self) -> usize {
        let f = self.num_bins;
        match (self.variant, self.feature_kind) {
            (Variant::Tac, _) => 6 * f,
            (Variant::Concat, FeatureKind::Magipd) => 6 * f * self.channels.unwrap_or(0),
            (Variant::Concat, FeatureKind::Iscm) => {
                let c = self.channels.unwrap_or(0);
                4 * f * c * c
            }
        }
    }

    /// Feature layout the estimator consumes.
    pub fn layout(&self) -> FeatureLayout {
        match (self.variant, self.feature_kind) {
            (Variant::Tac, _) => FeatureLayout::MagipdStreams,
            (Variant::Concat, FeatureKind::Magipd) => FeatureLayout::MagipdCat,
            (Variant::Concat, FeatureKind::Iscm) => FeatureLayout::IscmCat,
        }
    }
}

/// Row-stochastic `[T, T]` aggregation weights for speech and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    speech: Tensor,
    noise: Tensor,
}

impl AttentionWeights {
    /// Checks shape, non-negativity and unit row sums (within 1e-9).
    pub fn new(speech: Tensor, noise: Tensor) -> Result<Self> {
        for t in [&speech, &noise] {
            let s = t.shape();
            if s.len() != 2 || s[0] != s[1] || t.is_complex() {
                return Err(Error::dim(format!("attention weights must be real [T, T], got {:?}", s)));
            }
            for row in t.re().chunks(s[1].max(1)) {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Contract("attention rows must be non-negative and sum to 1".into()));
                }
            }
        }
        if speech.shape() != noise.shape() {
            return Err(Error::dim("speech and noise attention differ in size"));
        }
        Ok(AttentionWeights { speech, noise })
    }

    /// Same weights for speech and noise.
    pub fn shared(rows: Tensor) -> Result<Self> {
        AttentionWeights::new(rows.clone(), rows)
    }

    pub fn speech(&self) -> &Tensor {
        &self.speech
    }

    pub fn noise(&self) -> &Tensor {
        &self.noise
    }

    pub fn num_frames(&self) -> usize {
        self.speech.shape()[0]
    }
}
