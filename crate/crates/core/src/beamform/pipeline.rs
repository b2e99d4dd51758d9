use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

use super::aggregate::{aggregate_scm, default_lambda, recursive_scm, uniform_attention};
use super::mvdr::{apply_beamformer, beamformer_weights, DEFAULT_LOADING};
use crate::dsp::{istft, stft, AudioBuffer, StftConfig};
use crate::error::{Error, Result, StageExt};
use crate::estimator::{estimate_attention_weights, AttentionWeights, ModelWeights, Variant};
use crate::features::{compute_iscm, extract_features, oracle_mask_pair, MaskKind, MaskPair};

/// Time constant of the recursive baseline, seconds.
pub const RECURSIVE_TIME_CONSTANT: f64 = 1.6;

/// Where the speech and noise masks come from.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    /// Oracle masks from the speech and noise images of the mixture.
    Oracle {
        speech: &'a AudioBuffer,
        noise: &'a AudioBuffer,
        kind: MaskKind,
    },
    /// Precomputed `[F, T]` masks.
    Given(&'a MaskPair),
}

/// How instantaneous SCMs are aggregated over time.
#[derive(Clone, Copy, Debug)]
pub enum ScmMode<'a> {
    /// Attention rows from a trained estimator.
    Asa(&'a ModelWeights),
    /// Recursive smoothing; `None` uses the 1.6 s time constant.
    Recursive(Option<f64>),
    /// Whole-utterance average.
    Uniform,
    /// Caller-supplied attention rows.
    OracleAttn(&'a AttentionWeights),
}

impl ScmMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ScmMode::Asa(_) => "asa",
            ScmMode::Recursive(_) => "recursive",
            ScmMode::Uniform => "uniform",
            ScmMode::OracleAttn(_) => "oracle_attn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    pub stft: StftConfig,
    pub reference: usize,
    pub loading: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            stft: StftConfig::default(),
            reference: 0,
            loading: DEFAULT_LOADING,
        }
    }
}

/// Per-utterance record of how the MVDR solves went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub scm_mode: String,
    pub channels: usize,
    pub bins: usize,
    pub frames: usize,
    pub reference: usize,
    pub fallback_count: usize,
    pub fallback_rate: f64,
    /// Passthrough bins per frame.
    pub fallback_per_frame: Vec<usize>,
    pub condition_mean: f64,
    pub condition_max: f64,
}

#[derive(Clone, Debug)]
pub struct Enhanced {
    pub audio: AudioBuffer,
    pub diagnostics: Diagnostics,
    pub attention: AttentionWeights,
}

fn masks_for(source: MaskSource<'_>, mixture: &AudioBuffer, config: StftConfig) -> Result<MaskPair> {
    match source {
        MaskSource::Given(m) => Ok(m.clone()),
        MaskSource::Oracle { speech, noise, kind } => {
            for img in [speech, noise] {
                if img.num_channels() != mixture.num_channels() || img.len() != mixture.len() {
                    return Err(Error::dim(format!(
                        "oracle image is {} x {} but the mixture is {} x {}",
                        img.num_channels(),
                        img.len(),
                        mixture.num_channels(),
                        mixture.len()
                    )));
                }
            }
            oracle_mask_pair(&stft(speech, config)?, &stft(noise, config)?, kind)
        }
    }
}

/// STFT, masks, ISCMs, temporal aggregation, MVDR, filtering and iSTFT.
pub fn enhance(
    mixture: &AudioBuffer,
    masks: MaskSource<'_>,
    mode: ScmMode<'_>,
    config: &EnhanceConfig,
) -> Result<Enhanced> {
    let c = mixture.num_channels();
    if config.reference >= c {
        return Err(Error::Input(format!(
            "reference channel {} out of range for {} channels",
            config.reference, c
        )))
        .stage("config");
    }
    let spec = stft(mixture, config.stft).stage("stft")?;
    let masks = masks_for(masks, mixture, config.stft).stage("masks")?;
    let iscm = compute_iscm(&spec, &masks).stage("iscm")?;
    let frames = spec.num_frames();

    let attention = match mode {
        ScmMode::Asa(weights) => {
            let cfg = weights.config();
            let features =
                extract_features(&spec, &masks, cfg.feature_kind, cfg.variant == Variant::Tac).stage("features")?;
            Some(estimate_attention_weights(&features, weights).stage("estimator")?)
        }
        ScmMode::Uniform => Some(AttentionWeights::shared(uniform_attention(frames)).stage("aggregate")?),
        ScmMode::OracleAttn(a) => Some(a.clone()),
        ScmMode::Recursive(_) => None,
    };
    let (scm, attention) = match (mode, attention) {
        (ScmMode::Recursive(lambda), _) => {
            let lambda = lambda.unwrap_or_else(|| {
                default_lambda(config.stft.hop, mixture.sample_rate(), RECURSIVE_TIME_CONSTANT)
            });
            let scm = recursive_scm(&iscm, lambda).stage("aggregate")?;
            let rows = super::aggregate::exponential_attention(frames, lambda);
            (scm, AttentionWeights::shared(rows).stage("aggregate")?)
        }
        (_, Some(a)) => (aggregate_scm(&iscm, &a).stage("aggregate")?, a),
        (_, None) => unreachable!("attention computed for every non-recursive mode"),
    };

    let (w, stats) = beamformer_weights(&scm, config.reference, config.loading).stage("mvdr")?;
    let out = apply_beamformer(&spec, &w).stage("apply")?;
    let audio = istft(&out).stage("istft")?;

    let bins = spec.num_bins();
    let mut per_frame = vec![0usize; frames];
    for (k, &flag) in stats.fallback.iter().enumerate() {
        if flag {
            per_frame[k % frames] += 1;
        }
    }
    let count: usize = per_frame.iter().sum();
    let n = stats.condition.len().max(1) as f64;
    let diagnostics = Diagnostics {
        scm_mode: mode.name().into(),
        channels: c,
        bins,
        frames,
        reference: config.reference,
        fallback_count: count,
        fallback_rate: count as f64 / (bins * frames).max(1) as f64,
        fallback_per_frame: per_frame,
        condition_mean: stats.condition.iter().sum::<f64>() / n,
        condition_max: stats.condition.iter().copied().fold(0.0, f64::max),
    };
    Ok(Enhanced {
        audio,
        diagnostics,
        attention,
    })
}
