//! End-to-end training of the attention-weight estimator through the
//! differentiable beamforming pipeline.

mod adam;

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use num_traits::Float;

pub use adam::{clip_global_norm, AdamConfig, AdamState};

use crate::beamform::{aggregate_on_tape, apply_on_tape, mvdr_on_tape, spectrogram_ftc, DEFAULT_LOADING};
use crate::dsp::{stft, AudioBuffer, IstftMap, Spectrogram, StftConfig};
use crate::error::{Error, Result, StageExt};
use crate::estimator::{forward, EstimatorConfig, ModelWeights, Params, Variant};
use crate::features::{compute_iscm, extract_features, oracle_mask_pair, MaskKind};
use crate::scene::{sample_channel_config, utterance_rng, ChannelConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Guard added to both energies of the SNR loss.
pub const SNR_EPS: f64 = 1e-8;

/// `-10 log10((‖s‖² + ε) / (‖s - ŝ‖² + ε))`, recorded on the estimate's tape.
pub fn snr_loss<'t>(estimate: &Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    if estimate.shape().len() != 1 || estimate.shape() != target.shape() || estimate.is_complex() || target.is_complex()
    {
        return Err(Error::dim(format!(
            "SNR loss needs equal-length real signals, got {:?} and {:?}",
            estimate.shape(),
            target.shape()
        )));
    }
    let energy: f64 = target.re().iter().map(|v| v * v).sum();
    let s = estimate.tape().constant(target.clone());
    let err = s.sub(estimate)?.abs2().sum();
    let db = 10.0 / core::f64::consts::LN_10;
    Ok(err.add_scalar(SNR_EPS).ln()?.scale(db).add_scalar(-10.0 * (energy + SNR_EPS).log10()))
}

/// Plain evaluation of [`snr_loss`].
pub fn snr_loss_value(estimate: &[f64], target: &[f64]) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::dim(format!(
            "SNR loss needs equal lengths, got {} and {}",
            estimate.len(),
            target.len()
        )));
    }
    let energy: f64 = target.iter().map(|v| v * v).sum();
    let err: f64 = estimate.iter().zip(target).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(-10.0 * ((energy + SNR_EPS) / (err + SNR_EPS)).log10())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRandomization {
    /// Every channel in its stored order.
    #[default]
    Fixed,
    /// A fresh channel count and permutation for every minibatch.
    Random,
}

fn default_batch() -> usize {
    4
}
fn default_steps() -> usize {
    200
}
fn default_clip() -> f64 {
    5.0
}
fn default_loading() -> f64 {
    DEFAULT_LOADING
}
fn default_max_seconds() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub mask_kind: MaskKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Global gradient-norm limit; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub channel_randomization: ChannelRandomization,
    #[serde(default)]
    pub seed: u64,
    /// Steps between checkpoints; 0 writes none.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_loading")]
    pub loading: f64,
    /// Utterances are clipped to this many seconds before training.
    #[serde(default = "default_max_seconds")]
    pub max_seconds: f64,
}

impl TrainConfig {
    pub fn new(estimator: EstimatorConfig) -> Self {
        TrainConfig {
            estimator,
            stft: StftConfig::default(),
            mask_kind: MaskKind::default(),
            batch_size: default_batch(),
            steps: default_steps(),
            adam: AdamConfig::default(),
            clip_norm: default_clip(),
            channel_randomization: ChannelRandomization::Fixed,
            seed: 0,
            checkpoint_every: 0,
            loading: default_loading(),
            max_seconds: default_max_seconds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.stft.validate().map_err(|e| Error::Config(format!("{}", e)))?;
        if self.estimator.num_bins != self.stft.num_bins() {
            return Err(Error::Config(format!(
                "estimator expects {} bins but frame length {} gives {}",
                self.estimator.num_bins,
                self.stft.frame_len,
                self.stft.num_bins()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) || !(self.loading >= 0.0) {
            return Err(Error::Config("clip_norm and loading must be non-negative".into()));
        }
        if !(self.max_seconds > 0.0) {
            return Err(Error::Config("max_seconds must be positive".into()));
        }
        if self.estimator.variant == Variant::Concat && self.channel_randomization == ChannelRandomization::Random {
            return Err(Error::Config(
                "the concat variant has a fixed channel count and cannot train with random channel configurations"
                    .into(),
            ));
        }
        self.adam.validate()
    }
}

/// One simulated utterance with its ground-truth images.
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub id: String,
    pub mixture: AudioBuffer,
    pub speech_image: AudioBuffer,
    pub noise_image: AudioBuffer,
    /// Reference channel in the stored channel order.
    pub reference: usize,
}

impl TrainingExample {
    /// The same utterance clipped to at most `len` samples.
    pub fn truncated(&self, len: usize) -> TrainingExample {
        TrainingExample {
            id: self.id.clone(),
            mixture: self.mixture.truncated(len),
            speech_image: self.speech_image.truncated(len),
            noise_image: self.noise_image.truncated(len),
            reference: self.reference,
        }
    }
}

/// A [`TrainingExample`] with its spectrograms computed once.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub id: String,
    pub mixture: Spectrogram,
    pub speech: Spectrogram,
    pub noise: Spectrogram,
    pub speech_image: AudioBuffer,
    pub reference: usize,
}

impl PreparedExample {
    pub fn new(example: &TrainingExample, config: StftConfig) -> Result<Self> {
        let c = example.mixture.num_channels();
        for img in [&example.speech_image, &example.noise_image] {
            if img.num_channels() != c || img.len() != example.mixture.len() {
                return Err(Error::dim(format!("images of `{}` do not match its mixture", example.id)));
            }
        }
        if example.reference >= c {
            return Err(Error::Input(format!(
                "reference {} of `{}` out of range for {} channels",
                example.reference, example.id, c
            )));
        }
        Ok(PreparedExample {
            id: example.id.clone(),
            mixture: stft(&example.mixture, config)?,
            speech: stft(&example.speech_image, config)?,
            noise: stft(&example.noise_image, config)?,
            speech_image: example.speech_image.clone(),
            reference: example.reference,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.mixture.num_channels()
    }
}

/// Differentiable loss of one utterance under a channel configuration:
/// oracle masks, features, attention, aggregation, MVDR, iSTFT, SNR loss.
pub fn utterance_loss<'t>(
    params: &Params<'t>,
    example: &PreparedExample,
    channels: &ChannelConfig,
    config: &TrainConfig,
) -> Result<Var<'t>> {
    channels.check_parent(example.num_channels())?;
    let idx = channels.indices();
    let reference = channels.remap_reference(example.reference);
    let mix = example.mixture.select(idx)?;
    let masks = oracle_mask_pair(&example.speech.select(idx)?, &example.noise.select(idx)?, config.mask_kind)
        .stage("masks")?;
    let est = params.config();
    let features = extract_features(&mix, &masks, est.feature_kind, est.variant == Variant::Tac).stage("features")?;
    let (a_s, a_n) = forward(params.vars()[0].tape(), params, &features).stage("estimator")?;
    let iscm = compute_iscm(&mix, &masks).stage("iscm")?;
    let px = aggregate_on_tape(&iscm.speech, &a_s).stage("aggregate")?;
    let pn = aggregate_on_tape(&iscm.noise, &a_n).stage("aggregate")?;
    let (w, _) = mvdr_on_tape(&px, &pn, reference, config.loading).stage("mvdr")?;
    let y = apply_on_tape(&w, &spectrogram_ftc(&mix)?).stage("apply")?;
    let map = Rc::new(IstftMap::new(mix.config(), mix.num_samples())?);
    let out = y.linear_map(map).stage("istft")?;
    let target = example.speech_image.channel(idx[reference]).to_vec();
    snr_loss(&out, &Tensor::real(&[target.len()], target)?).stage("loss")
}

/// Which utterances and channels a step uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan {
    pub indices: Vec<usize>,
    pub channels: ChannelConfig,
}

/// Draws the minibatch and channel configuration of `step`; depends only on
/// `(seed, step)`.
pub fn plan_step(config: &TrainConfig, step: u64, num_examples: usize, num_channels: usize) -> Result<StepPlan> {
    if num_examples == 0 {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut rng = utterance_rng(config.seed, step);
    let mut all: Vec<usize> = (0..num_examples).collect();
    let (chosen, _) = all.partial_shuffle(&mut rng, config.batch_size.min(num_examples));
    let indices = chosen.to_vec();
    let channels = match config.channel_randomization {
        ChannelRandomization::Fixed => ChannelConfig::identity(num_channels),
        ChannelRandomization::Random => sample_channel_config(num_channels, &mut rng)?,
    };
    Ok(StepPlan { indices, channels })
}

/// Loss and parameter gradients of the batch mean.
pub fn batch_gradients(
    weights: &ModelWeights,
    data: &[PreparedExample],
    plan: &StepPlan,
    config: &TrainConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let params = Params::new(&tape, weights, true);
    let mut total: Option<Var<'_>> = None;
    for &i in &plan.indices {
        let ex = &data[i];
        let loss = utterance_loss(&params, ex, &plan.channels, config)?;
        let v = loss.value().item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {} for utterance `{}` with channels {:?}",
                v,
                ex.id,
                plan.channels.indices()
            )));
        }
        total = Some(match total {
            None => loss,
            Some(t) => t.add(&loss)?,
        });
    }
    let mean = total
        .ok_or_else(|| Error::Input("empty minibatch".into()))?
        .scale(1.0 / plan.indices.len() as f64);
    let grads = mean.backward()?;
    let g = params
        .vars()
        .iter()
        .map(|v| grads.get(v).cloned().ok_or_else(|| Error::Contract("missing parameter gradient".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((mean.value().item(), g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub c_prime: usize,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Estimator weights plus optimizer state; advances one minibatch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    weights: ModelWeights,
    adam: AdamState,
}

impl Trainer {
    pub fn new(config: TrainConfig, weights: ModelWeights) -> Result<Self> {
        let adam = AdamState::new(&weights);
        Trainer::resume(config, weights, adam)
    }

    /// Continues from saved weights and optimizer moments.
    pub fn resume(config: TrainConfig, weights: ModelWeights, adam: AdamState) -> Result<Self> {
        config.validate()?;
        if weights.config() != &config.estimator {
            return Err(Error::Config("weights were built for a different estimator configuration".into()));
        }
        adam.check(&weights)?;
        Ok(Trainer { config, weights, adam })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Steps completed so far.
    pub fn step_index(&self) -> u64 {
        self.adam.step
    }

    pub fn is_done(&self) -> bool {
        self.adam.step >= self.config.steps as u64
    }

    /// Checks that every example fits the estimator and shares a channel count.
    pub fn check_data(&self, data: &[PreparedExample]) -> Result<usize> {
        let c = data.first().map(|d| d.num_channels()).ok_or_else(|| Error::Input("training set is empty".into()))?;
        for d in data {
            if d.num_channels() != c {
                return Err(Error::Input(format!(
                    "utterance `{}` has {} channels, expected {}",
                    d.id,
                    d.num_channels(),
                    c
                )));
            }
            if d.mixture.config() != self.config.stft {
                return Err(Error::Config(format!("utterance `{}` uses different STFT settings", d.id)));
            }
        }
        if self.config.estimator.variant == Variant::Concat && self.config.estimator.channels != Some(c) {
            return Err(Error::dim(format!(
                "concat estimator built for {:?} channels but the data has {}",
                self.config.estimator.channels, c
            )));
        }
        if self.config.channel_randomization == ChannelRandomization::Random && c < 2 {
            return Err(Error::Config("random channel configurations need at least 2 channels".into()));
        }
        Ok(c)
    }

    /// One optimizer update on the minibatch planned for the current step.
    pub fn step(&mut self, data: &[PreparedExample]) -> Result<StepRecord> {
        let c = self.check_data(data)?;
        let step = self.adam.step;
        let plan = plan_step(&self.config, step, data.len(), c)?;
        let (loss, mut grads) = batch_gradients(&self.weights, data, &plan, &self.config)?;
        let grad_norm = clip_global_norm(&mut grads, self.config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient norm at step {}", step)));
        }
        self.adam.update(&self.config.adam, self.weights.values_mut(), &grads)?;
        Ok(StepRecord {
            step,
            loss,
            c_prime: plan.channels.len(),
            grad_norm,
        })
    }

    pub fn into_parts(self) -> (ModelWeights, AdamState) {
        (self.weights, self.adam)
    }
}
