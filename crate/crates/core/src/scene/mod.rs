//! Shoebox room simulation of moving-speaker scenes.

mod geometry;
mod render;
mod rir;
mod sampling;
mod source;

pub use geometry::{sample_channel_config, ArrayGeometry, ChannelConfig, Point};
pub use render::{
    mix_at_snr, render_moving_source, render_scene, render_scene_with, render_static_source, utterance_rng,
    SceneRender, SceneSpec,
};
pub use rir::{energy_decay_curve, estimate_t60, sabine_beta, simulate_rir, RirSynth, SINC_TAPS, SPEED_OF_SOUND};
pub use sampling::{sample_scene, SceneDistribution};
pub use source::{noise_like, speech_like, white_noise};
