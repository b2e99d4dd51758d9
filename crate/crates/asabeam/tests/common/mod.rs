#![allow(dead_code)]

use std::path::Path;

use asabeam::config::RunConfig;
use asabeam_core::dsp::StftConfig;
use asabeam_core::estimator::{EstimatorConfig, Variant};
use asabeam_core::features::FeatureKind;
use asabeam_core::scene::SceneDistribution;
use asabeam_core::training::TrainConfig;

/// Quarter-second 8 kHz scenes: fast to simulate and to train on.
pub fn tiny_distribution() -> SceneDistribution {
    SceneDistribution {
        t60_range: [0.1, 0.2],
        duration_s: 0.25,
        sample_rate: 8000,
        n_traj_points: 4,
        ..SceneDistribution::default()
    }
}

pub fn tiny_stft() -> StftConfig {
    StftConfig { frame_len: 128, hop: 64 }
}

pub fn tiny_estimator(variant: Variant, channels: Option<usize>) -> EstimatorConfig {
    EstimatorConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        ff_dim: 12,
        ..EstimatorConfig::new(variant, FeatureKind::Magipd, tiny_stft().num_bins(), channels)
    }
}

pub fn tiny_train(variant: Variant, channels: Option<usize>, steps: usize) -> TrainConfig {
    TrainConfig {
        stft: tiny_stft(),
        batch_size: 2,
        steps,
        ..TrainConfig::new(tiny_estimator(variant, channels))
    }
}

pub fn tiny_run_config(seed: u64, train: Option<TrainConfig>) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        scene: tiny_distribution(),
        train,
        ..RunConfig::default()
    };
    cfg.evaluate.stft = tiny_stft();
    cfg.evaluate.filter_len = 32;
    cfg
}

pub fn write_config(path: &Path, cfg: &RunConfig) {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}
