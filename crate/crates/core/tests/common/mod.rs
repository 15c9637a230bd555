#![allow(dead_code)]

use fcd_core::cmla::CmlaConfig;
use fcd_core::dataset::{synthesize, SynthConfig};
use fcd_core::harness::TrainConfig;
use fcd_core::model::{DecoderConfig, EncoderConfig, NetworkConfig};
use fcd_core::sample::BitemporalSample;

/// A model small enough to train for a few steps in a unit test.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 2,
        batch_size: 2,
        model: NetworkConfig {
            encoder: EncoderConfig {
                stage_channels: [8, 12, 16, 24],
                blocks_per_stage: 1,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                width: 8,
                ..DecoderConfig::default()
            },
            cmla: CmlaConfig {
                dim: 16,
                ..CmlaConfig::default()
            },
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
}

pub fn tiny_samples(n: usize, patch: usize) -> Vec<BitemporalSample> {
    let cfg = SynthConfig {
        n_samples: n,
        patch_size: patch,
        ..SynthConfig::default()
    };
    synthesize(&cfg).unwrap().into_iter().map(|s| s.sample).collect()
}
