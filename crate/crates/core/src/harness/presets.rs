//! Named configurations.

use super::config::TrainConfig;
use crate::cmla::CmlaConfig;
use crate::dataset::SynthConfig;
use crate::error::{CoreError, Result};
use crate::model::{DecoderConfig, EncoderConfig, NetworkConfig};

pub const PRESETS: [&str; 2] = ["synthetic", "paper"];

/// Desk-scale model and schedule for the generated data set.
pub fn synthetic() -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        epochs: 20,
        batch_size: 2,
        validate_every: 5,
        model: NetworkConfig {
            encoder: EncoderConfig {
                stage_channels: [16, 32, 64, 128],
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                width: 32,
                ..DecoderConfig::default()
            },
            cmla: CmlaConfig {
                dim: 128,
                ..CmlaConfig::default()
            },
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Generated data matching [`synthetic`]: 16 training pairs, seed 7.
pub fn synthetic_data() -> SynthConfig {
    SynthConfig {
        patch_size: 128,
        ..SynthConfig::default()
    }
}

/// Full-width model with the published optimisation schedule.
pub fn paper() -> TrainConfig {
    TrainConfig::default()
}

pub fn by_name(name: &str) -> Result<TrainConfig> {
    match name {
        "synthetic" => Ok(synthetic()),
        "paper" => Ok(paper()),
        _ => Err(CoreError::Config(format!(
            "unknown preset {name:?}; expected one of {}",
            PRESETS.join(", ")
        ))),
    }
}
