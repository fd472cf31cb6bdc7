//! Named configurations. `vggface` and `vggf` carry the full-scale
//! fine-tuning recipes; `toy` is the desk-scale experiment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{StageKind, TrainStageConfig};
use super::optimizer::OptimizerConfig;
use crate::dsd::{build_sparsity_schedule, PhasePlan};
use crate::error::{Error, Result};
use crate::model::{
    build_toy_descriptor, build_vggf_descriptor, build_vggface_descriptor, mix_seed,
    ArchitectureDescriptor,
};
use crate::transforms::OcclusionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Vggface,
    Vggf,
    Toy,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Vggface => "vggface",
            PresetName::Vggf => "vggf",
            PresetName::Toy => "toy",
        }
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vggface" => Ok(PresetName::Vggface),
            "vggf" => Ok(PresetName::Vggf),
            "toy" => Ok(PresetName::Toy),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (vggface, vggf, toy)"
            ))),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: PresetName,
    pub descriptor: ArchitectureDescriptor,
    pub stage1: TrainStageConfig,
    pub stage2: TrainStageConfig,
    /// Multiplier applied after channel-mean subtraction.
    pub input_scale: f64,
}

/// Channel widths of the toy backbone.
pub const TOY_CHANNELS: [usize; 3] = [8, 16, 32];
pub const TOY_INPUT: usize = 32;

#[allow(clippy::too_many_arguments)]
fn stage(
    stage: StageKind,
    epochs: usize,
    lr: f64,
    batch: usize,
    min_lr: Option<f64>,
    sparsity: (f64, f64),
    num_conv: usize,
    seed: u64,
) -> TrainStageConfig {
    TrainStageConfig {
        stage,
        epochs,
        optimizer: OptimizerConfig {
            initial_lr: lr,
            momentum: 0.9,
            batch_size: batch,
            lr_drop_factor: 10.0,
            plateau_patience: 10,
            min_lr,
        },
        sparsity: build_sparsity_schedule(sparsity.0, sparsity.1, num_conv)
            .expect("preset ramp is valid"),
        phase_plan: PhasePlan::dsd(epochs, 1),
        occlusion: match stage {
            StageKind::FullFaces => OcclusionMode::NONE,
            StageKind::OccludedFaces => OcclusionMode::upper_half(0),
        },
        flip_augment: true,
        seed: match stage {
            StageKind::FullFaces => seed,
            StageKind::OccludedFaces => mix_seed(seed, 2),
        },
    }
}

pub fn preset(name: PresetName, seed: u64) -> Preset {
    use StageKind::*;
    match name {
        PresetName::Vggface => Preset {
            name,
            descriptor: build_vggface_descriptor(),
            stage1: stage(FullFaces, 50, 1e-4, 64, None, (0.2, 0.7), 13, seed),
            stage2: stage(
                OccludedFaces,
                40,
                1e-3,
                64,
                Some(1e-4),
                (0.2, 0.7),
                13,
                seed,
            ),
            input_scale: 1.0,
        },
        PresetName::Vggf => Preset {
            name,
            descriptor: build_vggf_descriptor(),
            stage1: stage(FullFaces, 800, 1e-3, 512, Some(1e-5), (0.2, 0.5), 5, seed),
            stage2: stage(
                OccludedFaces,
                80,
                1e-3,
                512,
                Some(1e-3),
                (0.2, 0.5),
                5,
                seed,
            ),
            input_scale: 1.0,
        },
        PresetName::Toy => Preset {
            name,
            descriptor: build_toy_descriptor(&TOY_CHANNELS, TOY_INPUT).expect("toy geometry"),
            stage1: stage(
                FullFaces,
                30,
                0.01,
                16,
                None,
                (0.2, 0.5),
                TOY_CHANNELS.len(),
                seed,
            ),
            stage2: stage(
                OccludedFaces,
                30,
                0.01,
                16,
                None,
                (0.2, 0.5),
                TOY_CHANNELS.len(),
                seed,
            ),
            input_scale: 1.0 / 64.0,
        },
    }
}
