use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerConfig;
use crate::dsd::{PhasePlan, SparsitySchedule};
use crate::error::{Error, Result};
use crate::transforms::OcclusionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    FullFaces,
    OccludedFaces,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::FullFaces => "full_faces",
            StageKind::OccludedFaces => "occluded_faces",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStageConfig {
    pub stage: StageKind,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub sparsity: SparsitySchedule,
    pub phase_plan: PhasePlan,
    pub occlusion: OcclusionMode,
    pub flip_augment: bool,
    pub seed: u64,
}

impl TrainStageConfig {
    pub fn validate(&self, num_conv: usize) -> Result<()> {
        self.optimizer.validate()?;
        if self.stage == StageKind::OccludedFaces && !self.occlusion.is_occluded() {
            return Err(Error::InvalidArgument(
                "an occluded-faces stage must use upper-half occlusion".into(),
            ));
        }
        if self.phase_plan.total_epochs() != self.epochs {
            return Err(Error::InvalidArgument(format!(
                "phase plan covers {} epochs but the stage has {}",
                self.phase_plan.total_epochs(),
                self.epochs
            )));
        }
        if self.sparsity.len() != num_conv {
            return Err(Error::InvalidArgument(format!(
                "sparsity schedule has {} rates for {num_conv} conv layers",
                self.sparsity.len()
            )));
        }
        Ok(())
    }
}
