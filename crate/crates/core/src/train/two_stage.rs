use std::path::{Path, PathBuf};

use super::checkpoint::{save_checkpoint, Checkpoint, Provenance};
use super::config::TrainStageConfig;
use super::metrics::MetricsLog;
use super::stage::{train_stage, StageData, StageFailure, StageOutcome};
use crate::error::{Error, Result};
use crate::model::{ModelState, Preprocessing};

/// Where and how a run records its outputs.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub preset: String,
    pub seed: u64,
    pub config_snapshot: String,
    /// When set, checkpoints and metrics CSVs are written here.
    pub out_dir: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, stage_index: usize) -> PathBuf {
    dir.join(format!("stage{stage_index}.ckpt"))
}

pub fn metrics_path(dir: &Path, stage_index: usize) -> PathBuf {
    dir.join(format!("stage{stage_index}_metrics.csv"))
}

/// Runs one stage and, with an output directory, streams its metrics CSV
/// and writes its checkpoint. A failed stage still writes the last good
/// model.
pub fn run_stage(
    initial: ModelState,
    data: StageData<'_>,
    config: &TrainStageConfig,
    prep: &Preprocessing,
    ctx: &RunContext,
    stage_index: usize,
    parent: Option<String>,
) -> Result<StageOutcome> {
    let mut log = match &ctx.out_dir {
        Some(dir) => Some(MetricsLog::create(
            &metrics_path(dir, stage_index),
            initial.descriptor().num_conv(),
        )?),
        None => None,
    };
    let result = train_stage(initial, data, config, prep, |_, m| match log.as_mut() {
        Some(l) => l.append(m),
        None => Ok(()),
    });

    let checkpoint = |model: &ModelState, history: &[_]| Checkpoint {
        model: model.clone(),
        preprocessing: *prep,
        provenance: Provenance {
            preset: ctx.preset.clone(),
            stage: Some(config.stage),
            parent: parent.clone(),
            seed: ctx.seed,
        },
        epoch: history.len(),
        history: history.to_vec(),
        config_snapshot: ctx.config_snapshot.clone(),
    };
    match result {
        Ok(outcome) => {
            if let Some(dir) = &ctx.out_dir {
                save_checkpoint(
                    &checkpoint(&outcome.model, &outcome.history),
                    &checkpoint_path(dir, stage_index),
                )?;
            }
            Ok(outcome)
        }
        Err(StageFailure {
            error,
            last_good,
            history,
        }) => {
            if let Some(dir) = &ctx.out_dir {
                save_checkpoint(
                    &checkpoint(&last_good, &history),
                    &checkpoint_path(dir, stage_index),
                )?;
            }
            Err(error)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageOutcome {
    pub stage1: StageOutcome,
    pub stage2: StageOutcome,
}

/// Full-face fine-tuning followed by occluded-face fine-tuning that starts
/// from the stage-1 model with a fresh optimizer and scheduler.
pub fn run_two_stage(
    initial: ModelState,
    stage1: &TrainStageConfig,
    stage2: &TrainStageConfig,
    data: StageData<'_>,
    prep: &Preprocessing,
    ctx: &RunContext,
) -> Result<TwoStageOutcome> {
    use super::config::StageKind;
    if stage1.stage != StageKind::FullFaces || stage2.stage != StageKind::OccludedFaces {
        return Err(Error::InvalidArgument(
            "two-stage training expects a full-faces stage followed by an occluded-faces stage"
                .into(),
        ));
    }
    let first = run_stage(initial, data, stage1, prep, ctx, 1, None)?;
    let parent = checkpoint_path(Path::new(""), 1).display().to_string();
    let second = run_stage(
        first.model.clone(),
        data,
        stage2,
        prep,
        ctx,
        2,
        Some(parent),
    )?;
    Ok(TwoStageOutcome {
        stage1: first,
        stage2: second,
    })
}
