use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainStageConfig;
use super::metrics::EpochMetrics;
use super::optimizer::MomentumSgd;
use super::scheduler::{plateau_step, LrSchedulerState};
use crate::data::{DatasetSplit, EmotionLabel};
use crate::dsd::{sparse_epoch_hook, PhaseKind};
use crate::error::{Error, Result};
use crate::eval::predict_split;
use crate::model::{loss_and_gradients, mix_seed, Mode, ModelState, Preprocessing};
use crate::tensor::Tensor;
use crate::transforms::{build_pipeline, Pipeline};

/// Training and validation data for one stage.
#[derive(Debug, Clone, Copy)]
pub struct StageData<'a> {
    pub train: &'a DatasetSplit,
    pub val: &'a DatasetSplit,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub model: ModelState,
    pub history: Vec<EpochMetrics>,
}

/// A stage that stopped early. `last_good` is the model at the end of the
/// last completed epoch (or the initial model).
#[derive(Debug)]
pub struct StageFailure {
    pub error: Error,
    pub last_good: ModelState,
    pub history: Vec<EpochMetrics>,
}

impl From<StageFailure> for Error {
    fn from(f: StageFailure) -> Self {
        f.error
    }
}

const SHUFFLE_STREAM: u64 = 1;
const FLIP_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn stream(seed: u64, kind: u64, epoch: usize) -> u64 {
    mix_seed(mix_seed(seed, kind), epoch as u64)
}

/// Runs `config.epochs` epochs of momentum SGD. Sparse-phase epochs end
/// with magnitude pruning; every epoch ends with a validation pass that
/// feeds the plateau scheduler. `on_epoch` sees the model after each
/// completed epoch.
#[allow(clippy::result_large_err)]
pub fn train_stage(
    initial: ModelState,
    data: StageData<'_>,
    config: &TrainStageConfig,
    prep: &Preprocessing,
    mut on_epoch: impl FnMut(&ModelState, &EpochMetrics) -> Result<()>,
) -> std::result::Result<StageOutcome, StageFailure> {
    let fail = |error: Error, last_good: ModelState, history: Vec<EpochMetrics>| StageFailure {
        error,
        last_good,
        history,
    };
    if let Err(e) = config.validate(initial.descriptor().num_conv()) {
        return Err(fail(e, initial, Vec::new()));
    }
    if config.epochs == 0 {
        return Ok(StageOutcome {
            model: initial,
            history: Vec::new(),
        });
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(fail(Error::EmptySplit, initial, Vec::new()));
    }

    let size = initial.descriptor().input_size;
    let train_pipe = build_pipeline(config.occlusion, config.flip_augment, size);
    let eval_pipe = build_pipeline(config.occlusion, false, size);
    let train_records = data.train.records();
    let train_y: Vec<EmotionLabel> = data.train.labels().collect();
    let val_y: Vec<EmotionLabel> = data.val.labels().collect();

    let mut model = initial;
    let mut sgd = MomentumSgd::new(config.optimizer.momentum, model.params());
    let mut sched = LrSchedulerState::new(config.optimizer.initial_lr);
    let mut history = Vec::with_capacity(config.epochs);
    let n = train_records.len();

    for epoch in 0..config.epochs {
        let phase = config
            .phase_plan
            .phase_at(epoch)
            .unwrap_or(PhaseKind::Dense);
        let lr = sched.current_lr;
        let epoch_start = model.clone();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream(
            config.seed,
            SHUFFLE_STREAM,
            epoch,
        )));
        let flip_seed = stream(config.seed, FLIP_STREAM, epoch);
        let dropout_seed = stream(config.seed, DROPOUT_STREAM, epoch);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.optimizer.batch_size) {
            let images: Vec<Tensor> = batch
                .par_iter()
                .map(|&i| {
                    let x = prep.apply(&eval_pipe.apply_eval(&train_records[i].pixels));
                    let flip = train_pipe.flip_augment
                        && ChaCha8Rng::seed_from_u64(mix_seed(flip_seed, i as u64))
                            .random_bool(0.5);
                    if flip {
                        Pipeline::flip_prepared(&x)
                    } else {
                        x
                    }
                })
                .collect();
            let labels: Vec<EmotionLabel> = batch.iter().map(|&i| train_y[i]).collect();
            let modes: Vec<Mode> = batch
                .iter()
                .map(|&i| Mode::Train {
                    seed: mix_seed(dropout_seed, i as u64),
                })
                .collect();
            let (loss, grads) = match loss_and_gradients(&model, &images, &labels, &modes) {
                Ok(r) => r,
                Err(e) => return Err(fail(e, epoch_start, history)),
            };
            if !loss.is_finite() {
                return Err(fail(
                    Error::NonFiniteLoss { epoch: epoch + 1 },
                    epoch_start,
                    history,
                ));
            }
            sgd.step(model.params_mut(), &grads, lr);
            loss_sum += loss * batch.len() as f64;
        }
        if !model.is_finite() {
            return Err(fail(
                Error::NonFiniteLoss { epoch: epoch + 1 },
                epoch_start,
                history,
            ));
        }

        if phase == PhaseKind::Sparse {
            model = match sparse_epoch_hook(model, &config.sparsity) {
                Ok(m) => m,
                Err(e) => return Err(fail(e, epoch_start, history)),
            };
        }

        let predictions = predict_split(&model, data.val, &eval_pipe, prep);
        let correct = predictions
            .iter()
            .zip(&val_y)
            .filter(|(p, y)| **p == y.index())
            .count();
        let val_error = 1.0 - correct as f64 / val_y.len() as f64;

        let metrics = EpochMetrics {
            epoch: epoch + 1,
            phase,
            lr,
            train_loss: loss_sum / n as f64,
            val_error,
            sparsity: model.conv_zero_fractions(),
        };
        if let Err(e) = on_epoch(&model, &metrics) {
            return Err(fail(e, model, history));
        }
        history.push(metrics);
        sched = plateau_step(sched, val_error, &config.optimizer);
    }

    Ok(StageOutcome { model, history })
}
