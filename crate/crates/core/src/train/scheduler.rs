use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerConfig;

/// Plateau-driven learning-rate state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedulerState {
    pub current_lr: f64,
    pub best_val_error: f64,
    pub epochs_since_improvement: usize,
}

impl LrSchedulerState {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            current_lr: initial_lr,
            best_val_error: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// One end-of-epoch update. A strict improvement resets the counter;
/// otherwise it grows, and once it exceeds the patience the learning rate
/// is divided by the drop factor and the counter resets. A drop that would
/// go below `min_lr` is skipped.
pub fn plateau_step(
    state: LrSchedulerState,
    val_error: f64,
    config: &OptimizerConfig,
) -> LrSchedulerState {
    let mut next = state;
    if val_error < state.best_val_error {
        next.best_val_error = val_error;
        next.epochs_since_improvement = 0;
        return next;
    }
    next.epochs_since_improvement += 1;
    if next.epochs_since_improvement > config.plateau_patience {
        next.epochs_since_improvement = 0;
        let dropped = state.current_lr / config.lr_drop_factor;
        let floor = config.min_lr.unwrap_or(0.0);
        if dropped >= floor * (1.0 - 1e-9) {
            next.current_lr = dropped;
        }
    }
    next
}
