//! Dense-sparse-dense training support: per-layer sparsity schedules,
//! magnitude pruning masks and the phase plan.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;

/// Slack added before flooring `rate * n` so that rates produced by the
/// linear ramp (e.g. 0.30000000000000004) still count whole weights.
const COUNT_EPS: f64 = 1e-9;

/// Number of weights a layer of `n` weights loses at `rate`.
pub fn prune_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) + COUNT_EPS).floor() as usize
}

/// Pruning rate per conv layer; index 0 is the first conv layer and is
/// never pruned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    rates: Vec<f64>,
}

impl SparsitySchedule {
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, layer: usize) -> f64 {
        self.rates[layer]
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

/// Linear ramp from `first_rate` at the second conv layer to `last_rate`
/// at the last one. The first conv layer gets rate 0.
pub fn build_sparsity_schedule(
    first_rate: f64,
    last_rate: f64,
    num_conv_layers: usize,
) -> Result<SparsitySchedule> {
    if first_rate > last_rate {
        return Err(Error::InvalidArgument(format!(
            "first sparsity rate {first_rate} exceeds last rate {last_rate}"
        )));
    }
    if !(0.0..1.0).contains(&first_rate) || !(0.0..1.0).contains(&last_rate) {
        return Err(Error::InvalidArgument(
            "sparsity rates must lie in [0, 1)".into(),
        ));
    }
    if num_conv_layers < 2 {
        return Err(Error::InvalidArgument(
            "a sparsity schedule needs at least 2 conv layers".into(),
        ));
    }
    if num_conv_layers == 2 && first_rate != last_rate {
        return Err(Error::InvalidArgument(
            "with 2 conv layers the first and last rates must be equal".into(),
        ));
    }
    let steps = (num_conv_layers - 2).max(1) as f64;
    let mut rates: Vec<f64> = (0..num_conv_layers)
        .map(|i| match i {
            0 => 0.0,
            _ => first_rate + (last_rate - first_rate) * (i - 1) as f64 / steps,
        })
        .collect();
    rates[1] = first_rate;
    rates[num_conv_layers - 1] = last_rate;
    Ok(SparsitySchedule { rates })
}

/// Keep-mask (`true` = kept) zeroing the `floor(rate * n)` smallest
/// magnitudes; equal magnitudes are pruned in flat index order.
pub fn compute_prune_mask(weights: &[f64], rate: f64) -> Vec<bool> {
    let k = prune_count(rate, weights.len()).min(weights.len());
    let mut keep = vec![true; weights.len()];
    if k == 0 {
        return keep;
    }
    let key = |&a: &usize, &b: &usize| -> Ordering {
        weights[a]
            .abs()
            .total_cmp(&weights[b].abs())
            .then(a.cmp(&b))
    };
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.select_nth_unstable_by(k - 1, key);
    for &i in &order[..k] {
        keep[i] = false;
    }
    keep
}

/// One optional mask per conv layer; `None` leaves the layer untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMaskSet {
    pub masks: Vec<Option<Vec<bool>>>,
}

impl PruneMaskSet {
    pub fn from_schedule(state: &ModelState, schedule: &SparsitySchedule) -> Result<Self> {
        let n = state.descriptor().num_conv();
        if schedule.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} sparsity rates"),
                actual: format!("{}", schedule.len()),
            });
        }
        let masks = (0..n)
            .into_par_iter()
            .map(|l| {
                let rate = schedule.rate(l);
                (rate > 0.0).then(|| compute_prune_mask(state.conv_weight(l).data(), rate))
            })
            .collect();
        Ok(Self { masks })
    }
}

/// Multiplies each masked conv weight tensor by its mask. Biases and the
/// head are never touched.
pub fn apply_masks(mut state: ModelState, masks: &PruneMaskSet) -> Result<ModelState> {
    let n = state.descriptor().num_conv();
    if masks.masks.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} layer masks"),
            actual: format!("{}", masks.masks.len()),
        });
    }
    for (l, mask) in masks.masks.iter().enumerate() {
        let Some(mask) = mask else { continue };
        let w = state.conv_weight_mut(l);
        if mask.len() != w.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("conv{l} mask of {} entries", w.len()),
                actual: format!("{}", mask.len()),
            });
        }
        for (v, &keep) in w.data_mut().iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok(state)
}

/// End-of-epoch pruning during a sparse phase: masks are recomputed from
/// the current magnitudes every time, so weights may re-enter.
pub fn sparse_epoch_hook(state: ModelState, schedule: &SparsitySchedule) -> Result<ModelState> {
    let masks = PruneMaskSet::from_schedule(&state, schedule)?;
    apply_masks(state, &masks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Dense,
    Sparse,
}

impl PhaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseKind::Dense => "dense",
            PhaseKind::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phases: Vec<Phase>,
}

impl PhasePlan {
    /// Plain dense training for the whole budget.
    pub fn dense(epochs: usize) -> Self {
        let phases = if epochs == 0 {
            Vec::new()
        } else {
            vec![Phase {
                kind: PhaseKind::Dense,
                epochs,
            }]
        };
        Self { phases }
    }

    /// `rounds` dense-sparse-dense rounds sharing `total_epochs`; each round
    /// gives a quarter (rounded down, at least one epoch) to each dense
    /// phase and the rest to the sparse phase. Budgets too small for a
    /// round fall back to dense training.
    pub fn dsd(total_epochs: usize, rounds: usize) -> Self {
        let rounds = rounds.max(1);
        if total_epochs < 3 * rounds {
            return Self::dense(total_epochs);
        }
        let mut phases = Vec::new();
        for r in 0..rounds {
            let budget = total_epochs / rounds
                + if r + 1 == rounds {
                    total_epochs % rounds
                } else {
                    0
                };
            let dense = (budget / 4).max(1);
            phases.push(Phase {
                kind: PhaseKind::Dense,
                epochs: dense,
            });
            phases.push(Phase {
                kind: PhaseKind::Sparse,
                epochs: budget - 2 * dense,
            });
            phases.push(Phase {
                kind: PhaseKind::Dense,
                epochs: dense,
            });
        }
        Self { phases }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Phase of a 0-based epoch index.
    pub fn phase_at(&self, epoch: usize) -> Option<PhaseKind> {
        let mut start = 0;
        for p in &self.phases {
            if epoch < start + p.epochs {
                return Some(p.kind);
            }
            start += p.epochs;
        }
        None
    }

    /// A DSD plan starts and ends dense with at least three phases, and
    /// every phase has at least one epoch.
    pub fn validate_dsd(&self) -> Result<()> {
        let ok = self.phases.len() >= 3
            && self.phases.first().map(|p| p.kind) == Some(PhaseKind::Dense)
            && self.phases.last().map(|p| p.kind) == Some(PhaseKind::Dense)
            && self.phases.iter().all(|p| p.epochs >= 1);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "not a dense-sparse-dense plan: {:?}",
                self.phases
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_toy_descriptor;
    use crate::oracle::brute_force_prune_mask;
    use proptest::prelude::*;

    #[test]
    fn paper_schedules() {
        let s = build_sparsity_schedule(0.2, 0.7, 13).unwrap();
        assert_eq!(s.rate(0), 0.0);
        assert_eq!(s.rate(1), 0.2);
        assert_eq!(s.rate(12), 0.7);
        let s = build_sparsity_schedule(0.2, 0.5, 5).unwrap();
        for (a, b) in s.rates().iter().zip([0.0, 0.2, 0.3, 0.4, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            build_sparsity_schedule(0.3, 0.3, 2).unwrap().rates(),
            &[0.0, 0.3]
        );
        assert!(build_sparsity_schedule(0.5, 0.2, 5).is_err());
    }

    #[test]
    fn mask_examples() {
        assert_eq!(
            compute_prune_mask(&[0.1, -0.2, 0.3, -0.05], 0.5),
            vec![false, true, true, false]
        );
        assert_eq!(compute_prune_mask(&[0.1, -0.2, 0.3], 0.0), vec![true; 3]);
        assert_eq!(
            compute_prune_mask(&[0.2, -0.2, 0.1], 1.0 / 3.0),
            vec![true, true, false]
        );
        assert_eq!(
            compute_prune_mask(&[0.2, -0.2, 0.1], 2.0 / 3.0),
            vec![false, true, false]
        );
    }

    fn toy_state() -> ModelState {
        ModelState::random(build_toy_descriptor(&[4, 6, 8], 8).unwrap(), 11).unwrap()
    }

    #[test]
    fn apply_identity_and_idempotent() {
        let s = toy_state();
        let ones = PruneMaskSet {
            masks: (0..3)
                .map(|l| Some(vec![true; s.conv_weight(l).len()]))
                .collect(),
        };
        assert_eq!(apply_masks(s.clone(), &ones).unwrap(), s);
        let sched = build_sparsity_schedule(0.2, 0.5, 3).unwrap();
        let masks = PruneMaskSet::from_schedule(&s, &sched).unwrap();
        let once = apply_masks(s.clone(), &masks).unwrap();
        assert_eq!(apply_masks(once.clone(), &masks).unwrap(), once);
        for (l, frac) in once.conv_zero_fractions().iter().enumerate() {
            assert!(*frac >= sched.rate(l) - 1.0 / once.conv_weight(l).len() as f64);
        }
        let bad = PruneMaskSet {
            masks: vec![Some(vec![true; 3]), None, None],
        };
        assert!(apply_masks(s, &bad).is_err());
    }

    #[test]
    fn hook_recomputes_from_current_weights() {
        let d = build_toy_descriptor(&[1, 1], 4).unwrap();
        let mut s = ModelState::zeros(d).unwrap();
        // conv1 has 9 weights; rate 0.4 prunes floor(3.6) = 3.
        s.conv_weight_mut(1)
            .data_mut()
            .copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        s.conv_weight_mut(0).data_mut().fill(0.01);
        let sched = build_sparsity_schedule(0.4, 0.4, 2).unwrap();
        let first = sparse_epoch_hook(s.clone(), &sched).unwrap();
        assert_eq!(first.conv_weight(1).data()[..3], [0.0, 0.0, 0.0]);
        assert_eq!(sparse_epoch_hook(first.clone(), &sched).unwrap(), first);

        // Training regrows weight 0 past weight 3; weight 3 is now pruned.
        let mut grown = first.clone();
        grown.conv_weight_mut(1).data_mut()[0] = 2.0;
        let second = sparse_epoch_hook(grown, &sched).unwrap();
        assert_eq!(second.conv_weight(1).data()[0], 2.0);
        assert_eq!(second.conv_weight(1).data()[3], 0.0);
        assert_eq!(second.conv_weight(1).zero_count(), 3);
        assert!(second.conv_weight(0).data().iter().all(|&v| v == 0.01));
    }

    #[test]
    fn phase_plans() {
        let p = PhasePlan::dsd(5, 1);
        p.validate_dsd().unwrap();
        assert_eq!(
            p.phases.iter().map(|p| p.epochs).collect::<Vec<_>>(),
            vec![1, 3, 1]
        );
        for (e, k) in [
            (0, PhaseKind::Dense),
            (1, PhaseKind::Sparse),
            (3, PhaseKind::Sparse),
            (4, PhaseKind::Dense),
        ] {
            assert_eq!(p.phase_at(e), Some(k));
        }
        assert_eq!(p.phase_at(5), None);
        for total in [40, 50, 80, 800] {
            let p = PhasePlan::dsd(total, 1);
            p.validate_dsd().unwrap();
            assert_eq!(p.total_epochs(), total);
        }
        let twice = PhasePlan::dsd(50, 2);
        twice.validate_dsd().unwrap();
        assert_eq!(twice.phases.len(), 6);
        assert_eq!(twice.total_epochs(), 50);
        assert!(PhasePlan::dense(4).validate_dsd().is_err());
        assert!(PhasePlan::dsd(0, 1).phases.is_empty());
    }

    proptest! {
        #[test]
        fn mask_matches_sort_oracle(weights in proptest::collection::vec(-3i32..3, 1..60), rate_i in 0usize..5, scale in 0usize..3) {
            // Small integer values force many magnitude ties.
            let rate = [0.0, 0.2, 0.5, 0.7, 0.9][rate_i];
            let w: Vec<f64> = weights.iter().map(|&v| v as f64 * 0.5).collect();
            let mask = compute_prune_mask(&w, rate);
            prop_assert_eq!(&mask, &brute_force_prune_mask(&w, rate));
            let c = [1e-6, 1.0, 1e6][scale];
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            prop_assert_eq!(compute_prune_mask(&scaled, rate), mask);
        }

        #[test]
        fn schedule_shape(first in 0.0f64..0.9, span in 0.0f64..0.09, n in 3usize..16) {
            let last = first + span;
            let s = build_sparsity_schedule(first, last, n).unwrap();
            prop_assert_eq!(s.rate(0), 0.0);
            prop_assert_eq!(s.rate(1), first);
            prop_assert_eq!(s.rate(n - 1), last);
            prop_assert!(s.rates().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
