//! Desk-scale stand-in for the face corpora.
//!
//! Each class owns a glyph: a fixed set of `S` stroke pixels, of which
//! `round(lower_signal_weight * S)` lie in the lower half (rows at or
//! below `floor(height/2)`) and the rest in the upper half. Samples draw
//! the glyph over uniform background noise with per-sample intensity,
//! pixel dropout and a small horizontal shift that never moves a pixel
//! across the half boundary.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::label::{EmotionLabel, NUM_CLASSES};
use super::record::{ImageRecord, Source, SplitSet, SplitTag};
use crate::error::{Error, Result};
use crate::pixels::PixelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub num_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub lower_signal_weight: f64,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn new(
        num_per_class: usize,
        height: usize,
        width: usize,
        lower_signal_weight: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_per_class,
            height,
            width,
            lower_signal_weight,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_per_class < 1 {
            return Err(Error::InvalidArgument("num_per_class must be >= 1".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArgument(format!(
                "synthetic images must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.lower_signal_weight) {
            return Err(Error::InvalidArgument(format!(
                "lower_signal_weight {} outside [0,1]",
                self.lower_signal_weight
            )));
        }
        Ok(())
    }

    /// Glyph size `S`.
    pub fn glyph_pixels(&self) -> usize {
        self.height * self.width / 8
    }

    /// Number of glyph pixels placed in the lower half.
    pub fn lower_pixels(&self) -> usize {
        (self.lower_signal_weight * self.glyph_pixels() as f64).round() as usize
    }

    /// (train, val, test) sample counts per class: 15% each for val and
    /// test (rounded down), the remainder for training.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let held = self.num_per_class * 15 / 100;
        (self.num_per_class - 2 * held, held, held)
    }
}

const NOISE_MAX: u8 = 150;
const GLYPH_MIN: u8 = 110;
const KEEP_PROB: f64 = 0.7;
const MAX_SHIFT: i64 = 2;
const STROKE_LEN: usize = 6;

/// Grows random 8-connected strokes inside rows `[row_lo, row_hi)` until
/// exactly `count` distinct pixels are set.
fn strokes(
    rng: &mut ChaCha8Rng,
    row_lo: usize,
    row_hi: usize,
    width: usize,
    count: usize,
    out: &mut BTreeSet<(usize, usize)>,
) {
    let target = out.len() + count;
    while out.len() < target {
        let mut r = rng.random_range(row_lo..row_hi) as i64;
        let mut c = rng.random_range(0..width) as i64;
        for _ in 0..STROKE_LEN {
            if out.len() == target {
                break;
            }
            out.insert((r as usize, c as usize));
            r = (r + rng.random_range(-1..=1)).clamp(row_lo as i64, row_hi as i64 - 1);
            c = (c + rng.random_range(-1..=1)).clamp(0, width as i64 - 1);
        }
    }
}

/// Per-class glyph pixel sets as sorted `(row, col)` lists.
pub fn glyph_templates(params: &SyntheticParams) -> Result<Vec<Vec<(usize, usize)>>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_61f5);
    let half = params.height / 2;
    let lower = params.lower_pixels();
    let upper = params.glyph_pixels() - lower;
    Ok((0..NUM_CLASSES)
        .map(|_| {
            let mut set = BTreeSet::new();
            strokes(&mut rng, 0, half, params.width, upper, &mut set);
            strokes(&mut rng, half, params.height, params.width, lower, &mut set);
            set.into_iter().collect()
        })
        .collect())
}

fn render(rng: &mut ChaCha8Rng, params: &SyntheticParams, glyph: &[(usize, usize)]) -> PixelGrid {
    let (h, w) = (params.height, params.width);
    let mut data: Vec<u8> = (0..h * w)
        .map(|_| rng.random_range(0..=NOISE_MAX))
        .collect();
    let shift = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
    let base = rng.random_range(GLYPH_MIN..=230);
    for &(r, c) in glyph {
        if rng.random_bool(KEEP_PROB) {
            let c = (c as i64 + shift).rem_euclid(w as i64) as usize;
            data[r * w + c] = base.saturating_add(rng.random_range(0..=25));
        }
    }
    PixelGrid::new(h, w, 1, data).expect("valid synthetic geometry")
}

/// Generates the three splits. Records are ordered split-major, then by
/// class, then by sample index.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<SplitSet> {
    let templates = glyph_templates(params)?;
    let (n_train, n_val, n_test) = params.split_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut records = Vec::with_capacity(NUM_CLASSES * params.num_per_class);
    for (split, n) in [
        (SplitTag::Train, n_train),
        (SplitTag::Val, n_val),
        (SplitTag::Test, n_test),
    ] {
        for (class, glyph) in templates.iter().enumerate() {
            for _ in 0..n {
                records.push(ImageRecord {
                    pixels: render(&mut rng, params, glyph),
                    label: EmotionLabel::ALL[class],
                    split,
                    source: Source::Synthetic,
                });
            }
        }
    }
    Ok(SplitSet::from_records(records))
}
