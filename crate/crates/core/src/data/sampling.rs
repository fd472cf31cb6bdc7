use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::label::{EmotionLabel, NUM_CLASSES};
use super::record::DatasetSplit;

/// Keep flags for per-class down-sampling of a label sequence. Works on
/// labels alone so manifests can be sampled before any image is decoded.
pub fn downsample_keep(labels: &[EmotionLabel], cap: usize, seed: u64) -> Vec<bool> {
    let mut members: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        members[l.index()].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; labels.len()];
    for class in &members {
        if class.len() <= cap {
            class.iter().for_each(|&i| keep[i] = true);
        } else {
            for pick in index::sample(&mut rng, class.len(), cap) {
                keep[class[pick]] = true;
            }
        }
    }
    keep
}

/// Keeps at most `cap` records per class, chosen uniformly without
/// replacement. Surviving records keep their input order.
pub fn downsample_per_class(split: &DatasetSplit, cap: usize, seed: u64) -> DatasetSplit {
    let labels: Vec<EmotionLabel> = split.labels().collect();
    split
        .records()
        .iter()
        .zip(downsample_keep(&labels, cap, seed))
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Concatenates two splits, `a` first.
pub fn join_training_sets(a: &DatasetSplit, b: &DatasetSplit) -> DatasetSplit {
    a.records().iter().chain(b.records()).cloned().collect()
}
