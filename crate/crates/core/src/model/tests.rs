use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{EmotionLabel, NUM_CLASSES};
use crate::error::Error;
use crate::oracle;
use crate::tensor::Tensor;

fn random_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        &[3, size, size],
        (0..3 * size * size)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn batch(images: &[Tensor]) -> Tensor {
    let s = images[0].shape().to_vec();
    let data = images
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    Tensor::from_vec(&[images.len(), s[0], s[1], s[2]], data).unwrap()
}

#[test]
fn rows_sum_to_one() {
    let state = ModelState::random(build_toy_descriptor(&[4, 8, 8], 16).unwrap(), 1).unwrap();
    let imgs: Vec<_> = (0..5).map(|i| random_image(16, i)).collect();
    let p = forward(&state, &batch(&imgs), Mode::Eval).unwrap();
    for row in p.data().chunks(NUM_CLASSES) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_weights_give_uniform_output() {
    let state = ModelState::zeros(build_toy_descriptor(&[4, 8], 16).unwrap()).unwrap();
    let p = forward(&state, &batch(&[random_image(16, 3)]), Mode::Eval).unwrap();
    assert!(p.data().iter().all(|&v| (v - 0.125).abs() < 1e-15));
}

#[test]
fn matches_loop_oracle() {
    for (chans, size, seed) in [
        (vec![3, 4, 5], 8, 0),
        (vec![8, 16, 32], 32, 1),
        (vec![2, 3, 4, 5], 12, 2),
    ] {
        let state = ModelState::random(build_toy_descriptor(&chans, size).unwrap(), seed).unwrap();
        let img = random_image(size, seed + 10);
        let fast = forward_one(&state, &img, Mode::Eval).unwrap().probs;
        let slow = oracle::naive_forward(&state, &img);
        for (a, b) in fast.iter().zip(slow) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn strided_backbone_matches_oracle() {
    let mut d = build_toy_descriptor(&[4, 6, 6], 23).unwrap();
    d.conv_layers[0].kernel = 5;
    d.conv_layers[0].stride = 2;
    d.conv_layers[0].padding = 0;
    d.conv_layers[0].pool = Some(PoolSpec { size: 3, stride: 2 });
    let state = ModelState::random(d, 5).unwrap();
    let img = random_image(23, 6);
    let fast = forward_one(&state, &img, Mode::Eval).unwrap().probs;
    let slow = oracle::naive_forward(&state, &img);
    for (a, b) in fast.iter().zip(slow) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let state = ModelState::random(build_toy_descriptor(&[4, 8], 16).unwrap(), 1).unwrap();
    let err = forward(&state, &batch(&[random_image(12, 1)]), Mode::Eval).unwrap_err();
    match &err {
        Error::ShapeMismatch { expected, actual } => {
            assert!(expected.contains("16"));
            assert!(actual.contains("12"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn dropout_only_in_training_mode() {
    let mut d = build_toy_descriptor(&[4, 8, 8], 16).unwrap();
    d.conv_layers[1].dropout = Some(0.5);
    d.conv_layers[2].dropout = Some(0.5);
    let state = ModelState::random(d, 2).unwrap();
    let b = batch(&[random_image(16, 1), random_image(16, 2)]);
    let e1 = forward(&state, &b, Mode::Eval).unwrap();
    assert_eq!(e1, forward(&state, &b, Mode::Eval).unwrap());
    let t1 = forward(&state, &b, Mode::Train { seed: 7 }).unwrap();
    assert_eq!(t1, forward(&state, &b, Mode::Train { seed: 7 }).unwrap());
    assert_ne!(t1, e1);
    assert_ne!(t1, forward(&state, &b, Mode::Train { seed: 8 }).unwrap());
}

#[test]
fn loss_closed_forms() {
    let uniform = Tensor::from_vec(&[2, 8], vec![0.125; 16]).unwrap();
    let l = loss(&uniform, &[EmotionLabel::Fear, EmotionLabel::Anger]);
    assert!((l - 8f64.ln()).abs() < 1e-12);
    assert!((l - 2.0794).abs() < 1e-4);
    let mut certain = vec![0.0; 8];
    certain[3] = 1.0;
    let certain = Tensor::from_vec(&[1, 8], certain).unwrap();
    assert_eq!(loss(&certain, &[EmotionLabel::Fear]), 0.0);
}

fn max_relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn gradient_check_against_finite_differences() {
    for seed in 0..5 {
        let state = ModelState::random(build_toy_descriptor(&[3, 4, 5], 8).unwrap(), seed).unwrap();
        let images: Vec<_> = (0..3).map(|i| random_image(8, 100 * seed + i)).collect();
        let labels = [
            EmotionLabel::Anger,
            EmotionLabel::Sadness,
            EmotionLabel::Surprise,
        ];
        let (_, analytic) = loss_and_gradients(&state, &images, &labels, &[Mode::Eval; 3]).unwrap();
        let numeric = oracle::finite_difference_grads(&state, &images, &labels, 1e-6);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn global_max_head_ignores_spatial_permutation() {
    let state = ModelState::random(build_toy_descriptor(&[4, 6], 8).unwrap(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (c, h, w) = (6, 4, 5);
    let act = Tensor::from_vec(
        &[c, h, w],
        (0..c * h * w).map(|_| rng.random_range(0.0..3.0)).collect(),
    )
    .unwrap();
    let mut perm: Vec<usize> = (0..h * w).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut permuted = act.clone();
    for ch in 0..c {
        for (dst, &src) in perm.iter().enumerate() {
            permuted.data_mut()[ch * h * w + dst] = act.data()[ch * h * w + src];
        }
    }
    assert_eq!(
        head_forward(&state, &act).unwrap(),
        head_forward(&state, &permuted).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn eval_forward_deterministic_and_normalised(seed in 0u64..1000) {
        let state = ModelState::random(build_toy_descriptor(&[3, 5], 8).unwrap(), seed).unwrap();
        let img = random_image(8, seed);
        let a = forward_one(&state, &img, Mode::Eval).unwrap().probs;
        let b = forward_one(&state, &img, Mode::Eval).unwrap().probs;
        prop_assert_eq!(a, b);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
