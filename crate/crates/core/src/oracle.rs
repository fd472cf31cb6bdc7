//! Independent reference implementations used by the test suites.
//!
//! Everything here is written as plain nested loops over the public
//! parameter tensors and shares no code with the production paths.

#![allow(clippy::needless_range_loop)]

use crate::data::{EmotionLabel, NUM_CLASSES};
use crate::model::ModelState;
use crate::pixels::PixelGrid;
use crate::tensor::Tensor;

/// Direct-loop forward pass in evaluation mode: conv, ReLU, max-pool,
/// global max, linear, softmax.
pub fn naive_forward(state: &ModelState, image: &Tensor) -> [f64; NUM_CLASSES] {
    let d = state.descriptor();
    let mut size = d.input_size;
    let mut ch = d.in_channels;
    // act[c][y][x]
    let mut act: Vec<Vec<Vec<f64>>> = (0..ch)
        .map(|c| {
            (0..size)
                .map(|y| {
                    (0..size)
                        .map(|x| image.data()[(c * size + y) * size + x])
                        .collect()
                })
                .collect()
        })
        .collect();

    for (l, spec) in d.conv_layers.iter().enumerate() {
        let w = state.conv_weight(l).data();
        let b = state.conv_bias(l).data();
        let k = spec.kernel;
        let out = (size + 2 * spec.padding - k) / spec.stride + 1;
        let mut next = vec![vec![vec![0.0; out]; out]; spec.out_channels];
        for o in 0..spec.out_channels {
            for y in 0..out {
                for x in 0..out {
                    let mut s = b[o];
                    for c in 0..ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * spec.stride + ky) as i64 - spec.padding as i64;
                                let ix = (x * spec.stride + kx) as i64 - spec.padding as i64;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < size
                                    && (ix as usize) < size
                                {
                                    s += w[((o * ch + c) * k + ky) * k + kx]
                                        * act[c][iy as usize][ix as usize];
                                }
                            }
                        }
                    }
                    next[o][y][x] = if s > 0.0 { s } else { 0.0 };
                }
            }
        }
        size = out;
        if let Some(p) = spec.pool {
            let out = (size - p.size) / p.stride + 1;
            next = next
                .iter()
                .map(|plane| {
                    (0..out)
                        .map(|y| {
                            (0..out)
                                .map(|x| {
                                    let mut m = f64::NEG_INFINITY;
                                    for py in 0..p.size {
                                        for px in 0..p.size {
                                            m = m.max(plane[y * p.stride + py][x * p.stride + px]);
                                        }
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            size = out;
        }
        act = next;
        ch = spec.out_channels;
    }

    let feats: Vec<f64> = act
        .iter()
        .map(|plane| {
            plane
                .iter()
                .flatten()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        })
        .collect();
    let hw = state.head_weight().data();
    let hb = state.head_bias().data();
    let mut logits = [0.0; NUM_CLASSES];
    for (k, z) in logits.iter_mut().enumerate() {
        *z = hb[k];
        for (c, f) in feats.iter().enumerate() {
            *z += hw[k * ch + c] * f;
        }
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let denom: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    logits.map(|z| (z - m).exp() / denom)
}

pub fn naive_loss(state: &ModelState, images: &[Tensor], labels: &[EmotionLabel]) -> f64 {
    images
        .iter()
        .zip(labels)
        .map(|(img, l)| -naive_forward(state, img)[l.index()].ln())
        .sum::<f64>()
        / images.len() as f64
}

/// Central finite differences of [`naive_loss`] for every parameter.
pub fn finite_difference_grads(
    state: &ModelState,
    images: &[Tensor],
    labels: &[EmotionLabel],
    eps: f64,
) -> Vec<Tensor> {
    let mut probe = state.clone();
    let mut grads = Vec::new();
    for t in 0..state.params().len() {
        let mut g = Tensor::zeros(state.params()[t].shape());
        for i in 0..g.len() {
            let orig = state.params()[t].data()[i];
            probe.params_mut()[t].data_mut()[i] = orig + eps;
            let up = naive_loss(&probe, images, labels);
            probe.params_mut()[t].data_mut()[i] = orig - eps;
            let down = naive_loss(&probe, images, labels);
            probe.params_mut()[t].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Sorts indices by (|w|, index) and zeroes the first `floor(rate * n)`.
pub fn brute_force_prune_mask(weights: &[f64], rate: f64) -> Vec<bool> {
    let k = ((rate * weights.len() as f64) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .partial_cmp(&weights[b].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; weights.len()];
    for &i in &order[..k] {
        keep[i] = false;
    }
    keep
}

/// Grayscale image through gray-to-RGB, optional upper-half fill and a
/// bilinear resize, evaluated pixel by pixel.
pub fn naive_pipeline(image: &PixelGrid, occlude_fill: Option<u8>, target: usize) -> Tensor {
    let (h, w) = (image.height(), image.width());
    let src = |c: usize, y: usize, x: usize| -> f64 {
        if let Some(f) = occlude_fill {
            if y < h / 2 {
                return f as f64;
            }
        }
        let ch = if image.channels() == 1 { 0 } else { c };
        image.get(y, x, ch) as f64
    };
    let mut out = Tensor::zeros(&[3, target, target]);
    for c in 0..3 {
        for y in 0..target {
            for x in 0..target {
                let sy = ((y as f64 + 0.5) * h as f64 / target as f64 - 0.5)
                    .max(0.0)
                    .min((h - 1) as f64);
                let sx = ((x as f64 + 0.5) * w as f64 / target as f64 - 0.5)
                    .max(0.0)
                    .min((w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let v = src(c, y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + src(c, y0, x1) * (1.0 - fy) * fx
                    + src(c, y1, x0) * fy * (1.0 - fx)
                    + src(c, y1, x1) * fy * fx;
                out.data_mut()[(c * target + y) * target + x] = v;
            }
        }
    }
    out
}
