//! Forward and backward passes for one image at a time. Batches are
//! processed by mapping over images in parallel and reducing in order.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::descriptor::{ConvSpec, PoolSpec};
use super::state::ModelState;
use crate::data::{EmotionLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether dropout is active. Training mode carries the seed that drives
/// the dropout masks of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

struct LayerCache {
    input: Vec<f64>,
    in_size: usize,
    in_channels: usize,
    conv_size: usize,
    /// Post-ReLU activation before dropout and pooling.
    relu: Vec<f64>,
    dropout_scale: Option<Vec<f64>>,
    pool_argmax: Option<Vec<usize>>,
}

/// Everything the backward pass needs for one image.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    features: Vec<f64>,
    feature_argmax: Vec<usize>,
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

impl ForwardCache {
    /// Post-ReLU activation of conv layer `layer` as `[channels, h, w]`.
    pub fn activation(&self, layer: usize, channels: usize) -> Tensor {
        let l = &self.layers[layer];
        Tensor::from_vec(&[channels, l.conv_size, l.conv_size], l.relu.clone())
            .expect("cached shape")
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

fn im2col(
    input: &[f64],
    channels: usize,
    size: usize,
    spec: &ConvSpec,
    out_size: usize,
) -> Array2<f64> {
    let k = spec.kernel;
    let mut col = Array2::<f64>::zeros((channels * k * k, out_size * out_size));
    for c in 0..channels {
        let plane = &input[c * size * size..(c + 1) * size * size];
        for ky in 0..k {
            for kx in 0..k {
                let mut row = col.row_mut((c * k + ky) * k + kx);
                let row = row.as_slice_mut().expect("standard layout");
                for oy in 0..out_size {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * size..(iy as usize + 1) * size];
                    let dst = &mut row[oy * out_size..(oy + 1) * out_size];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < size as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    col: &Array2<f64>,
    channels: usize,
    size: usize,
    spec: &ConvSpec,
    out_size: usize,
) -> Vec<f64> {
    let k = spec.kernel;
    let mut out = vec![0.0; channels * size * size];
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = col.row((c * k + ky) * k + kx);
                let row = row.as_slice().expect("standard layout");
                for oy in 0..out_size {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    let base = c * size * size + iy as usize * size;
                    for ox in 0..out_size {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < size as isize {
                            out[base + ix as usize] += row[oy * out_size + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Max-pool returning pooled values and flat argmax indices (first
/// maximum wins).
fn max_pool(
    input: &[f64],
    channels: usize,
    size: usize,
    pool: PoolSpec,
) -> (Vec<f64>, Vec<usize>, usize) {
    let out_size = (size - pool.size) / pool.stride + 1;
    let mut values = Vec::with_capacity(channels * out_size * out_size);
    let mut argmax = Vec::with_capacity(channels * out_size * out_size);
    for c in 0..channels {
        for oy in 0..out_size {
            for ox in 0..out_size {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for py in 0..pool.size {
                    for px in 0..pool.size {
                        let i = c * size * size
                            + (oy * pool.stride + py) * size
                            + ox * pool.stride
                            + px;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                values.push(best);
                argmax.push(best_i);
            }
        }
    }
    (values, argmax, out_size)
}

fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|z| (z - max).exp());
    let sum: f64 = exp.iter().sum();
    exp.map(|e| e / sum)
}

/// Global max-pool over `[channels, h, w]` followed by the linear head and
/// softmax.
pub fn head_forward(state: &ModelState, activation: &Tensor) -> Result<[f64; NUM_CLASSES]> {
    let c = state.descriptor().feature_channels();
    if activation.shape().len() != 3 || activation.shape()[0] != c {
        return Err(Error::ShapeMismatch {
            expected: format!("[{c}, h, w]"),
            actual: format!("{:?}", activation.shape()),
        });
    }
    let plane = activation.shape()[1] * activation.shape()[2];
    let features: Vec<f64> = activation
        .data()
        .chunks(plane)
        .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(softmax(&linear_head(state, &features)))
}

fn linear_head(state: &ModelState, features: &[f64]) -> [f64; NUM_CLASSES] {
    let w = state.head_weight().data();
    let b = state.head_bias().data();
    let c = features.len();
    std::array::from_fn(|k| {
        b[k] + w[k * c..(k + 1) * c]
            .iter()
            .zip(features)
            .map(|(a, f)| a * f)
            .sum::<f64>()
    })
}

/// Forward pass for one `[3, S, S]` image.
pub fn forward_one(state: &ModelState, image: &Tensor, mode: Mode) -> Result<ForwardCache> {
    let d = state.descriptor();
    image.expect_shape(&[d.in_channels, d.input_size, d.input_size])?;
    let mut rng = match mode {
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Eval => None,
    };

    let mut x = image.data().to_vec();
    let mut size = d.input_size;
    let mut channels = d.in_channels;
    let mut layers = Vec::with_capacity(d.num_conv());
    for (l, spec) in d.conv_layers.iter().enumerate() {
        let conv_size = (size + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        let col = im2col(&x, channels, size, spec, conv_size);
        let w = state.conv_weight(l);
        let wm = ArrayView2::from_shape(
            (spec.out_channels, channels * spec.kernel * spec.kernel),
            w.data(),
        )
        .expect("weight shape");
        let mut pre = wm.dot(&col);
        let bias = state.conv_bias(l).data();
        for (o, mut row) in pre.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| (v + bias[o]).max(0.0));
        }
        let relu = pre.into_raw_vec_and_offset().0;

        let mut act = relu.clone();
        let dropout_scale = match (spec.dropout, rng.as_mut()) {
            (Some(rate), Some(rng)) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let scale: Vec<f64> = (0..act.len())
                    .map(|_| if rng.random_bool(rate) { 0.0 } else { keep })
                    .collect();
                act.iter_mut().zip(&scale).for_each(|(a, s)| *a *= s);
                Some(scale)
            }
            _ => None,
        };

        let (next, pool_argmax, next_size) = match spec.pool {
            Some(p) => {
                let (v, a, s) = max_pool(&act, spec.out_channels, conv_size, p);
                (v, Some(a), s)
            }
            None => (act, None, conv_size),
        };
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, next),
            in_size: size,
            in_channels: channels,
            conv_size,
            relu,
            dropout_scale,
            pool_argmax,
        });
        size = next_size;
        channels = spec.out_channels;
    }

    let plane = size * size;
    let mut features = Vec::with_capacity(channels);
    let mut feature_argmax = Vec::with_capacity(channels);
    for c in 0..channels {
        let p = &x[c * plane..(c + 1) * plane];
        let (i, v) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        features.push(v);
        feature_argmax.push(c * plane + i);
    }
    let logits = linear_head(state, &features);
    let probs = softmax(&logits);
    Ok(ForwardCache {
        layers,
        features,
        feature_argmax,
        logits,
        probs,
    })
}

/// Output of [`backprop`].
pub struct Backprop {
    pub param_grads: Vec<Tensor>,
    /// Gradient w.r.t. the post-ReLU activation of the requested layer.
    pub activation_grad: Option<Tensor>,
}

/// Propagates `dlogits` back through the network. When `capture` names a
/// conv layer, the gradient at its post-ReLU activation is returned too.
pub fn backprop(
    state: &ModelState,
    cache: &ForwardCache,
    dlogits: &[f64; NUM_CLASSES],
    capture: Option<usize>,
) -> Backprop {
    let d = state.descriptor();
    let c_feat = cache.features.len();
    let mut grads: Vec<Tensor> = state
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    let n = grads.len();

    let hw = state.head_weight().data();
    let mut dfeat = vec![0.0; c_feat];
    {
        let gw = grads[n - 2].data_mut();
        for k in 0..NUM_CLASSES {
            for c in 0..c_feat {
                gw[k * c_feat + c] = dlogits[k] * cache.features[c];
                dfeat[c] += hw[k * c_feat + c] * dlogits[k];
            }
        }
    }
    grads[n - 1].data_mut().copy_from_slice(dlogits);

    let last = cache.layers.last().expect("at least one layer");
    let last_out_len = match &last.pool_argmax {
        Some(a) => a.len(),
        None => last.relu.len(),
    };
    let mut dout = vec![0.0; last_out_len];
    for (c, &i) in cache.feature_argmax.iter().enumerate() {
        dout[i] += dfeat[c];
    }

    let mut activation_grad = None;
    for l in (0..cache.layers.len()).rev() {
        let spec = &d.conv_layers[l];
        let lc = &cache.layers[l];
        let conv_len = spec.out_channels * lc.conv_size * lc.conv_size;
        let mut dact = match &lc.pool_argmax {
            Some(argmax) => {
                let mut g = vec![0.0; conv_len];
                for (j, &i) in argmax.iter().enumerate() {
                    g[i] += dout[j];
                }
                g
            }
            None => dout,
        };
        if let Some(scale) = &lc.dropout_scale {
            dact.iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
        }
        if capture == Some(l) {
            activation_grad = Some(
                Tensor::from_vec(
                    &[spec.out_channels, lc.conv_size, lc.conv_size],
                    dact.clone(),
                )
                .expect("layer shape"),
            );
        }
        for (g, &a) in dact.iter_mut().zip(&lc.relu) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }

        let p = lc.conv_size * lc.conv_size;
        let dpre = ArrayView2::from_shape((spec.out_channels, p), &dact).expect("layer shape");
        let col = im2col(&lc.input, lc.in_channels, lc.in_size, spec, lc.conv_size);
        let dw = dpre.dot(&col.t());
        grads[2 * l]
            .data_mut()
            .copy_from_slice(dw.as_slice().expect("standard layout"));
        for (o, b) in grads[2 * l + 1].data_mut().iter_mut().enumerate() {
            *b = dact[o * p..(o + 1) * p].iter().sum();
        }
        if l == 0 {
            dout = Vec::new();
        } else {
            let k2 = lc.in_channels * spec.kernel * spec.kernel;
            let wm = ArrayView2::from_shape((spec.out_channels, k2), state.conv_weight(l).data())
                .expect("weight shape");
            let dcol = wm.t().dot(&dpre);
            dout = col2im(&dcol, lc.in_channels, lc.in_size, spec, lc.conv_size);
        }
    }

    Backprop {
        param_grads: grads,
        activation_grad,
    }
}

/// Class probabilities for a `[N, 3, S, S]` batch.
pub fn forward(state: &ModelState, batch: &Tensor, mode: Mode) -> Result<Tensor> {
    let d = state.descriptor();
    let per = [d.in_channels, d.input_size, d.input_size];
    if batch.shape().len() != 4 || batch.shape()[1..] != per {
        return Err(Error::ShapeMismatch {
            expected: format!("[N, {}, {}, {}]", per[0], per[1], per[2]),
            actual: format!("{:?}", batch.shape()),
        });
    }
    let n = batch.shape()[0];
    let len: usize = per.iter().product();
    let rows: Vec<[f64; NUM_CLASSES]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let img = Tensor::from_vec(&per, batch.data()[i * len..(i + 1) * len].to_vec())
                .expect("slice shape");
            let mode = match mode {
                Mode::Eval => Mode::Eval,
                Mode::Train { seed } => Mode::Train {
                    seed: mix_seed(seed, i as u64),
                },
            };
            forward_one(state, &img, mode).map(|c| c.probs)
        })
        .collect::<Result<_>>()?;
    Tensor::from_vec(&[n, NUM_CLASSES], rows.concat())
}

/// Mean cross-entropy of the true classes.
pub fn loss(probs: &Tensor, labels: &[EmotionLabel]) -> f64 {
    assert_eq!(
        probs.shape(),
        [labels.len(), NUM_CLASSES],
        "one probability row per label"
    );
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, l)| -probs.data()[i * NUM_CLASSES + l.index()].ln())
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy and its gradient over a set of images. Per-image
/// passes run in parallel; gradients are summed in input order.
pub fn loss_and_gradients(
    state: &ModelState,
    images: &[Tensor],
    labels: &[EmotionLabel],
    modes: &[Mode],
) -> Result<(f64, Vec<Tensor>)> {
    assert_eq!(images.len(), labels.len());
    assert_eq!(images.len(), modes.len());
    let n = images.len() as f64;
    let per_image: Vec<(f64, Vec<Tensor>)> = images
        .par_iter()
        .zip(labels.par_iter())
        .zip(modes.par_iter())
        .map(|((img, label), mode)| {
            let cache = forward_one(state, img, *mode)?;
            let mut dlogits = cache.probs;
            dlogits[label.index()] -= 1.0;
            dlogits.iter_mut().for_each(|g| *g /= n);
            let loss = -cache.probs[label.index()].ln();
            Ok((loss, backprop(state, &cache, &dlogits, None).param_grads))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut grads: Vec<Tensor> = state
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    for (l, g) in per_image {
        total += l;
        for (acc, g) in grads.iter_mut().zip(g) {
            acc.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b);
        }
    }
    Ok((total / n, grads))
}

/// Deterministic seed derivation (SplitMix64 finaliser).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}
