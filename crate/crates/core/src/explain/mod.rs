//! Grad-CAM heatmaps and explanation panels.

mod font;
mod panel;

pub use panel::{heat_color, overlay, render_panel, upsample_heatmap, write_sidecar, SidecarEntry};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmotionLabel;
use crate::error::{Error, Result};
use crate::model::{argmax, backprop, forward_one, Mode, ModelState, Preprocessing};
use crate::pixels::PixelGrid;
use crate::tensor::Tensor;
use crate::transforms::Pipeline;

/// Non-negative map at the spatial resolution of the chosen conv layer,
/// scaled so the maximum is 1 unless every value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub target: EmotionLabel,
}

impl HeatMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Summed values in rows `< height / 2` and in the remaining rows. For
    /// odd heights the middle row counts toward the lower half.
    pub fn half_masses(&self) -> (f64, f64) {
        let split = self.height / 2 * self.width;
        let upper = self.values[..split].iter().sum();
        let lower = self.values[split..].iter().sum();
        (upper, lower)
    }
}

/// `ReLU(sum_k alpha_k A_k)` with `alpha_k` the spatial mean of the
/// gradient for channel `k`, normalised by its maximum. Both inputs are
/// `[K, H, W]`.
pub fn cam_from_activations(
    activations: &Tensor,
    gradients: &Tensor,
    target: EmotionLabel,
) -> Result<HeatMap> {
    gradients.expect_shape(activations.shape())?;
    let shape = activations.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected [K, H, W] activations, got {shape:?}"
        )));
    }
    let (k, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mut values = vec![0.0; plane];
    for c in 0..k {
        let g = &gradients.data()[c * plane..(c + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        let a = &activations.data()[c * plane..(c + 1) * plane];
        values.iter_mut().zip(a).for_each(|(v, a)| *v += alpha * a);
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(HeatMap {
        height: h,
        width: w,
        values,
        target,
    })
}

/// Grad-CAM on a prepared `[3, S, S]` input in evaluation mode. The target
/// defaults to the predicted class and the layer to the last conv layer.
/// Class scores are the pre-softmax logits.
pub fn grad_cam(
    state: &ModelState,
    input: &Tensor,
    target: Option<EmotionLabel>,
    layer: Option<usize>,
) -> Result<HeatMap> {
    let num_layers = state.descriptor().conv_layers.len();
    let layer = layer.unwrap_or(num_layers - 1);
    if layer >= num_layers {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range for {num_layers} conv layers"
        )));
    }
    let cache = forward_one(state, input, Mode::Eval)?;
    let target = target
        .unwrap_or_else(|| EmotionLabel::from_index(argmax(&cache.probs)).expect("class index"));
    let mut dlogits = [0.0; crate::data::NUM_CLASSES];
    dlogits[target.index()] = 1.0;
    let grads = backprop(state, &cache, &dlogits, Some(layer))
        .activation_grad
        .expect("captured layer is in range");
    let acts = cache.activation(layer, state.descriptor().conv_layers[layer].out_channels);
    cam_from_activations(&acts, &grads, target)
}

/// A heatmap together with the model's prediction for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub predicted: EmotionLabel,
    pub confidence: f64,
    pub heatmap: HeatMap,
}

/// Explains each image for its predicted class at the last conv layer.
pub fn explain_images(
    state: &ModelState,
    prep: &Preprocessing,
    pipeline: &Pipeline,
    images: &[PixelGrid],
) -> Result<Vec<Explanation>> {
    images
        .par_iter()
        .map(|img| {
            let input = prep.apply(&pipeline.apply_eval(img));
            let probs = forward_one(state, &input, Mode::Eval)?.probs;
            let class = argmax(&probs);
            let predicted = EmotionLabel::from_index(class).expect("class index");
            Ok(Explanation {
                predicted,
                confidence: probs[class],
                heatmap: grad_cam(state, &input, Some(predicted), None)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_toy_descriptor;

    #[test]
    fn zero_gradients_give_zero_map() {
        let a = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let g = Tensor::zeros(&[2, 2, 2]);
        let m = cam_from_activations(&a, &g, EmotionLabel::Fear).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.max(), 0.0);
    }

    #[test]
    fn single_channel_uniform_gradient_is_relu_of_activation() {
        let a = Tensor::from_vec(&[1, 2, 3], vec![-1.0, 0.0, 1.0, 2.0, 4.0, -3.0]).unwrap();
        let g = Tensor::from_vec(&[1, 2, 3], vec![0.5; 6]).unwrap();
        let m = cam_from_activations(&a, &g, EmotionLabel::Fear).unwrap();
        assert_eq!(m.values, vec![0.0, 0.0, 0.25, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn hand_computed_two_channel_fixture() {
        // alpha_0 = (1+2+3+2)/4 = 2, alpha_1 = (-1+0-1-2)/4 = -1
        // raw = 2*A0 - A1 = [2-4, 4-0, 0-1, 6-2] = [-2, 4, -1, 4]
        let a = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 1.0, 2.0]).unwrap();
        let g =
            Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 2.0, -1.0, 0.0, -1.0, -2.0]).unwrap();
        let m = cam_from_activations(&a, &g, EmotionLabel::Happiness).unwrap();
        assert_eq!(m.values, vec![0.0, 1.0, 0.0, 1.0]);
        let a = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 1.0, 1.0]).unwrap();
        // raw = [-2, 4, -1, 5]
        let m = cam_from_activations(&a, &g, EmotionLabel::Happiness).unwrap();
        assert_eq!(m.values, vec![0.0, 0.8, 0.0, 1.0]);
        assert_eq!(m.half_masses(), (0.8, 1.0));
    }

    #[test]
    fn model_maps_are_normalised_and_layers_checked() {
        let state = ModelState::random(build_toy_descriptor(&[4, 6, 8], 16).unwrap(), 3).unwrap();
        let input = Tensor::from_vec(
            &[3, 16, 16],
            (0..768)
                .map(|i| ((i * 37 % 101) as f64 - 50.0) / 25.0)
                .collect(),
        )
        .unwrap();
        for layer in 0..3 {
            for class in EmotionLabel::ALL {
                let m = grad_cam(&state, &input, Some(class), Some(layer)).unwrap();
                assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
                let max = m.max();
                assert!(max == 0.0 || max == 1.0);
            }
        }
        let m = grad_cam(&state, &input, None, None).unwrap();
        assert_eq!((m.height, m.width), (4, 4));
        assert!(grad_cam(&state, &input, None, Some(3)).is_err());
    }
}
