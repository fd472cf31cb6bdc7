use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::descriptor::ArchitectureDescriptor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of the freshly initialised classifier head.
pub const HEAD_INIT_STD: f64 = 0.1;

/// Parameters of one network. Storage order follows
/// [`ArchitectureDescriptor::param_shapes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    descriptor: ArchitectureDescriptor,
    params: Vec<Tensor>,
}

impl ModelState {
    pub fn zeros(descriptor: ArchitectureDescriptor) -> Result<Self> {
        descriptor.validate()?;
        let params = descriptor
            .param_shapes()
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Ok(Self { descriptor, params })
    }

    /// He-normal conv weights, zero biases, and a Gaussian head.
    pub fn random(descriptor: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        let mut state = Self::zeros(descriptor)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..state.descriptor.num_conv() {
            let w = &mut state.params[2 * layer];
            let fan_in: usize = w.shape()[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            for v in w.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(state.init_head_weights(seed.wrapping_add(1)))
    }

    pub fn from_params(descriptor: ArchitectureDescriptor, params: Vec<Tensor>) -> Result<Self> {
        descriptor.validate()?;
        let shapes = descriptor.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameter tensors", shapes.len()),
                actual: format!("{}", params.len()),
            });
        }
        for ((_, s), p) in shapes.iter().zip(&params) {
            p.expect_shape(s)?;
        }
        Ok(Self { descriptor, params })
    }

    /// Redraws the head weights from N(0, 0.1^2) and zeroes the head bias.
    /// Backbone parameters are left untouched.
    pub fn init_head_weights(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, HEAD_INIT_STD).expect("finite std");
        let n = self.params.len();
        for v in self.params[n - 2].data_mut() {
            *v = normal.sample(&mut rng);
        }
        self.params[n - 1].data_mut().fill(0.0);
        self
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        &self.descriptor
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.descriptor
            .param_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn conv_weight(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer]
    }

    pub fn conv_weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params[2 * layer]
    }

    pub fn conv_bias(&self, layer: usize) -> &Tensor {
        &self.params[2 * layer + 1]
    }

    pub fn head_weight(&self) -> &Tensor {
        &self.params[self.params.len() - 2]
    }

    pub fn head_bias(&self) -> &Tensor {
        &self.params[self.params.len() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Fraction of exactly-zero weights in each conv layer.
    pub fn conv_zero_fractions(&self) -> Vec<f64> {
        (0..self.descriptor.num_conv())
            .map(|l| {
                let w = self.conv_weight(l);
                w.zero_count() as f64 / w.len() as f64
            })
            .collect()
    }
}

/// Input normalisation: `(pixel - channel_mean) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub channel_mean: [f64; 3],
    pub scale: f64,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            channel_mean: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Preprocessing {
    /// Channel means over a set of `[3, H, W]` tensors.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Tensor>, scale: f64) -> Self {
        let mut sum = [0.0; 3];
        let mut count = 0usize;
        for t in images {
            let plane = t.shape()[1] * t.shape()[2];
            for (c, s) in sum.iter_mut().enumerate() {
                *s += t.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
            count += plane;
        }
        let channel_mean = if count == 0 {
            [0.0; 3]
        } else {
            sum.map(|s| s / count as f64)
        };
        Self {
            channel_mean,
            scale,
        }
    }

    pub fn apply(&self, image: &Tensor) -> Tensor {
        let plane = image.shape()[1] * image.shape()[2];
        let mut out = image.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.channel_mean[i / plane]) * self.scale;
        }
        out
    }
}
