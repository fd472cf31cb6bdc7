use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub const HALVE: PoolSpec = PoolSpec { size: 2, stride: 2 };
}

/// One conv layer, always followed by ReLU, then optional dropout, then
/// an optional max-pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: Option<PoolSpec>,
    pub dropout: Option<f64>,
}

impl ConvSpec {
    fn same3(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool: None,
            dropout: None,
        }
    }
}

/// Global spatial max-pool over the last conv activation, then a linear
/// layer and softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub name: String,
    pub in_channels: usize,
    pub input_size: usize,
    pub conv_layers: Vec<ConvSpec>,
    pub head: HeadSpec,
}

/// Spatial geometry of one conv layer for a given input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub in_channels: usize,
    pub in_size: usize,
    pub conv_size: usize,
    pub out_size: usize,
}

fn window_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

impl ArchitectureDescriptor {
    pub fn num_conv(&self) -> usize {
        self.conv_layers.len()
    }

    pub fn feature_channels(&self) -> usize {
        self.conv_layers
            .last()
            .map_or(self.in_channels, |c| c.out_channels)
    }

    /// Per-layer geometry; fails if any layer would collapse to nothing.
    pub fn geometry(&self) -> Result<Vec<LayerGeometry>> {
        let mut size = self.input_size;
        let mut channels = self.in_channels;
        let mut out = Vec::with_capacity(self.conv_layers.len());
        for (i, c) in self.conv_layers.iter().enumerate() {
            let conv_size = window_out(size, c.kernel, c.stride, c.padding).ok_or_else(|| {
                Error::InvalidArgument(format!("conv layer {i} does not fit a {size}x{size} input"))
            })?;
            let out_size = match c.pool {
                Some(p) => window_out(conv_size, p.size, p.stride, 0).ok_or_else(|| {
                    Error::InvalidArgument(format!("pool after conv layer {i} does not fit"))
                })?,
                None => conv_size,
            };
            out.push(LayerGeometry {
                in_channels: channels,
                in_size: size,
                conv_size,
                out_size,
            });
            size = out_size;
            channels = c.out_channels;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head.num_classes != NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "head must have {NUM_CLASSES} classes, got {}",
                self.head.num_classes
            )));
        }
        if self.conv_layers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one conv layer required".into(),
            ));
        }
        for (i, c) in self.conv_layers.iter().enumerate() {
            if let Some(r) = c.dropout {
                if !(0.0..1.0).contains(&r) {
                    return Err(Error::InvalidArgument(format!(
                        "dropout {r} on conv layer {i} outside [0,1)"
                    )));
                }
            }
        }
        self.geometry().map(|_| ())
    }

    /// Parameter tensor shapes in storage order: every conv weight and
    /// bias, then the head weight and bias.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut in_ch = self.in_channels;
        for (i, c) in self.conv_layers.iter().enumerate() {
            shapes.push((
                format!("conv{i}.weight"),
                vec![c.out_channels, in_ch, c.kernel, c.kernel],
            ));
            shapes.push((format!("conv{i}.bias"), vec![c.out_channels]));
            in_ch = c.out_channels;
        }
        shapes.push(("head.weight".into(), vec![self.head.num_classes, in_ch]));
        shapes.push(("head.bias".into(), vec![self.head.num_classes]));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn dropout_rates(&self) -> Vec<Option<f64>> {
        self.conv_layers.iter().map(|c| c.dropout).collect()
    }
}

/// 13-conv backbone in the 2-2-3-3-3 block layout with the fully connected
/// layers removed. Dropout follows each of the six conv layers in blocks
/// 4 and 5 at rates 0.30 to 0.55 in steps of 0.05.
pub fn build_vggface_descriptor() -> ArchitectureDescriptor {
    let blocks: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];
    let mut layers = Vec::new();
    for (b, &(count, channels)) in blocks.iter().enumerate() {
        for j in 0..count {
            let mut c = ConvSpec::same3(channels);
            if j + 1 == count && b + 1 < blocks.len() {
                c.pool = Some(PoolSpec::HALVE);
            }
            if b >= 3 {
                let k = layers.len() - 7;
                c.dropout = Some((30 + 5 * k) as f64 / 100.0);
            }
            layers.push(c);
        }
    }
    ArchitectureDescriptor {
        name: "vggface".into(),
        in_channels: 3,
        input_size: 224,
        conv_layers: layers,
        head: HeadSpec {
            num_classes: NUM_CLASSES,
        },
    }
}

/// The five conv layers of the 8-layer fast network, fully connected layers
/// removed, with dropout 0.2 after conv layers 3 to 5.
pub fn build_vggf_descriptor() -> ArchitectureDescriptor {
    let pool = Some(PoolSpec { size: 3, stride: 2 });
    let mut layers = vec![
        ConvSpec {
            out_channels: 64,
            kernel: 11,
            stride: 4,
            padding: 0,
            pool,
            dropout: None,
        },
        ConvSpec {
            out_channels: 256,
            kernel: 5,
            stride: 1,
            padding: 2,
            pool,
            dropout: None,
        },
    ];
    for _ in 0..3 {
        layers.push(ConvSpec {
            dropout: Some(0.2),
            ..ConvSpec::same3(256)
        });
    }
    ArchitectureDescriptor {
        name: "vggf".into(),
        in_channels: 3,
        input_size: 224,
        conv_layers: layers,
        head: HeadSpec {
            num_classes: NUM_CLASSES,
        },
    }
}

/// Small 3x3 backbone for desk-scale runs. Every layer but the last is
/// followed by a 2x2 max-pool while the map is at least 4 pixels wide.
pub fn build_toy_descriptor(
    conv_channels: &[usize],
    input_size: usize,
) -> Result<ArchitectureDescriptor> {
    if !(2..=6).contains(&conv_channels.len()) {
        return Err(Error::InvalidArgument(format!(
            "toy backbone needs 2 to 6 conv layers, got {}",
            conv_channels.len()
        )));
    }
    let mut size = input_size;
    let layers = conv_channels
        .iter()
        .enumerate()
        .map(|(i, &ch)| {
            let mut c = ConvSpec::same3(ch);
            if i + 1 < conv_channels.len() && size >= 4 {
                c.pool = Some(PoolSpec::HALVE);
                size /= 2;
            }
            c
        })
        .collect();
    let d = ArchitectureDescriptor {
        name: "toy".into(),
        in_channels: 3,
        input_size,
        conv_layers: layers,
        head: HeadSpec {
            num_classes: NUM_CLASSES,
        },
    };
    d.validate()?;
    Ok(d)
}
