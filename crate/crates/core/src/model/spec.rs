use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::MaxPool2D;
use crate::tensor::Padding;

/// One layer of a declarative network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    Relu,
    MaxPool,
    Dropout {
        rate: f32,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * (kernel * kernel * in_channels + 1),
            LayerKind::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    /// Output shape for a given input shape (no batch axis).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => match *input {
                [h, w, c] if c == in_channels => {
                    let (oh, ow) = padding.output_dims(h, w, kernel)?;
                    Ok(vec![oh, ow, out_channels])
                }
                _ => Err(Error::shape(format!(
                    "conv with {in_channels} input channels cannot take {input:?}"
                ))),
            },
            LayerKind::MaxPool => MaxPool2D::output_shape(input),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                if input.iter().product::<usize>() != in_features || input.len() != 1 {
                    return Err(Error::shape(format!(
                        "dense with {in_features} inputs cannot take {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerKind::Relu | LayerKind::Dropout { .. } => Ok(input.to_vec()),
            LayerKind::Softmax => {
                if input.len() != 1 {
                    return Err(Error::shape(format!(
                        "softmax needs a vector, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Whether the layer gets its own row in the summary table; activations
    /// are reported as part of the layer they follow.
    pub fn in_summary(&self) -> bool {
        !matches!(self, LayerKind::Relu | LayerKind::Softmax)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Ordered, shape-checked network description without weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[H, W, C]` of one input image.
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Output shape of every layer, validating the chain end to end: the
    /// network must finish with a dense layer of `class_count` outputs
    /// followed by softmax.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .kind
                .output_shape(&shape)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.name)))?;
            shapes.push(shape.clone());
        }
        match self.layers.as_slice() {
            [.., LayerSpec {
                kind: LayerKind::Dense { out_features, .. },
                ..
            }, LayerSpec {
                kind: LayerKind::Softmax,
                ..
            }] if *out_features == self.class_count => Ok(shapes),
            _ => Err(Error::shape(format!(
                "network must end in dense({}) followed by softmax",
                self.class_count
            ))),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind.param_count()).sum()
    }

    /// Copy with every dropout layer removed.
    pub fn without_dropout(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l.kind, LayerKind::Dropout { .. }))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

/// `conv(same) -> relu -> conv(valid) -> relu -> 2x2 max-pool`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
}

/// Parameters of the block-structured architecture family: conv blocks,
/// dropout, flatten, one hidden dense layer with ReLU, dropout, and the
/// softmax classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub blocks: Vec<ConvBlock>,
    pub dense_units: usize,
    pub class_count: usize,
    pub dropout_conv: f32,
    pub dropout_dense: f32,
}

impl ArchConfig {
    /// The full 256x256 architecture: five blocks (32, 64, 128, 256 with 3x3
    /// kernels, 512 with 5x5), a 1536-unit hidden layer, 38 classes.
    pub fn paper() -> Self {
        Self {
            input_side: 256,
            input_channels: 3,
            blocks: vec![
                ConvBlock {
                    channels: 32,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 64,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 128,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 256,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 512,
                    kernel: 5,
                },
            ],
            dense_units: 1536,
            class_count: 38,
            dropout_conv: 0.25,
            dropout_dense: 0.5,
        }
    }

    /// Desk-scale variant: 64x64 input and quartered widths. A 64-pixel
    /// input is exhausted after four blocks (64 -> 31 -> 14 -> 6 -> 2), so
    /// the fifth (5x5) block is omitted.
    pub fn compact(class_count: usize) -> Self {
        Self {
            input_side: 64,
            input_channels: 3,
            blocks: vec![
                ConvBlock {
                    channels: 8,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 16,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 32,
                    kernel: 3,
                },
                ConvBlock {
                    channels: 64,
                    kernel: 3,
                },
            ],
            dense_units: 384,
            class_count,
            dropout_conv: 0.25,
            dropout_dense: 0.5,
        }
    }

    /// Declarative description with layer names numbered per kind
    /// (`conv2d`, `conv2d_1`, ..., `max_pooling2d`, ...).
    pub fn spec(&self) -> Result<NetworkSpec> {
        if self.blocks.is_empty() || self.class_count == 0 || self.dense_units == 0 {
            return Err(Error::arg(
                "architecture needs blocks, dense units and classes",
            ));
        }
        let mut namer = Namer::default();
        let mut layers = Vec::new();
        let mut push = |base: &str, kind: LayerKind, layers: &mut Vec<LayerSpec>| {
            layers.push(LayerSpec {
                name: namer.next(base),
                kind,
            })
        };
        let mut channels = self.input_channels;
        for block in &self.blocks {
            for padding in [Padding::Same, Padding::Valid] {
                let conv = LayerKind::Conv {
                    in_channels: channels,
                    out_channels: block.channels,
                    kernel: block.kernel,
                    padding,
                };
                push("conv2d", conv, &mut layers);
                push("re_lu", LayerKind::Relu, &mut layers);
                channels = block.channels;
            }
            push("max_pooling2d", LayerKind::MaxPool, &mut layers);
        }
        let head = NetworkSpec {
            input_shape: [self.input_side, self.input_side, self.input_channels],
            class_count: self.class_count,
            layers: layers.clone(),
        };
        let mut shape = head.input_shape.to_vec();
        for l in &head.layers {
            shape = l.kind.output_shape(&shape)?;
        }
        let flat: usize = shape.iter().product();

        push(
            "dropout",
            LayerKind::Dropout {
                rate: self.dropout_conv,
            },
            &mut layers,
        );
        push("flatten", LayerKind::Flatten, &mut layers);
        push(
            "dense",
            LayerKind::Dense {
                in_features: flat,
                out_features: self.dense_units,
            },
            &mut layers,
        );
        push("re_lu", LayerKind::Relu, &mut layers);
        push(
            "dropout",
            LayerKind::Dropout {
                rate: self.dropout_dense,
            },
            &mut layers,
        );
        push(
            "dense",
            LayerKind::Dense {
                in_features: self.dense_units,
                out_features: self.class_count,
            },
            &mut layers,
        );
        push("softmax", LayerKind::Softmax, &mut layers);

        let spec = NetworkSpec { layers, ..head };
        spec.layer_shapes()?;
        Ok(spec)
    }
}

#[derive(Default)]
struct Namer(std::collections::HashMap<String, usize>);

impl Namer {
    fn next(&mut self, base: &str) -> String {
        let n = self.0.entry(base.to_string()).or_insert(0);
        let name = if *n == 0 {
            base.to_string()
        } else {
            format!("{base}_{n}")
        };
        *n += 1;
        name
    }
}
