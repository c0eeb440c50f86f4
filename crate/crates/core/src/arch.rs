//! Layer vocabulary and architecture descriptions.
//!
//! An architecture is an input shape plus an ordered list of named stages.
//! Stage names are the layer boundaries that modulation insertion refers to
//! (`conv1`, `block2`, ..., `fc`).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 convolution without padding; each spatial extent shrinks by 2.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
    },
    /// 2x2 max pooling with stride 2; spatial extents are floor-halved.
    PoolStride2,
    /// conv-relu-conv with same padding, identity skip, relu after the sum.
    ResnetBlock {
        channels: usize,
    },
    /// Flattens its input and maps it to `output_dim` values.
    FullyConnected {
        output_dim: usize,
    },
    Relu,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::PoolStride2 => "pool-stride2",
            LayerSpec::ResnetBlock { .. } => "resnet-block",
            LayerSpec::FullyConnected { .. } => "fully-connected",
            LayerSpec::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl Stage {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        Self {
            name: name.into(),
            layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    /// `[height, width, channels]` for images or `[dim]` for vectors.
    pub input_shape: Vec<usize>,
    pub stages: Vec<Stage>,
}

/// Per-layer shapes resolved from an [`ArchSpec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedShapes {
    /// `layer_inputs[s][l]` is the input shape of layer `l` in stage `s`.
    pub layer_inputs: Vec<Vec<Vec<usize>>>,
    /// Output shape of each stage.
    pub stage_outputs: Vec<Vec<usize>>,
}

fn conv_block(name: &str, cin: usize, cout: usize) -> Stage {
    Stage::new(
        name,
        vec![
            LayerSpec::Conv3x3 {
                in_channels: cin,
                out_channels: cout,
            },
            LayerSpec::Relu,
            LayerSpec::PoolStride2,
            LayerSpec::ResnetBlock { channels: cout },
        ],
    )
}

impl ArchSpec {
    /// `conv1` followed by Conv-Pool-ResnetBlock stages named `block2`,
    /// `block3`, ... and a final `fc` embedding layer.
    pub fn conv_stack(
        input_shape: [usize; 3],
        conv1_channels: usize,
        block_channels: &[usize],
        embedding_dim: usize,
    ) -> Self {
        let mut stages = vec![Stage::new(
            "conv1",
            vec![
                LayerSpec::Conv3x3 {
                    in_channels: input_shape[2],
                    out_channels: conv1_channels,
                },
                LayerSpec::Relu,
            ],
        )];
        let mut cin = conv1_channels;
        for (i, &cout) in block_channels.iter().enumerate() {
            stages.push(conv_block(&format!("block{}", i + 2), cin, cout));
            cin = cout;
        }
        stages.push(Stage::new(
            "fc",
            vec![LayerSpec::FullyConnected {
                output_dim: embedding_dim,
            }],
        ));
        Self {
            input_shape: input_shape.to_vec(),
            stages,
        }
    }

    /// The reference architecture: 150x150x3 input, blocks of 64, 128, 128
    /// and 128 channels after a 32-channel conv, and a 256-d embedding.
    pub fn reference() -> Self {
        Self::conv_stack([150, 150, 3], 32, &[64, 128, 128, 128], 256)
    }

    /// Small image network used for quick experiments.
    pub fn desk(input_side: usize) -> Self {
        Self::conv_stack([input_side, input_side, 1], 8, &[16, 16], 16)
    }

    /// Fully-connected network for vector inputs: hidden stages named
    /// `hidden1`, `hidden2`, ... (fc + relu each) and a final `fc`.
    pub fn mlp(input_dim: usize, hidden: &[usize], embedding_dim: usize) -> Self {
        let mut stages: Vec<Stage> = hidden
            .iter()
            .enumerate()
            .map(|(i, &width)| {
                Stage::new(
                    format!("hidden{}", i + 1),
                    vec![LayerSpec::FullyConnected { output_dim: width }, LayerSpec::Relu],
                )
            })
            .collect();
        stages.push(Stage::new(
            "fc",
            vec![LayerSpec::FullyConnected {
                output_dim: embedding_dim,
            }],
        ));
        Self {
            input_shape: vec![input_dim],
            stages,
        }
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    /// Walks the layers, checking channel chaining and spatial extents.
    /// Layer indices in errors count across all stages from zero.
    pub fn resolve(&self) -> Result<ResolvedShapes> {
        if self.stages.is_empty() || self.stages.iter().all(|s| s.layers.is_empty()) {
            return Err(Error::Config("architecture has no layers".to_string()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut names: Vec<&str> = Vec::new();
        let mut shape = self.input_shape.clone();
        let mut layer_inputs = Vec::with_capacity(self.stages.len());
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        let mut index = 0usize;
        for stage in &self.stages {
            if names.contains(&stage.name.as_str()) {
                return Err(Error::Config(format!("duplicate stage name {}", stage.name)));
            }
            names.push(&stage.name);
            let mut inputs = Vec::with_capacity(stage.layers.len());
            for layer in &stage.layers {
                inputs.push(shape.clone());
                shape = next_shape(layer, &shape).map_err(|reason| Error::Layer { index, reason })?;
                index += 1;
            }
            layer_inputs.push(inputs);
            stage_outputs.push(shape.clone());
        }
        Ok(ResolvedShapes {
            layer_inputs,
            stage_outputs,
        })
    }

    pub fn embedding_dim(&self) -> Result<usize> {
        let shapes = self.resolve()?;
        let out = shapes.stage_outputs.last().expect("non-empty");
        Ok(out.iter().product())
    }
}

fn next_shape(layer: &LayerSpec, shape: &[usize]) -> core::result::Result<Vec<usize>, String> {
    let spatial = |what: &str| -> core::result::Result<(usize, usize, usize), String> {
        match shape {
            [h, w, c] => Ok((*h, *w, *c)),
            _ => Err(format!("{what} needs an HxWxC input, got {shape:?}")),
        }
    };
    match *layer {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
        } => {
            let (h, w, c) = spatial("conv3x3")?;
            if in_channels == 0 || out_channels == 0 {
                return Err("channel counts must be positive".to_string());
            }
            if c != in_channels {
                return Err(format!("conv3x3 expects {in_channels} input channels but receives {c}"));
            }
            if h < 3 || w < 3 {
                return Err(format!("conv3x3 needs at least 3x3 input, got {h}x{w}"));
            }
            Ok(vec![h - 2, w - 2, out_channels])
        }
        LayerSpec::PoolStride2 => {
            let (h, w, c) = spatial("pool-stride2")?;
            if h < 2 || w < 2 {
                return Err(format!("pool-stride2 needs at least 2x2 input, got {h}x{w}"));
            }
            Ok(vec![h / 2, w / 2, c])
        }
        LayerSpec::ResnetBlock { channels } => {
            let (h, w, c) = spatial("resnet-block")?;
            if channels == 0 {
                return Err("channel counts must be positive".to_string());
            }
            if c != channels {
                return Err(format!("resnet-block has {channels} channels but receives {c}"));
            }
            Ok(vec![h, w, c])
        }
        LayerSpec::FullyConnected { output_dim } => {
            if output_dim == 0 {
                return Err("fully-connected output_dim must be positive".to_string());
            }
            Ok(vec![output_dim])
        }
        LayerSpec::Relu => Ok(shape.to_vec()),
    }
}

/// Number of weights and biases a layer owns given its input shape.
pub fn layer_param_count(layer: &LayerSpec, input_shape: &[usize]) -> usize {
    match *layer {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
        } => 9 * in_channels * out_channels + out_channels,
        LayerSpec::ResnetBlock { channels } => 2 * (9 * channels * channels + channels),
        LayerSpec::FullyConnected { output_dim } => {
            let fan_in: usize = input_shape.iter().product();
            fan_in * output_dim + output_dim
        }
        LayerSpec::PoolStride2 | LayerSpec::Relu => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shape_chain() {
        let shapes = ArchSpec::reference().resolve().unwrap();
        let outs: Vec<Vec<usize>> = shapes.stage_outputs;
        assert_eq!(
            outs,
            vec![
                vec![148, 148, 32],
                vec![73, 73, 64],
                vec![35, 35, 128],
                vec![16, 16, 128],
                vec![7, 7, 128],
                vec![256],
            ]
        );
        // fc consumes the 7x7x128 map
        assert_eq!(shapes.layer_inputs[5][0], vec![7, 7, 128]);
    }

    #[test]
    fn chaining_error_names_layer() {
        let mut arch = ArchSpec::desk(32);
        // third stage, first layer: global index 2 + 4 = 6
        arch.stages[2].layers[0] = LayerSpec::Conv3x3 {
            in_channels: 5,
            out_channels: 16,
        };
        match arch.resolve().unwrap_err() {
            Error::Layer { index, .. } => assert_eq!(index, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resnet_requires_matching_channels() {
        let arch = ArchSpec {
            input_shape: vec![8, 8, 2],
            stages: vec![Stage::new("s", vec![LayerSpec::ResnetBlock { channels: 3 }])],
        };
        assert!(matches!(arch.resolve(), Err(Error::Layer { index: 0, .. })));
    }

    #[test]
    fn conv_on_vector_input_is_rejected() {
        let arch = ArchSpec {
            input_shape: vec![10],
            stages: vec![Stage::new(
                "s",
                vec![LayerSpec::Conv3x3 {
                    in_channels: 1,
                    out_channels: 1,
                }],
            )],
        };
        assert!(arch.resolve().is_err());
    }

    #[test]
    fn empty_arch_is_rejected() {
        let arch = ArchSpec {
            input_shape: vec![4],
            stages: vec![],
        };
        assert!(matches!(arch.resolve(), Err(Error::Config(_))));
    }
}
