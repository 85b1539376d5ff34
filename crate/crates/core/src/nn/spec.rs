use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, extra padding on the
    /// bottom/right when the total is odd.
    #[default]
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { out_channels: usize, kernel_h: usize, kernel_w: usize, stride: usize, padding: Padding },
    BatchNorm { channels: usize, epsilon: f64 },
    Relu,
    MaxPool2d { pool_h: usize, pool_w: usize },
    GlobalAvgPool,
    Dense { out_features: usize },
    Softmax,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv2d { out_channels, kernel_h: 3, kernel_w: 3, stride: 1, padding: Padding::Same }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm { channels, epsilon: BN_EPSILON }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "max_pool2d",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }
}

pub const BN_EPSILON: f64 = 1e-5;

/// Activation shape, `[height][width][channels]` with channels fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Shape3 { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered layer list plus the fixed input height and channel count. The
/// time axis (width) is free: every layer is convolutional until global
/// average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_height: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Which parameters [`NetworkSpec::param_count`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Convolution weights and biases plus dense weights; no batch-norm
    /// statistics and no dense bias. This is the convention of the published
    /// architecture table.
    Table,
    /// Every stored parameter: convolutions, dense weights and bias, and the
    /// four per-channel batch-norm tensors.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    /// `(layer index, layer name, count)` for layers holding parameters.
    pub per_layer: Vec<(usize, &'static str, usize)>,
    pub total: usize,
}

/// Output spatial size and leading padding for 'same' convolution.
pub(crate) fn same_geometry(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, needed / 2)
}

impl NetworkSpec {
    /// The emotion CNN: three conv/BN/ReLU blocks (32, 64, 128 channels, 3x3,
    /// 'same') with 2x2 max pooling after the first two, global average
    /// pooling, and a dense softmax head over `classes` categories.
    pub fn emotion_cnn(classes: usize) -> Self {
        Self::emotion_cnn_with_input(64, 1, classes)
    }

    pub fn emotion_cnn_with_input(height: usize, channels: usize, classes: usize) -> Self {
        NetworkSpec {
            input_height: height,
            input_channels: channels,
            layers: alloc::vec![
                LayerSpec::conv3x3(32),
                LayerSpec::batch_norm(32),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
                LayerSpec::conv3x3(64),
                LayerSpec::batch_norm(64),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
                LayerSpec::conv3x3(128),
                LayerSpec::batch_norm(128),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_features: classes },
                LayerSpec::Softmax,
            ],
        }
    }

    /// Reduced two-block network for gradient checks.
    pub fn tiny(height: usize, widths: (usize, usize), classes: usize) -> Self {
        NetworkSpec {
            input_height: height,
            input_channels: 1,
            layers: alloc::vec![
                LayerSpec::conv3x3(widths.0),
                LayerSpec::batch_norm(widths.0),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { pool_h: 2, pool_w: 2 },
                LayerSpec::conv3x3(widths.1),
                LayerSpec::batch_norm(widths.1),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out_features: classes },
                LayerSpec::Softmax,
            ],
        }
    }

    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Dense { out_features } => Some(*out_features),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Shapes after each layer for an input of `width` frames.
    pub fn shapes(&self, width: usize) -> Result<Vec<Shape3>, NnError> {
        let mut shape = Shape3::new(self.input_height, width, self.input_channels);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv2d { out_channels, kernel_h, kernel_w, stride, .. } => {
                    if stride == 0 || kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                        return Err(NnError::InvalidSpec(format!("layer {i}: zero-sized convolution")));
                    }
                    if shape.h == 0 || shape.w == 0 {
                        return Err(shape_err(i, "non-empty input", shape));
                    }
                    let (h, _) = same_geometry(shape.h, kernel_h, stride);
                    let (w, _) = same_geometry(shape.w, kernel_w, stride);
                    Shape3::new(h, w, out_channels)
                }
                LayerSpec::BatchNorm { channels, epsilon } => {
                    if channels != shape.c {
                        return Err(shape_err(i, &format!("{channels} channels"), shape));
                    }
                    if !(epsilon > 0.0) {
                        return Err(NnError::InvalidSpec(format!("layer {i}: epsilon must be positive")));
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Softmax => shape,
                LayerSpec::MaxPool2d { pool_h, pool_w } => {
                    if pool_h == 0 || pool_w == 0 {
                        return Err(NnError::InvalidSpec(format!("layer {i}: zero-sized pooling window")));
                    }
                    let next = Shape3::new(shape.h / pool_h, shape.w / pool_w, shape.c);
                    if next.is_empty() {
                        return Err(shape_err(i, "input at least as large as the pooling window", shape));
                    }
                    next
                }
                LayerSpec::GlobalAvgPool => Shape3::new(1, 1, shape.c),
                LayerSpec::Dense { out_features } => {
                    if shape.h != 1 || shape.w != 1 {
                        return Err(shape_err(i, "pooled 1x1 input", shape));
                    }
                    Shape3::new(1, 1, out_features)
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Structural checks independent of input width.
    pub fn validate(&self) -> Result<(), NnError> {
        let n = self.layers.len();
        if n < 2 || self.layers[n - 1] != LayerSpec::Softmax || !matches!(self.layers[n - 2], LayerSpec::Dense { .. })
        {
            return Err(NnError::InvalidSpec("network must end with Dense followed by Softmax".into()));
        }
        if self.layers[..n - 1].contains(&LayerSpec::Softmax) {
            return Err(NnError::InvalidSpec("softmax is only allowed as the final layer".into()));
        }
        // a generous width so pooling never empties the tensor
        let pools: usize = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::MaxPool2d { pool_w, .. } => *pool_w,
                _ => 1,
            })
            .product();
        self.shapes(pools.max(1))?;
        Ok(())
    }

    /// Input channel count seen by each layer.
    pub(crate) fn input_channels_per_layer(&self) -> Vec<usize> {
        let mut c = self.input_channels;
        self.layers
            .iter()
            .map(|l| {
                let cin = c;
                match *l {
                    LayerSpec::Conv2d { out_channels, .. } => c = out_channels,
                    LayerSpec::Dense { out_features } => c = out_features,
                    _ => {}
                }
                cin
            })
            .collect()
    }

    pub fn param_count(&self, mode: CountMode) -> ParamCount {
        let cins = self.input_channels_per_layer();
        let per_layer: Vec<(usize, &'static str, usize)> = self
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let n = match (*l, mode) {
                    (LayerSpec::Conv2d { out_channels, kernel_h, kernel_w, .. }, _) => {
                        kernel_h * kernel_w * cins[i] * out_channels + out_channels
                    }
                    (LayerSpec::Dense { out_features }, CountMode::Table) => cins[i] * out_features,
                    (LayerSpec::Dense { out_features }, CountMode::Full) => cins[i] * out_features + out_features,
                    (LayerSpec::BatchNorm { channels, .. }, CountMode::Full) => 4 * channels,
                    _ => return None,
                };
                Some((i, l.name(), n))
            })
            .collect();
        let total = per_layer.iter().map(|p| p.2).sum();
        ParamCount { per_layer, total }
    }
}

fn shape_err(layer: usize, expected: &str, found: Shape3) -> NnError {
    NnError::ShapeMismatch(format!("layer {layer}: expected {expected}, got {}x{}x{}", found.h, found.w, found.c))
}
