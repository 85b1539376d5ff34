//! Minimal convolutional network engine: layer specs, parameter storage,
//! inference with reusable scratch buffers, backpropagation, AdamW/SGD
//! training, INT8 post-training quantization and a binary weight format.

mod backprop;
pub mod format;
mod gradcheck;
mod network;
mod quant;
mod spec;
mod train;
mod weights;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use backprop::{Gradients, ParamSlot, TrainCache};
pub use format::FormatError;
pub use gradcheck::{gradient_check, GradientReport};
pub use network::{Network, Real, Scratch};
pub use quant::{dequantize_tensor, fold_batch_norm, quantize_int8, quantize_tensor, QuantizedWeights};
pub use spec::{CountMode, LayerSpec, NetworkSpec, Padding, ParamCount, Shape3, BN_EPSILON};
pub use train::{accuracy, argmax, train, EpochStats, OptimizerKind, TrainOptions, TrainOutcome};
pub use weights::{expected_tensors, DType, NamedTensor, TensorData, WeightSet};

use crate::dsp::FeatureTensor;

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    ShapeMismatch(String),
    NonFiniteActivation,
    InvalidSpec(String),
    EmptyDataset,
    DivergedLoss { epoch: usize },
    Format(FormatError),
}

impl NnError {
    pub fn kind(&self) -> &'static str {
        match self {
            NnError::ShapeMismatch(_) => "ShapeMismatch",
            NnError::NonFiniteActivation => "NonFiniteActivation",
            NnError::InvalidSpec(_) => "InvalidSpec",
            NnError::EmptyDataset => "EmptyDataset",
            NnError::DivergedLoss { .. } => "DivergedLoss",
            NnError::Format(e) => e.kind(),
        }
    }
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            NnError::NonFiniteActivation => write!(f, "non-finite activation reached the softmax"),
            NnError::InvalidSpec(m) => write!(f, "invalid network spec: {m}"),
            NnError::EmptyDataset => write!(f, "training dataset is empty"),
            NnError::DivergedLoss { epoch } => write!(f, "loss became non-finite in epoch {epoch}"),
            NnError::Format(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for NnError {}

impl From<FormatError> for NnError {
    fn from(e: FormatError) -> Self {
        NnError::Format(e)
    }
}

/// Class probabilities for one input (inference mode, f32 arithmetic).
pub fn forward(spec: &NetworkSpec, weights: &WeightSet, input: &FeatureTensor) -> Result<Vec<f64>, NnError> {
    Network::<f32>::from_weights(spec, weights)?.predict(input)
}

pub fn param_count(spec: &NetworkSpec, mode: CountMode) -> ParamCount {
    spec.param_count(mode)
}

/// Gradients of `-ln p[target]` for every trainable tensor (f64
/// accumulation, batch norm in training mode over the single input) and the
/// loss value.
pub fn backward(
    spec: &NetworkSpec,
    weights: &WeightSet,
    input: &FeatureTensor,
    target: usize,
) -> Result<(WeightSet, f64), NnError> {
    let net = Network::<f64>::from_weights(spec, weights)?;
    let (loss, grads) = net.loss_and_gradients(input, target)?;
    Ok((grads.to_weight_set(&net), loss))
}

/// Decodes a weight file and checks it against `spec`.
pub fn load_weights(bytes: &[u8], spec: &NetworkSpec) -> Result<WeightSet, NnError> {
    let ws = format::decode(bytes)?;
    ws.check_against(spec)?;
    Ok(ws)
}

pub fn save_weights(weights: &WeightSet) -> Vec<u8> {
    format::encode(weights)
}

#[cfg(test)]
mod tests;
