//! Post-training INT8 quantization: batch norm folded into the preceding
//! convolution, then every tensor stored symmetric per-tensor.

use alloc::string::String;
use alloc::vec::Vec;

use super::spec::{LayerSpec, NetworkSpec};
use super::weights::{tensor_name, NamedTensor, TensorData, WeightSet};
use super::NnError;

/// Symmetric per-tensor quantization: `scale = max|w| / 127`,
/// `q = round(w / scale)`. An all-zero tensor gets scale 1.
pub fn quantize_tensor(values: &[f32]) -> (Vec<i8>, f32) {
    let max = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return (alloc::vec![0; values.len()], 1.0);
    }
    let scale = max / 127.0;
    let q = values
        .iter()
        .map(|&v| libm::roundf(v / scale).clamp(-127.0, 127.0) as i8)
        .collect();
    (q, scale)
}

pub fn dequantize_tensor(values: &[i8], scale: f32) -> Vec<f32> {
    values.iter().map(|&q| q as f32 * scale).collect()
}

/// Absorbs each batch norm that directly follows a convolution into that
/// convolution's kernel and bias, using the running statistics. Batch norms
/// not preceded by a convolution are kept.
pub fn fold_batch_norm(spec: &NetworkSpec, weights: &WeightSet) -> Result<WeightSet, NnError> {
    weights.check_against(spec)?;
    let mut out = weights.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        let LayerSpec::BatchNorm { epsilon, .. } = *layer else { continue };
        if i == 0 || !matches!(spec.layers[i - 1], LayerSpec::Conv2d { .. }) {
            continue;
        }
        let Some(gamma) = out.get(&tensor_name(i, "gamma")).map(|t| t.data.to_f32()) else { continue };
        let beta = out.values(&tensor_name(i, "beta"))?;
        let mean = out.values(&tensor_name(i, "running_mean"))?;
        let var = out.values(&tensor_name(i, "running_var"))?;
        let scale: Vec<f64> = gamma
            .iter()
            .zip(&var)
            .map(|(&g, &v)| g as f64 / libm::sqrt(v as f64 + epsilon))
            .collect();

        let conv = i - 1;
        let kernel = out.values(&tensor_name(conv, "kernel"))?;
        let bias = out.values(&tensor_name(conv, "bias"))?;
        let cout = bias.len();
        let kernel: Vec<f32> = kernel
            .iter()
            .enumerate()
            .map(|(j, &w)| (w as f64 * scale[j % cout]) as f32)
            .collect();
        let bias: Vec<f32> = (0..cout)
            .map(|c| ((bias[c] as f64 - mean[c] as f64) * scale[c] + beta[c] as f64) as f32)
            .collect();
        out.get_mut(&tensor_name(conv, "kernel")).expect("checked").data = TensorData::F32(kernel);
        out.get_mut(&tensor_name(conv, "bias")).expect("checked").data = TensorData::F32(bias);
        let prefix = alloc::format!("layer{i}.");
        out.tensors.retain(|t| !t.name.starts_with(&prefix));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct QuantizedWeights {
    pub weights: WeightSet,
    /// Tensors that were entirely zero and received scale 1.
    pub degenerate: Vec<String>,
}

/// Folds batch norm, then quantizes every remaining tensor to INT8.
pub fn quantize_int8(spec: &NetworkSpec, weights: &WeightSet) -> Result<QuantizedWeights, NnError> {
    if weights.dtype() != super::DType::F32 {
        return Err(NnError::ShapeMismatch("weights are already quantized".into()));
    }
    let folded = fold_batch_norm(spec, weights)?;
    let mut degenerate = Vec::new();
    let tensors = folded
        .tensors
        .into_iter()
        .map(|t| {
            let values = t.data.to_f32();
            let (q, scale) = quantize_tensor(&values);
            if values.iter().all(|&v| v == 0.0) {
                degenerate.push(t.name.clone());
            }
            NamedTensor { name: t.name, dims: t.dims, data: TensorData::Int8 { values: q, scale } }
        })
        .collect();
    Ok(QuantizedWeights { weights: WeightSet { tensors }, degenerate })
}
