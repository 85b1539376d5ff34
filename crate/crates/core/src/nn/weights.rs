use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::spec::{LayerSpec, NetworkSpec};
use super::NnError;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    Int8Sym,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::Int8Sym => 1,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::Int8Sym => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    /// Symmetric per-tensor quantization: real value = `q * scale`.
    Int8 { values: Vec<i8>, scale: f32 },
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::Int8 { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::Int8 { .. } => DType::Int8Sym,
        }
    }

    /// Values as f32, dequantizing when stored as int8.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::F32(v) => v.clone(),
            TensorData::Int8 { values, scale } => values.iter().map(|&q| q as f32 * scale).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Self {
        NamedTensor { name: name.into(), dims, data: TensorData::F32(values) }
    }
}

/// Named parameter tensors of one network, in a stable order.
///
/// Naming: `layer{i}.kernel` `[kh, kw, in, out]` and `layer{i}.bias` for
/// convolutions; `layer{i}.gamma`, `.beta`, `.running_mean`, `.running_var`
/// for batch norm; `layer{i}.weight` `[in, out]` and `layer{i}.bias` for
/// dense layers. A batch-norm layer without tensors has been folded into the
/// preceding convolution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    pub tensors: Vec<NamedTensor>,
}

pub(crate) fn tensor_name(layer: usize, field: &str) -> String {
    format!("layer{layer}.{field}")
}

/// Shapes every tensor of `spec` must have, in canonical order.
pub fn expected_tensors(spec: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let cins = spec.input_channels_per_layer();
    let mut out = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d { out_channels, kernel_h, kernel_w, .. } => {
                out.push((tensor_name(i, "kernel"), vec![kernel_h, kernel_w, cins[i], out_channels]));
                out.push((tensor_name(i, "bias"), vec![out_channels]));
            }
            LayerSpec::BatchNorm { channels, .. } => {
                for f in ["gamma", "beta", "running_mean", "running_var"] {
                    out.push((tensor_name(i, f), vec![channels]));
                }
            }
            LayerSpec::Dense { out_features } => {
                out.push((tensor_name(i, "weight"), vec![cins[i], out_features]));
                out.push((tensor_name(i, "bias"), vec![out_features]));
            }
            _ => {}
        }
    }
    out
}

impl WeightSet {
    /// All-zero convolution and dense tensors; batch norm set to identity
    /// (gamma 1, beta 0, mean 0, var 1).
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let tensors = expected_tensors(spec)
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let fill = if name.ends_with(".gamma") || name.ends_with(".running_var") { 1.0 } else { 0.0 };
                NamedTensor::f32(name, dims, vec![fill; n])
            })
            .collect();
        WeightSet { tensors }
    }

    /// He-normal kernels, zero biases, identity batch norm.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut ws = WeightSet::zeros(spec);
        for t in ws.tensors.iter_mut() {
            if t.name.ends_with(".kernel") || t.name.ends_with(".weight") {
                let fan_in: usize = t.dims[..t.dims.len() - 1].iter().product();
                let std = libm::sqrt(2.0 / fan_in as f64);
                if let TensorData::F32(v) = &mut t.data {
                    for x in v.iter_mut() {
                        *x = (rng.normal() * std) as f32;
                    }
                }
            }
        }
        ws
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// `Int8Sym` when any tensor is quantized.
    pub fn dtype(&self) -> DType {
        if self.tensors.iter().any(|t| t.data.dtype() == DType::Int8Sym) {
            DType::Int8Sym
        } else {
            DType::F32
        }
    }

    /// Bytes of raw tensor values, excluding names, shapes and scales.
    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len() * t.data.dtype().byte_width()).sum()
    }

    /// Checks that every tensor `spec` needs is present with the right shape.
    /// Batch-norm tensors may be absent as a group (folded).
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<(), NnError> {
        spec.validate()?;
        let expected = expected_tensors(spec);
        for (name, dims) in &expected {
            match self.get(name) {
                Some(t) => {
                    if &t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                        return Err(NnError::ShapeMismatch(format!(
                            "tensor {name}: expected {dims:?}, found {:?}",
                            t.dims
                        )));
                    }
                }
                None if is_bn_field(name) => {}
                None => return Err(NnError::ShapeMismatch(format!("missing tensor {name}"))),
            }
        }
        for (i, layer) in spec.layers.iter().enumerate() {
            if let LayerSpec::BatchNorm { .. } = layer {
                let present = ["gamma", "beta", "running_mean", "running_var"]
                    .iter()
                    .filter(|f| self.get(&tensor_name(i, f)).is_some())
                    .count();
                if present != 0 && present != 4 {
                    return Err(NnError::ShapeMismatch(format!("layer {i}: partial batch-norm tensors")));
                }
                if let Some(var) = self.get(&tensor_name(i, "running_var")) {
                    if var.data.to_f32().iter().any(|&v| !(v >= 0.0)) {
                        return Err(NnError::ShapeMismatch(format!("layer {i}: negative running variance")));
                    }
                }
            }
        }
        if let Some(extra) = self.tensors.iter().find(|t| !expected.iter().any(|(n, _)| *n == t.name)) {
            return Err(NnError::ShapeMismatch(format!("unexpected tensor {}", extra.name)));
        }
        Ok(())
    }

    /// Values of `name` as f32, or an error naming the tensor.
    pub(crate) fn values(&self, name: &str) -> Result<Vec<f32>, NnError> {
        self.get(name)
            .map(|t| t.data.to_f32())
            .ok_or_else(|| NnError::ShapeMismatch(format!("missing tensor {name}")))
    }
}

fn is_bn_field(name: &str) -> bool {
    [".gamma", ".beta", ".running_mean", ".running_var"].iter().any(|s| name.ends_with(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_match_spec_shapes() {
        let spec = NetworkSpec::emotion_cnn(4);
        let ws = WeightSet::zeros(&spec);
        ws.check_against(&spec).unwrap();
        assert_eq!(ws.get("layer0.kernel").unwrap().dims, [3, 3, 1, 32]);
        assert_eq!(ws.get("layer12.weight").unwrap().dims, [128, 4]);
        let total: usize = ws.tensors.iter().map(|t| t.data.len()).sum();
        assert_eq!(total, spec.param_count(super::super::CountMode::Full).total);
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::tiny(8, (4, 8), 3);
        assert_eq!(WeightSet::init(&spec, 1), WeightSet::init(&spec, 1));
        assert_ne!(WeightSet::init(&spec, 1), WeightSet::init(&spec, 2));
    }

    #[test]
    fn shape_checks() {
        let spec = NetworkSpec::emotion_cnn(4);
        let mut ws = WeightSet::zeros(&spec);
        ws.get_mut("layer4.kernel").unwrap().dims = vec![3, 3, 32, 32];
        assert!(matches!(ws.check_against(&spec), Err(NnError::ShapeMismatch(_))));

        let mut ws = WeightSet::zeros(&spec);
        ws.tensors.retain(|t| t.name != "layer1.beta");
        assert!(ws.check_against(&spec).is_err());

        let mut ws = WeightSet::zeros(&spec);
        ws.tensors.retain(|t| !t.name.starts_with("layer1."));
        ws.check_against(&spec).unwrap();

        let ws = WeightSet::zeros(&spec);
        assert!(ws.check_against(&NetworkSpec::emotion_cnn(6)).is_err());
    }
}
