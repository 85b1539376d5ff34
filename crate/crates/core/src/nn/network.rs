//! Materialized network: layer parameters in a working precision plus the
//! allocation-free inference path.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::spec::{same_geometry, LayerSpec, NetworkSpec, Shape3};
use super::weights::{tensor_name, NamedTensor, WeightSet};
use super::NnError;
use crate::dsp::FeatureTensor;

/// Working precision of the engine.
pub trait Real: Float + Default + core::fmt::Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from(x).expect("finite f64 converts to working precision")
}

#[derive(Debug, Clone)]
pub(crate) struct Conv<T> {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
    /// `[kh][kw][cin][cout]`
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm<T> {
    pub eps: T,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs][outputs]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer<T> {
    Conv(Conv<T>),
    BatchNorm(BatchNorm<T>),
    /// Batch norm already folded into the preceding convolution.
    FoldedNorm,
    Relu,
    MaxPool { ph: usize, pw: usize },
    GlobalAvgPool,
    Dense(Dense<T>),
    Softmax,
}

/// Reusable activation buffers for [`Network::forward`]. Buffers only grow,
/// so repeated calls with same-sized inputs do not allocate.
#[derive(Debug, Default)]
pub struct Scratch<T> {
    ping: Vec<T>,
    pong: Vec<T>,
    affine: Vec<T>,
}

impl<T: Real> Scratch<T> {
    pub fn new() -> Self {
        Scratch { ping: Vec::new(), pong: Vec::new(), affine: Vec::new() }
    }

    /// Total reserved element count, for allocation checks.
    pub fn capacity(&self) -> usize {
        self.ping.capacity() + self.pong.capacity() + self.affine.capacity()
    }

    fn reserve(&mut self, activations: usize, channels: usize) {
        if self.ping.len() < activations {
            self.ping.resize(activations, T::zero());
            self.pong.resize(activations, T::zero());
        }
        if self.affine.len() < 2 * channels {
            self.affine.resize(2 * channels, T::zero());
        }
    }
}

/// A network with parameters held in precision `T`.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub(crate) spec: NetworkSpec,
    pub(crate) layers: Vec<Layer<T>>,
}

fn to_real<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| cast::<T>(x as f64)).collect()
}

fn to_f32<T: Real>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect()
}

impl<T: Real> Network<T> {
    pub fn from_weights(spec: &NetworkSpec, weights: &WeightSet) -> Result<Self, NnError> {
        weights.check_against(spec)?;
        let cins = spec.input_channels_per_layer();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let layer = match *l {
                LayerSpec::Conv2d { out_channels, kernel_h, kernel_w, stride, .. } => Layer::Conv(Conv {
                    kh: kernel_h,
                    kw: kernel_w,
                    stride,
                    cin: cins[i],
                    cout: out_channels,
                    kernel: to_real(&weights.values(&tensor_name(i, "kernel"))?),
                    bias: to_real(&weights.values(&tensor_name(i, "bias"))?),
                }),
                LayerSpec::BatchNorm { epsilon, .. } => {
                    if weights.get(&tensor_name(i, "gamma")).is_none() {
                        Layer::FoldedNorm
                    } else {
                        Layer::BatchNorm(BatchNorm {
                            eps: cast(epsilon),
                            gamma: to_real(&weights.values(&tensor_name(i, "gamma"))?),
                            beta: to_real(&weights.values(&tensor_name(i, "beta"))?),
                            mean: to_real(&weights.values(&tensor_name(i, "running_mean"))?),
                            var: to_real(&weights.values(&tensor_name(i, "running_var"))?),
                        })
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { pool_h, pool_w } => Layer::MaxPool { ph: pool_h, pw: pool_w },
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerSpec::Dense { out_features } => Layer::Dense(Dense {
                    inputs: cins[i],
                    outputs: out_features,
                    weight: to_real(&weights.values(&tensor_name(i, "weight"))?),
                    bias: to_real(&weights.values(&tensor_name(i, "bias"))?),
                }),
                LayerSpec::Softmax => Layer::Softmax,
            };
            layers.push(layer);
        }
        Ok(Network { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    /// Parameters rounded back to f32 tensors.
    pub fn to_weights(&self) -> WeightSet {
        let mut tensors = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    tensors.push(NamedTensor::f32(
                        tensor_name(i, "kernel"),
                        vec![c.kh, c.kw, c.cin, c.cout],
                        to_f32(&c.kernel),
                    ));
                    tensors.push(NamedTensor::f32(tensor_name(i, "bias"), vec![c.cout], to_f32(&c.bias)));
                }
                Layer::BatchNorm(b) => {
                    let n = b.gamma.len();
                    for (field, v) in
                        [("gamma", &b.gamma), ("beta", &b.beta), ("running_mean", &b.mean), ("running_var", &b.var)]
                    {
                        tensors.push(NamedTensor::f32(tensor_name(i, field), vec![n], to_f32(v)));
                    }
                }
                Layer::Dense(d) => {
                    tensors.push(NamedTensor::f32(
                        tensor_name(i, "weight"),
                        vec![d.inputs, d.outputs],
                        to_f32(&d.weight),
                    ));
                    tensors.push(NamedTensor::f32(tensor_name(i, "bias"), vec![d.outputs], to_f32(&d.bias)));
                }
                _ => {}
            }
        }
        WeightSet { tensors }
    }

    pub(crate) fn check_input(&self, input: &FeatureTensor) -> Result<(), NnError> {
        if input.height != self.spec.input_height || input.channels != self.spec.input_channels {
            return Err(NnError::ShapeMismatch(format!(
                "input {}x{}x{} does not match network input {}x*x{}",
                input.height, input.frames, input.channels, self.spec.input_height, self.spec.input_channels
            )));
        }
        if input.data.len() != input.height * input.frames * input.channels {
            return Err(NnError::ShapeMismatch("input data length does not match its shape".into()));
        }
        if !input.is_finite() {
            return Err(NnError::NonFiniteActivation);
        }
        Ok(())
    }

    /// Largest activation and widest channel count for an input of
    /// `width` frames, computed without allocating.
    fn activation_bounds(&self, width: usize) -> Result<(usize, usize), NnError> {
        let mut s = Shape3::new(self.spec.input_height, width, self.spec.input_channels);
        let (mut max_len, mut max_c) = (s.len(), s.c);
        for (i, layer) in self.layers.iter().enumerate() {
            s = next_shape(layer, s).ok_or_else(|| {
                NnError::ShapeMismatch(format!("layer {i}: input {}x{}x{} too small", s.h, s.w, s.c))
            })?;
            max_len = max_len.max(s.len());
            max_c = max_c.max(s.c);
        }
        Ok((max_len, max_c))
    }

    /// Inference-mode forward pass; batch norm uses running statistics.
    /// Returns the class probabilities, borrowed from `scratch`.
    pub fn forward<'s>(&self, input: &FeatureTensor, scratch: &'s mut Scratch<T>) -> Result<&'s [T], NnError> {
        self.check_input(input)?;
        let (max_len, max_c) = self.activation_bounds(input.frames)?;
        scratch.reserve(max_len, max_c);

        let mut shape = Shape3::new(input.height, input.frames, input.channels);
        for (dst, &v) in scratch.ping.iter_mut().zip(&input.data) {
            *dst = cast(v);
        }
        let Scratch { ping, pong, affine } = scratch;
        let (mut cur, mut next) = (ping, pong);

        for layer in &self.layers {
            let out = next_shape(layer, shape).expect("bounds checked above");
            let n_in = shape.len();
            let n_out = out.len();
            match layer {
                Layer::Conv(c) => {
                    conv_forward(c, &cur[..n_in], shape, &mut next[..n_out], out);
                    core::mem::swap(&mut cur, &mut next);
                }
                Layer::BatchNorm(b) => {
                    let (scale, shift) = affine.split_at_mut(shape.c);
                    for ch in 0..shape.c {
                        let inv = (b.var[ch] + b.eps).sqrt().recip();
                        scale[ch] = b.gamma[ch] * inv;
                        shift[ch] = b.beta[ch] - b.mean[ch] * b.gamma[ch] * inv;
                    }
                    for px in cur[..n_in].chunks_exact_mut(shape.c) {
                        for ((v, &s), &t) in px.iter_mut().zip(scale.iter()).zip(shift.iter()) {
                            *v = *v * s + t;
                        }
                    }
                }
                Layer::FoldedNorm => {}
                Layer::Relu => {
                    for v in cur[..n_in].iter_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                }
                Layer::MaxPool { ph, pw } => {
                    maxpool_forward(&cur[..n_in], shape, *ph, *pw, &mut next[..n_out], out);
                    core::mem::swap(&mut cur, &mut next);
                }
                Layer::GlobalAvgPool => {
                    gap_forward(&cur[..n_in], shape, &mut next[..n_out]);
                    core::mem::swap(&mut cur, &mut next);
                }
                Layer::Dense(d) => {
                    dense_forward(d, &cur[..n_in], &mut next[..n_out]);
                    core::mem::swap(&mut cur, &mut next);
                }
                Layer::Softmax => {
                    if cur[..n_in].iter().any(|v| !v.is_finite()) {
                        return Err(NnError::NonFiniteActivation);
                    }
                    softmax_in_place(&mut cur[..n_in]);
                }
            }
            shape = out;
        }
        Ok(&cur[..shape.len()])
    }

    /// Convenience wrapper allocating its own scratch; returns f64
    /// probabilities.
    pub fn predict(&self, input: &FeatureTensor) -> Result<Vec<f64>, NnError> {
        let mut scratch = Scratch::new();
        let p = self.forward(input, &mut scratch)?;
        Ok(p.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
    }
}

pub(crate) fn next_shape<T>(layer: &Layer<T>, s: Shape3) -> Option<Shape3> {
    Some(match layer {
        Layer::Conv(c) => {
            if s.h == 0 || s.w == 0 || s.c != c.cin {
                return None;
            }
            let (h, _) = same_geometry(s.h, c.kh, c.stride);
            let (w, _) = same_geometry(s.w, c.kw, c.stride);
            Shape3::new(h, w, c.cout)
        }
        Layer::BatchNorm(_) | Layer::FoldedNorm | Layer::Relu | Layer::Softmax => s,
        Layer::MaxPool { ph, pw } => {
            let out = Shape3::new(s.h / ph, s.w / pw, s.c);
            if out.is_empty() {
                return None;
            }
            out
        }
        Layer::GlobalAvgPool => Shape3::new(1, 1, s.c),
        Layer::Dense(d) => {
            if s.len() != d.inputs {
                return None;
            }
            Shape3::new(1, 1, d.outputs)
        }
    })
}

pub(crate) fn conv_forward<T: Real>(c: &Conv<T>, x: &[T], si: Shape3, y: &mut [T], so: Shape3) {
    let (_, pad_t) = same_geometry(si.h, c.kh, c.stride);
    let (_, pad_l) = same_geometry(si.w, c.kw, c.stride);
    let (cin, cout) = (c.cin, c.cout);
    for oy in 0..so.h {
        for ox in 0..so.w {
            let out = &mut y[(oy * so.w + ox) * cout..][..cout];
            out.copy_from_slice(&c.bias);
            for ky in 0..c.kh {
                let iy = (oy * c.stride + ky) as isize - pad_t as isize;
                if iy < 0 || iy >= si.h as isize {
                    continue;
                }
                for kx in 0..c.kw {
                    let ix = (ox * c.stride + kx) as isize - pad_l as isize;
                    if ix < 0 || ix >= si.w as isize {
                        continue;
                    }
                    let px = &x[(iy as usize * si.w + ix as usize) * cin..][..cin];
                    let block = &c.kernel[(ky * c.kw + kx) * cin * cout..][..cin * cout];
                    for (&xv, wrow) in px.iter().zip(block.chunks_exact(cout)) {
                        // Post-ReLU inputs are mostly zero.
                        if xv == T::zero() {
                            continue;
                        }
                        for (o, &w) in out.iter_mut().zip(wrow) {
                            *o = *o + xv * w;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn maxpool_forward<T: Real>(x: &[T], si: Shape3, ph: usize, pw: usize, y: &mut [T], so: Shape3) {
    let c = si.c;
    for oy in 0..so.h {
        for ox in 0..so.w {
            let out = &mut y[(oy * so.w + ox) * c..][..c];
            out.fill(T::neg_infinity());
            for dy in 0..ph {
                for dx in 0..pw {
                    let px = &x[((oy * ph + dy) * si.w + ox * pw + dx) * c..][..c];
                    for (o, &v) in out.iter_mut().zip(px) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn gap_forward<T: Real>(x: &[T], si: Shape3, y: &mut [T]) {
    let c = si.c;
    let out = &mut y[..c];
    out.fill(T::zero());
    for px in x.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o = *o + v;
        }
    }
    let inv = cast::<T>(1.0 / (si.h * si.w) as f64);
    for o in out.iter_mut() {
        *o = *o * inv;
    }
}

pub(crate) fn dense_forward<T: Real>(d: &Dense<T>, x: &[T], y: &mut [T]) {
    let out = &mut y[..d.outputs];
    out.copy_from_slice(&d.bias);
    for (&xv, wrow) in x.iter().zip(d.weight.chunks_exact(d.outputs)) {
        for (o, &w) in out.iter_mut().zip(wrow) {
            *o = *o + xv * w;
        }
    }
}

pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}
