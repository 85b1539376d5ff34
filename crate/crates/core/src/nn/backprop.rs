//! Training-mode forward pass (batch statistics in batch norm) and reverse
//! mode gradients of the mean cross-entropy loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::network::{
    cast, conv_forward, dense_forward, gap_forward, maxpool_forward, next_shape, softmax_in_place, Conv, Layer,
    Network, Real,
};
use super::spec::{same_geometry, Shape3};
use super::weights::{tensor_name, NamedTensor, WeightSet};
use super::NnError;
use crate::dsp::FeatureTensor;

/// Per-batch statistics of one batch-norm layer.
#[derive(Debug, Clone)]
pub(crate) struct NormStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    /// Elements per channel across the batch.
    pub count: usize,
}

/// Activations of every layer for every sample of a batch.
#[derive(Debug, Clone)]
pub struct TrainCache<T> {
    /// `acts[l][n]` is the input of layer `l` for sample `n`; the last entry
    /// holds the softmax output.
    pub(crate) acts: Vec<Vec<Vec<T>>>,
    pub(crate) shapes: Vec<Shape3>,
    pub(crate) stats: Vec<Option<NormStats<T>>>,
}

impl<T: Real> TrainCache<T> {
    pub fn probabilities(&self, sample: usize) -> &[T] {
        &self.acts[self.acts.len() - 1][sample]
    }

    pub fn batch_len(&self) -> usize {
        self.acts[0].len()
    }

    /// Mean of `-ln p[target]` over the batch.
    pub fn loss(&self, targets: &[usize]) -> T {
        let tiny = cast::<T>(1e-30);
        let total = targets
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (n, &t)| acc - self.probabilities(n)[t].max(tiny).ln());
        total / cast(targets.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum LayerGrad<T> {
    None,
    Conv { kernel: Vec<T>, bias: Vec<T> },
    Norm { gamma: Vec<T>, beta: Vec<T> },
    Dense { weight: Vec<T>, bias: Vec<T> },
}

/// Gradients laid out like the network's trainable tensors.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub(crate) layers: Vec<LayerGrad<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient tensors in [`Network::params_mut`] order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::None => {}
                LayerGrad::Conv { kernel, bias } => out.extend([kernel.as_slice(), bias.as_slice()]),
                LayerGrad::Norm { gamma, beta } => out.extend([gamma.as_slice(), beta.as_slice()]),
                LayerGrad::Dense { weight, bias } => out.extend([weight.as_slice(), bias.as_slice()]),
            }
        }
        out
    }

    /// Gradient tensors under the same names as the weights they belong to.
    pub fn to_weight_set(&self, net: &Network<T>) -> WeightSet {
        let mut tensors = Vec::new();
        let f = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect::<Vec<f32>>();
        for (i, (g, layer)) in self.layers.iter().zip(&net.layers).enumerate() {
            match (g, layer) {
                (LayerGrad::Conv { kernel, bias }, Layer::Conv(c)) => {
                    tensors.push(NamedTensor::f32(tensor_name(i, "kernel"), vec![c.kh, c.kw, c.cin, c.cout], f(kernel)));
                    tensors.push(NamedTensor::f32(tensor_name(i, "bias"), vec![c.cout], f(bias)));
                }
                (LayerGrad::Norm { gamma, beta }, _) => {
                    tensors.push(NamedTensor::f32(tensor_name(i, "gamma"), vec![gamma.len()], f(gamma)));
                    tensors.push(NamedTensor::f32(tensor_name(i, "beta"), vec![beta.len()], f(beta)));
                }
                (LayerGrad::Dense { weight, bias }, Layer::Dense(d)) => {
                    tensors.push(NamedTensor::f32(tensor_name(i, "weight"), vec![d.inputs, d.outputs], f(weight)));
                    tensors.push(NamedTensor::f32(tensor_name(i, "bias"), vec![d.outputs], f(bias)));
                }
                _ => {}
            }
        }
        WeightSet { tensors }
    }
}

/// One trainable tensor and whether decoupled weight decay applies to it.
pub struct ParamSlot<'a, T> {
    pub values: &'a mut [T],
    pub decay: bool,
}

impl<T: Real> Network<T> {
    /// Trainable tensors in a fixed order: per layer kernel/weight then bias,
    /// or gamma then beta.
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(c) => {
                    out.push(ParamSlot { values: c.kernel.as_mut_slice(), decay: true });
                    out.push(ParamSlot { values: c.bias.as_mut_slice(), decay: false });
                }
                Layer::BatchNorm(b) => {
                    out.push(ParamSlot { values: b.gamma.as_mut_slice(), decay: false });
                    out.push(ParamSlot { values: b.beta.as_mut_slice(), decay: false });
                }
                Layer::Dense(d) => {
                    out.push(ParamSlot { values: d.weight.as_mut_slice(), decay: true });
                    out.push(ParamSlot { values: d.bias.as_mut_slice(), decay: false });
                }
                _ => {}
            }
        }
        out
    }

    /// Forward pass with batch-norm statistics taken over the batch (and all
    /// spatial positions). Running statistics are left untouched.
    pub fn forward_train(&self, batch: &[&FeatureTensor]) -> Result<TrainCache<T>, NnError> {
        let first = batch.first().ok_or_else(|| NnError::ShapeMismatch("empty batch".into()))?;
        for x in batch {
            self.check_input(x)?;
            if x.frames != first.frames {
                return Err(NnError::ShapeMismatch(format!(
                    "batch mixes widths {} and {}",
                    first.frames, x.frames
                )));
            }
        }
        let mut shape = Shape3::new(first.height, first.frames, first.channels);
        let mut acts: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len() + 1);
        let mut shapes = vec![shape];
        let mut stats = Vec::with_capacity(self.layers.len());
        acts.push(batch.iter().map(|x| x.data.iter().map(|&v| cast(v)).collect()).collect());

        for (i, layer) in self.layers.iter().enumerate() {
            let out = next_shape(layer, shape)
                .ok_or_else(|| NnError::ShapeMismatch(format!("layer {i}: input too small")))?;
            let prev = acts.last().expect("input pushed");
            let mut layer_stats = None;
            let next: Vec<Vec<T>> = match layer {
                Layer::Conv(c) => prev
                    .iter()
                    .map(|x| {
                        let mut y = vec![T::zero(); out.len()];
                        conv_forward(c, x, shape, &mut y, out);
                        y
                    })
                    .collect(),
                Layer::BatchNorm(b) => {
                    let s = batch_stats(prev, shape.c, b.eps);
                    let ys = prev
                        .iter()
                        .map(|x| {
                            let mut y = x.clone();
                            for px in y.chunks_exact_mut(shape.c) {
                                for ch in 0..shape.c {
                                    px[ch] = b.gamma[ch] * (px[ch] - s.mean[ch]) * s.inv_std[ch] + b.beta[ch];
                                }
                            }
                            y
                        })
                        .collect();
                    layer_stats = Some(s);
                    ys
                }
                Layer::FoldedNorm => prev.clone(),
                Layer::Relu => prev.iter().map(|x| x.iter().map(|v| if *v < T::zero() { T::zero() } else { *v }).collect()).collect(),
                Layer::MaxPool { ph, pw } => prev
                    .iter()
                    .map(|x| {
                        let mut y = vec![T::zero(); out.len()];
                        maxpool_forward(x, shape, *ph, *pw, &mut y, out);
                        y
                    })
                    .collect(),
                Layer::GlobalAvgPool => prev
                    .iter()
                    .map(|x| {
                        let mut y = vec![T::zero(); out.len()];
                        gap_forward(x, shape, &mut y);
                        y
                    })
                    .collect(),
                Layer::Dense(d) => prev
                    .iter()
                    .map(|x| {
                        let mut y = vec![T::zero(); out.len()];
                        dense_forward(d, x, &mut y);
                        y
                    })
                    .collect(),
                Layer::Softmax => {
                    let mut ys = prev.clone();
                    for y in ys.iter_mut() {
                        if y.iter().any(|v| !v.is_finite()) {
                            return Err(NnError::NonFiniteActivation);
                        }
                        softmax_in_place(y);
                    }
                    ys
                }
            };
            stats.push(layer_stats);
            acts.push(next);
            shapes.push(out);
            shape = out;
        }
        Ok(TrainCache { acts, shapes, stats })
    }

    /// Gradients of the mean cross-entropy over the batch in `cache`.
    pub fn backward(&self, cache: &TrainCache<T>, targets: &[usize]) -> Result<Gradients<T>, NnError> {
        let n_layers = self.layers.len();
        let batch = cache.batch_len();
        if targets.len() != batch {
            return Err(NnError::ShapeMismatch(format!("{} targets for batch of {batch}", targets.len())));
        }
        let classes = self.classes();
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(NnError::ShapeMismatch(format!("target class {bad} out of range for {classes} classes")));
        }
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(NnError::InvalidSpec("backward requires a softmax output".into()));
        }

        let inv_n = cast::<T>(1.0 / batch as f64);
        // softmax + cross-entropy: dL/dlogits = (p - onehot) / N
        let mut grad: Vec<Vec<T>> = (0..batch)
            .map(|n| {
                let mut g: Vec<T> = cache.probabilities(n).iter().map(|&p| p * inv_n).collect();
                g[targets[n]] = g[targets[n]] - inv_n;
                g
            })
            .collect();

        let mut layer_grads: Vec<LayerGrad<T>> = vec![LayerGrad::None; n_layers];
        for l in (0..n_layers - 1).rev() {
            let si = cache.shapes[l];
            let so = cache.shapes[l + 1];
            let xs = &cache.acts[l];
            let ys = &cache.acts[l + 1];
            let need_dx = l > 0;
            let mut dxs: Vec<Vec<T>> = Vec::new();
            match &self.layers[l] {
                Layer::Conv(c) => {
                    let mut dk = vec![T::zero(); c.kernel.len()];
                    let mut db = vec![T::zero(); c.cout];
                    for (x, dy) in xs.iter().zip(&grad) {
                        let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
                        conv_backward(c, x, si, dy, so, &mut dk, &mut db, need_dx.then_some(dx.as_mut_slice()));
                        dxs.push(dx);
                    }
                    layer_grads[l] = LayerGrad::Conv { kernel: dk, bias: db };
                }
                Layer::BatchNorm(b) => {
                    let s = cache.stats[l].as_ref().expect("batch-norm stats recorded in forward_train");
                    let c = si.c;
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for (x, dy) in xs.iter().zip(&grad) {
                        for (px, gpx) in x.chunks_exact(c).zip(dy.chunks_exact(c)) {
                            for ch in 0..c {
                                let xhat = (px[ch] - s.mean[ch]) * s.inv_std[ch];
                                dgamma[ch] = dgamma[ch] + gpx[ch] * xhat;
                                dbeta[ch] = dbeta[ch] + gpx[ch];
                            }
                        }
                    }
                    if need_dx {
                        let m = cast::<T>(s.count as f64);
                        for (x, dy) in xs.iter().zip(&grad) {
                            let mut dx = vec![T::zero(); x.len()];
                            for ((px, gpx), dpx) in x.chunks_exact(c).zip(dy.chunks_exact(c)).zip(dx.chunks_exact_mut(c))
                            {
                                for ch in 0..c {
                                    let xhat = (px[ch] - s.mean[ch]) * s.inv_std[ch];
                                    dpx[ch] = b.gamma[ch] * s.inv_std[ch] / m
                                        * (m * gpx[ch] - dbeta[ch] - xhat * dgamma[ch]);
                                }
                            }
                            dxs.push(dx);
                        }
                    }
                    layer_grads[l] = LayerGrad::Norm { gamma: dgamma, beta: dbeta };
                }
                Layer::FoldedNorm => dxs = grad.clone(),
                Layer::Relu => {
                    dxs = ys
                        .iter()
                        .zip(&grad)
                        .map(|(y, dy)| y.iter().zip(dy).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect())
                        .collect();
                }
                Layer::MaxPool { ph, pw } => {
                    for (x, dy) in xs.iter().zip(&grad) {
                        let mut dx = vec![T::zero(); x.len()];
                        maxpool_backward(x, si, *ph, *pw, dy, so, &mut dx);
                        dxs.push(dx);
                    }
                }
                Layer::GlobalAvgPool => {
                    let inv = cast::<T>(1.0 / (si.h * si.w) as f64);
                    for dy in &grad {
                        let mut dx = vec![T::zero(); si.len()];
                        for px in dx.chunks_exact_mut(si.c) {
                            for (v, &g) in px.iter_mut().zip(dy) {
                                *v = g * inv;
                            }
                        }
                        dxs.push(dx);
                    }
                }
                Layer::Dense(d) => {
                    let mut dw = vec![T::zero(); d.weight.len()];
                    let mut db = vec![T::zero(); d.outputs];
                    for (x, dy) in xs.iter().zip(&grad) {
                        for (b, &g) in db.iter_mut().zip(dy) {
                            *b = *b + g;
                        }
                        for (&xv, row) in x.iter().zip(dw.chunks_exact_mut(d.outputs)) {
                            for (w, &g) in row.iter_mut().zip(dy) {
                                *w = *w + xv * g;
                            }
                        }
                        if need_dx {
                            dxs.push(
                                d.weight
                                    .chunks_exact(d.outputs)
                                    .map(|row| row.iter().zip(dy).fold(T::zero(), |a, (&w, &g)| a + w * g))
                                    .collect(),
                            );
                        }
                    }
                    layer_grads[l] = LayerGrad::Dense { weight: dw, bias: db };
                }
                Layer::Softmax => return Err(NnError::InvalidSpec("softmax is only allowed last".into())),
            }
            if !need_dx {
                break;
            }
            grad = dxs;
        }
        Ok(Gradients { layers: layer_grads })
    }

    /// Exponential moving update of batch-norm running statistics; the
    /// variance uses the unbiased batch estimate.
    pub fn update_running_stats(&mut self, cache: &TrainCache<T>, momentum: f64) {
        let m = cast::<T>(momentum);
        let keep = T::one() - m;
        for (layer, stats) in self.layers.iter_mut().zip(&cache.stats) {
            if let (Layer::BatchNorm(b), Some(s)) = (layer, stats) {
                let unbias = if s.count > 1 { cast::<T>(s.count as f64 / (s.count - 1) as f64) } else { T::one() };
                for ch in 0..b.mean.len() {
                    b.mean[ch] = keep * b.mean[ch] + m * s.mean[ch];
                    b.var[ch] = keep * b.var[ch] + m * s.var[ch] * unbias;
                }
            }
        }
    }

    /// Loss and gradients for a single labelled input, batch norm in
    /// training mode.
    pub fn loss_and_gradients(&self, input: &FeatureTensor, target: usize) -> Result<(T, Gradients<T>), NnError> {
        let cache = self.forward_train(&[input])?;
        let grads = self.backward(&cache, &[target])?;
        Ok((cache.loss(&[target]), grads))
    }
}

fn batch_stats<T: Real>(xs: &[Vec<T>], c: usize, eps: T) -> NormStats<T> {
    let mut mean = vec![T::zero(); c];
    let mut count = 0usize;
    for x in xs {
        for px in x.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(px) {
                *m = *m + v;
            }
            count += 1;
        }
    }
    let inv = cast::<T>(1.0 / count.max(1) as f64);
    for m in mean.iter_mut() {
        *m = *m * inv;
    }
    let mut var = vec![T::zero(); c];
    for x in xs {
        for px in x.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                let d = v - m;
                *s = *s + d * d;
            }
        }
    }
    for s in var.iter_mut() {
        *s = *s * inv;
    }
    let inv_std = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    NormStats { mean, inv_std, var, count }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    c: &Conv<T>,
    x: &[T],
    si: Shape3,
    dy: &[T],
    so: Shape3,
    dk: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let (_, pad_t) = same_geometry(si.h, c.kh, c.stride);
    let (_, pad_l) = same_geometry(si.w, c.kw, c.stride);
    let (cin, cout) = (c.cin, c.cout);
    // Per-tap kernels transposed to [cout][cin] so the input gradient is an
    // axpy over contiguous rows rather than a reduction.
    let taps = c.kh * c.kw;
    let mut kt = vec![T::zero(); c.kernel.len()];
    if dx.is_some() {
        for t in 0..taps {
            for i in 0..cin {
                for o in 0..cout {
                    kt[t * cin * cout + o * cin + i] = c.kernel[t * cin * cout + i * cout + o];
                }
            }
        }
    }
    for oy in 0..so.h {
        for ox in 0..so.w {
            let g = &dy[(oy * so.w + ox) * cout..][..cout];
            for (b, &v) in db.iter_mut().zip(g) {
                *b = *b + v;
            }
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
                    let base = (iy as usize * si.w + ix as usize) * cin;
                    let off = (ky * c.kw + kx) * cin * cout;
                    let px = &x[base..base + cin];
                    let dblock = &mut dk[off..off + cin * cout];
                    for (&xv, drow) in px.iter().zip(dblock.chunks_exact_mut(cout)) {
                        if xv == T::zero() {
                            continue;
                        }
                        for (d, &v) in drow.iter_mut().zip(g) {
                            *d = *d + xv * v;
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let block = &kt[off..off + cin * cout];
                        let drow = &mut dx[base..base + cin];
                        for (&v, wrow) in g.iter().zip(block.chunks_exact(cin)) {
                            if v == T::zero() {
                                continue;
                            }
                            for (d, &w) in drow.iter_mut().zip(wrow) {
                                *d = *d + v * w;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn maxpool_backward<T: Real>(x: &[T], si: Shape3, ph: usize, pw: usize, dy: &[T], so: Shape3, dx: &mut [T]) {
    let c = si.c;
    for oy in 0..so.h {
        for ox in 0..so.w {
            for ch in 0..c {
                // first maximum in row-major window order, matching forward's strict '>'
                let mut best = T::neg_infinity();
                let mut at = 0;
                for ddy in 0..ph {
                    for ddx in 0..pw {
                        let idx = ((oy * ph + ddy) * si.w + ox * pw + ddx) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            at = idx;
                        }
                    }
                }
                dx[at] = dx[at] + dy[(oy * so.w + ox) * c + ch];
            }
        }
    }
}
