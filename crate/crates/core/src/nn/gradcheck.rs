//! Central-difference verification of analytic gradients.

use alloc::vec::Vec;

use super::backprop::TrainCache;
use super::network::Network;
use super::spec::{LayerSpec, NetworkSpec};
use super::weights::WeightSet;
use super::NnError;
use crate::dsp::FeatureTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub worst_relative_error: f64,
    /// Components compared.
    pub checked: usize,
    /// Components whose `±eps` probes land on different sides of a ReLU or
    /// max-pool switch, where the loss is not differentiable.
    pub skipped: usize,
}

/// Compares backprop against `(L(w+eps) - L(w-eps)) / 2eps` for every
/// trainable component, in f64 with batch norm in training mode.
pub fn gradient_check(
    spec: &NetworkSpec,
    weights: &WeightSet,
    input: &FeatureTensor,
    target: usize,
    eps: f64,
) -> Result<GradientReport, NnError> {
    let mut net = Network::<f64>::from_weights(spec, weights)?;
    let (_, grads) = net.loss_and_gradients(input, target)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut report = GradientReport { worst_relative_error: 0.0, checked: 0, skipped: 0 };
    for (k, g) in analytic.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let orig = net.params_mut()[k].values[j];
            net.params_mut()[k].values[j] = orig + eps;
            let up = net.forward_train(&[input])?;
            net.params_mut()[k].values[j] = orig - eps;
            let down = net.forward_train(&[input])?;
            net.params_mut()[k].values[j] = orig;
            if branch_pattern(spec, &up) != branch_pattern(spec, &down) {
                report.skipped += 1;
                continue;
            }
            let numeric = (up.loss(&[target]) - down.loss(&[target])) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            report.worst_relative_error = report.worst_relative_error.max((a - numeric).abs() / denom);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// ReLU on/off states and max-pool winners; the loss is smooth between two
/// points only when these agree.
fn branch_pattern(spec: &NetworkSpec, cache: &TrainCache<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        let a = &cache.acts[l][0];
        match *layer {
            LayerSpec::Relu => out.extend(a.iter().map(|&v| (v > 0.0) as usize)),
            LayerSpec::MaxPool2d { pool_h, pool_w } => {
                let s = cache.shapes[l];
                for oy in 0..s.h / pool_h {
                    for ox in 0..s.w / pool_w {
                        for c in 0..s.c {
                            let at = |dy: usize, dx: usize| a[((oy * pool_h + dy) * s.w + ox * pool_w + dx) * s.c + c];
                            let mut best = (0, 0);
                            for dy in 0..pool_h {
                                for dx in 0..pool_w {
                                    if at(dy, dx) > at(best.0, best.1) {
                                        best = (dy, dx);
                                    }
                                }
                            }
                            out.push(best.0 * pool_w + best.1);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}
