use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::backprop::ParamSlot;
use super::network::{cast, Network, Real, Scratch};
use super::spec::NetworkSpec;
use super::weights::WeightSet;
use super::NnError;
use crate::dsp::FeatureTensor;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a new best accuracy before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub bn_momentum: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            optimizer: OptimizerKind::AdamW,
            lr: 1e-4,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            patience: 10,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training-mode cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Inference-mode accuracy on the training set after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest accuracy.
    pub weights: WeightSet,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub stopped_early: bool,
}

struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    decay: T,
    b1: T,
    b2: T,
    eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    fn new(opts: &TrainOptions) -> Self {
        Optimizer {
            kind: opts.optimizer,
            lr: cast(opts.lr),
            decay: cast(opts.weight_decay),
            b1: cast(opts.betas.0),
            b2: cast(opts.betas.1),
            eps: cast(opts.adam_eps),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn apply(&mut self, params: Vec<ParamSlot<'_, T>>, grads: &[&[T]]) {
        self.step += 1;
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        let one = T::one();
        let bc1 = one - self.b1.powi(self.step);
        let bc2 = one - self.b2.powi(self.step);
        for (k, (slot, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gv) in slot.values.iter_mut().zip(g.iter()) {
                        *p = *p - self.lr * gv;
                    }
                }
                OptimizerKind::AdamW => {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (((p, &gv), mv), vv) in slot.values.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        if slot.decay {
                            *p = *p - self.lr * self.decay * *p;
                        }
                        *mv = self.b1 * *mv + (one - self.b1) * gv;
                        *vv = self.b2 * *vv + (one - self.b2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *p = *p - self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode accuracy of `net` over `data`.
pub fn accuracy(net: &Network<f32>, data: &[(FeatureTensor, usize)]) -> Result<f64, NnError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut scratch = Scratch::new();
    let mut hits = 0usize;
    for (x, y) in data {
        if argmax(net.forward(x, &mut scratch)?) == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mini-batch training of `spec` on `dataset` with early stopping.
///
/// Deterministic for a given seed: initialization and per-epoch shuffling
/// both derive from it, and all arithmetic is single-threaded.
pub fn train(
    spec: &NetworkSpec,
    dataset: &[(FeatureTensor, usize)],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let init = WeightSet::init(spec, opts.seed);
    let mut net: Network<f32> = Network::from_weights(spec, &init)?;
    let classes = spec.classes();
    if let Some((_, bad)) = dataset.iter().find(|(_, y)| *y >= classes) {
        return Err(NnError::ShapeMismatch(alloc::format!("label {bad} out of range for {classes} classes")));
    }

    let mut rng = SeededRng::new(crate::rng::mix_seed(opts.seed, 0x5EED));
    let mut opt = Optimizer::<f32>::new(opts);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch_size = opts.batch_size.max(1);

    let mut trace = Vec::new();
    let mut best = (net.to_weights(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=opts.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let inputs: Vec<&FeatureTensor> = chunk.iter().map(|&i| &dataset[i].0).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| dataset[i].1).collect();
            let cache = net.forward_train(&inputs).map_err(|e| match e {
                NnError::NonFiniteActivation => NnError::DivergedLoss { epoch },
                other => other,
            })?;
            let loss = cache.loss(&targets) as f64;
            if !loss.is_finite() {
                return Err(NnError::DivergedLoss { epoch });
            }
            let grads = net.backward(&cache, &targets)?;
            let slices = grads.slices();
            opt.apply(net.params_mut(), &slices);
            if net.params_mut().iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
                return Err(NnError::DivergedLoss { epoch });
            }
            net.update_running_stats(&cache, opts.bn_momentum);
            loss_sum += loss;
            batches += 1;
        }
        let acc = accuracy(&net, dataset).map_err(|e| match e {
            NnError::NonFiniteActivation => NnError::DivergedLoss { epoch },
            other => other,
        })?;
        let stats = EpochStats { epoch, loss: loss_sum / batches as f64, accuracy: acc };
        on_epoch(&stats);
        trace.push(stats);
        if acc > best.2 {
            best = (net.to_weights(), epoch, acc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome { weights: best.0, trace, best_epoch: best.1, best_accuracy: best.2.max(0.0), stopped_early })
}
