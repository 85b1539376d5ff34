use super::*;
use crate::rng::SeededRng;
use alloc::vec;

type Grid = Vec<Vec<Vec<f64>>>;

fn tensor(ws: &WeightSet, name: &str) -> Vec<f64> {
    ws.get(name).unwrap().data.to_f32().iter().map(|&v| v as f64).collect()
}

/// Straightforward nested-loop forward pass over `[h][w][c]` grids, written
/// independently of the engine's flat buffers.
fn reference_forward(spec: &NetworkSpec, ws: &WeightSet, input: &FeatureTensor) -> Vec<f64> {
    let mut x: Grid = (0..input.height)
        .map(|h| (0..input.frames).map(|t| (0..input.channels).map(|c| input.get(h, t, c)).collect()).collect())
        .collect();
    let mut flat: Vec<f64> = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d { out_channels, kernel_h, kernel_w, stride, .. } => {
                let (h, w, cin) = (x.len(), x[0].len(), x[0][0].len());
                let k = tensor(ws, &alloc::format!("layer{i}.kernel"));
                let b = tensor(ws, &alloc::format!("layer{i}.bias"));
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pt = (((oh - 1) * stride + kernel_h).saturating_sub(h)) / 2;
                let pl = (((ow - 1) * stride + kernel_w).saturating_sub(w)) / 2;
                let mut y = vec![vec![vec![0.0; out_channels]; ow]; oh];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for co in 0..out_channels {
                            let mut acc = b[co];
                            for ky in 0..kernel_h {
                                for kx in 0..kernel_w {
                                    let iy = (oy * stride + ky) as i64 - pt as i64;
                                    let ix = (ox * stride + kx) as i64 - pl as i64;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let widx = ((ky * kernel_w + kx) * cin + ci) * out_channels + co;
                                        acc += x[iy as usize][ix as usize][ci] * k[widx];
                                    }
                                }
                            }
                            y[oy][ox][co] = acc;
                        }
                    }
                }
                x = y;
            }
            LayerSpec::BatchNorm { epsilon, .. } => {
                let g = tensor(ws, &alloc::format!("layer{i}.gamma"));
                let b = tensor(ws, &alloc::format!("layer{i}.beta"));
                let m = tensor(ws, &alloc::format!("layer{i}.running_mean"));
                let v = tensor(ws, &alloc::format!("layer{i}.running_var"));
                for row in x.iter_mut() {
                    for px in row.iter_mut() {
                        for c in 0..px.len() {
                            px[c] = g[c] * (px[c] - m[c]) / (v[c] + epsilon).sqrt() + b[c];
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                for row in x.iter_mut() {
                    for px in row.iter_mut() {
                        for v in px.iter_mut() {
                            *v = v.max(0.0);
                        }
                    }
                }
            }
            LayerSpec::MaxPool2d { pool_h, pool_w } => {
                let (oh, ow, c) = (x.len() / pool_h, x[0].len() / pool_w, x[0][0].len());
                x = (0..oh)
                    .map(|oy| {
                        (0..ow)
                            .map(|ox| {
                                (0..c)
                                    .map(|ch| {
                                        let mut best = f64::NEG_INFINITY;
                                        for dy in 0..pool_h {
                                            for dx in 0..pool_w {
                                                best = best.max(x[oy * pool_h + dy][ox * pool_w + dx][ch]);
                                            }
                                        }
                                        best
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            LayerSpec::GlobalAvgPool => {
                let c = x[0][0].len();
                let n = (x.len() * x[0].len()) as f64;
                flat = (0..c).map(|ch| x.iter().flatten().map(|px| px[ch]).sum::<f64>() / n).collect();
            }
            LayerSpec::Dense { out_features } => {
                let wt = tensor(ws, &alloc::format!("layer{i}.weight"));
                let b = tensor(ws, &alloc::format!("layer{i}.bias"));
                flat = (0..out_features)
                    .map(|o| b[o] + (0..flat.len()).map(|j| flat[j] * wt[j * out_features + o]).sum::<f64>())
                    .collect();
            }
            LayerSpec::Softmax => {
                let m = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = flat.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                flat = e.iter().map(|v| v / s).collect();
            }
        }
    }
    flat
}

fn random_input(rng: &mut SeededRng, h: usize, w: usize, c: usize) -> FeatureTensor {
    let mut x = FeatureTensor::zeros(h, w, c);
    for v in x.data.iter_mut() {
        *v = rng.normal();
    }
    x
}

fn randomize(ws: &mut WeightSet, rng: &mut SeededRng) {
    for t in ws.tensors.iter_mut() {
        if let TensorData::F32(v) = &mut t.data {
            for x in v.iter_mut() {
                *x = if t.name.ends_with("running_var") {
                    rng.uniform_range(0.3, 2.0)
                } else if t.name.ends_with("gamma") {
                    rng.uniform_range(0.5, 1.5)
                } else {
                    rng.uniform_range(-0.5, 0.5)
                } as f32;
            }
        }
    }
}

#[test]
fn zero_weights_give_uniform_distribution() {
    let spec = NetworkSpec::emotion_cnn(4);
    let ws = WeightSet::zeros(&spec);
    let mut rng = SeededRng::new(1);
    let p = forward(&spec, &ws, &random_input(&mut rng, 64, 40, 1)).unwrap();
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-7));
}

#[test]
fn dominant_dense_bias_wins() {
    let spec = NetworkSpec::emotion_cnn(4);
    let mut ws = WeightSet::zeros(&spec);
    ws.get_mut("layer12.bias").unwrap().data = TensorData::F32(vec![10.0, 0.0, 0.0, 0.0]);
    let mut rng = SeededRng::new(2);
    let p = forward(&spec, &ws, &random_input(&mut rng, 64, 20, 1)).unwrap();
    assert_eq!(argmax(&p), 0);
    assert!(p[0] > 0.999);
}

#[test]
fn forward_matches_reference_oracle() {
    for seed in 0..100u64 {
        let mut rng = SeededRng::new(seed);
        let widths = (1 + rng.below(5), 1 + rng.below(6));
        let classes = 2 + rng.below(4);
        let h = 4 + rng.below(6);
        let w = 4 + rng.below(9);
        let spec = NetworkSpec::tiny(h, widths, classes);
        let mut ws = WeightSet::init(&spec, seed);
        randomize(&mut ws, &mut rng);
        let x = random_input(&mut rng, h, w, 1);
        let got = forward(&spec, &ws, &x).unwrap();
        let want = reference_forward(&spec, &ws, &x);
        let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5, "seed {seed}: {diff}");
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn default_network_matches_oracle_on_short_input() {
    let spec = NetworkSpec::emotion_cnn(4);
    let mut rng = SeededRng::new(77);
    let mut ws = WeightSet::init(&spec, 4);
    randomize(&mut ws, &mut rng);
    let x = random_input(&mut rng, 64, 9, 1);
    let got = Network::<f64>::from_weights(&spec, &ws).unwrap().predict(&x).unwrap();
    let want = reference_forward(&spec, &ws, &x);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn softmax_is_shift_invariant() {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let mut rng = SeededRng::new(3);
    let mut ws = WeightSet::init(&spec, 3);
    randomize(&mut ws, &mut rng);
    let x = random_input(&mut rng, 8, 8, 1);
    let a = forward(&spec, &ws, &x).unwrap();
    if let TensorData::F32(b) = &mut ws.get_mut("layer8.bias").unwrap().data {
        for v in b.iter_mut() {
            *v += 3.0;
        }
    }
    let b = forward(&spec, &ws, &x).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-6);
    }
}

#[test]
fn input_shape_is_checked() {
    let spec = NetworkSpec::emotion_cnn(4);
    let ws = WeightSet::zeros(&spec);
    let err = forward(&spec, &ws, &FeatureTensor::zeros(32, 10, 1)).unwrap_err();
    assert!(matches!(err, NnError::ShapeMismatch(_)));
    let err = forward(&spec, &ws, &FeatureTensor::zeros(64, 3, 1)).unwrap_err();
    assert!(matches!(err, NnError::ShapeMismatch(_)));
}

#[test]
fn non_finite_input_is_reported() {
    let spec = NetworkSpec::tiny(8, (2, 2), 2);
    let ws = WeightSet::init(&spec, 1);
    let mut x = FeatureTensor::zeros(8, 8, 1);
    x.data[5] = f64::NAN;
    assert_eq!(forward(&spec, &ws, &x).unwrap_err(), NnError::NonFiniteActivation);
}

#[test]
fn scratch_does_not_grow_after_warmup() {
    let spec = NetworkSpec::emotion_cnn(4);
    let net = Network::<f32>::from_weights(&spec, &WeightSet::init(&spec, 1)).unwrap();
    let mut rng = SeededRng::new(9);
    let x = random_input(&mut rng, 64, 50, 1);
    let mut scratch = Scratch::new();
    net.forward(&x, &mut scratch).unwrap();
    let cap = scratch.capacity();
    for _ in 0..3 {
        net.forward(&x, &mut scratch).unwrap();
        assert_eq!(scratch.capacity(), cap);
    }
    net.forward(&random_input(&mut rng, 64, 20, 1), &mut scratch).unwrap();
    assert_eq!(scratch.capacity(), cap);
}

#[test]
fn zero_network_bias_gradient_is_p_minus_onehot() {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let ws = WeightSet::zeros(&spec);
    let mut rng = SeededRng::new(4);
    let x = random_input(&mut rng, 8, 8, 1);
    for target in 0..4 {
        let (g, loss) = backward(&spec, &ws, &x, target).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let db = g.get("layer8.bias").unwrap().data.to_f32();
        for (k, &v) in db.iter().enumerate() {
            let expected = 0.25 - if k == target { 1.0 } else { 0.0 };
            assert!((v as f64 - expected).abs() < 1e-7);
        }
    }
}

#[test]
fn backward_rejects_bad_target() {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let ws = WeightSet::zeros(&spec);
    let x = FeatureTensor::zeros(8, 8, 1);
    assert!(matches!(backward(&spec, &ws, &x, 4), Err(NnError::ShapeMismatch(_))));
}

/// Scales He-initialized kernels so batch norm's scale invariance does not
/// leave near-zero gradients dominated by finite-difference truncation.
const KERNEL_GAIN: f32 = 10.0;

fn gradient_check_seed(seed: u64) -> GradientReport {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let mut rng = SeededRng::new(seed);
    let mut ws = WeightSet::init(&spec, seed);
    for t in ws.tensors.iter_mut().filter(|t| t.name.ends_with("kernel")) {
        if let TensorData::F32(v) = &mut t.data {
            v.iter_mut().for_each(|w| *w *= KERNEL_GAIN);
        }
    }
    let x = random_input(&mut rng, 8, 8, 1);
    let target = rng.below(4);
    gradient_check(&spec, &ws, &x, target, 1e-3).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..10 {
        let r = gradient_check_seed(seed);
        assert!(r.worst_relative_error < 1e-4, "seed {seed}: {r:?}");
        assert!(r.skipped * 20 < r.checked + r.skipped, "seed {seed}: too many kinks {r:?}");
    }
}

fn tone_like(rng: &mut SeededRng, class: usize) -> FeatureTensor {
    let mut x = FeatureTensor::zeros(8, 8, 1);
    for h in 0..8 {
        for t in 0..8 {
            let band = if h / 2 == class { 3.0 } else { 0.0 };
            x.set(h, t, 0, band + 0.3 * rng.normal());
        }
    }
    x
}

#[test]
fn memorizes_single_sample() {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let mut rng = SeededRng::new(5);
    let data = vec![(random_input(&mut rng, 8, 8, 1), 2usize)];
    let opts = TrainOptions { lr: 1e-2, epochs: 30, batch_size: 1, seed: 1, ..TrainOptions::default() };
    let out = train(&spec, &data, &opts, |_| {}).unwrap();
    assert_eq!(out.best_accuracy, 1.0);
    let net = Network::<f32>::from_weights(&spec, &out.weights).unwrap();
    assert_eq!(accuracy(&net, &data).unwrap(), 1.0);
}

#[test]
fn indistinguishable_inputs_cap_accuracy() {
    let spec = NetworkSpec::tiny(8, (4, 8), 2);
    let mut rng = SeededRng::new(6);
    let x = random_input(&mut rng, 8, 8, 1);
    let data = vec![(x.clone(), 0usize), (x, 1usize)];
    let opts = TrainOptions { lr: 1e-2, epochs: 15, batch_size: 2, seed: 1, ..TrainOptions::default() };
    let out = train(&spec, &data, &opts, |_| {}).unwrap();
    assert!(out.best_accuracy <= 0.5);
}

#[test]
fn training_is_deterministic_and_learns() {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let mut rng = SeededRng::new(8);
    let data: Vec<(FeatureTensor, usize)> = (0..48).map(|i| (tone_like(&mut rng, i % 4), i % 4)).collect();
    for optimizer in [OptimizerKind::AdamW, OptimizerKind::Sgd] {
        let lr = if optimizer == OptimizerKind::AdamW { 1e-2 } else { 5e-2 };
        let opts = TrainOptions { optimizer, lr, epochs: 25, batch_size: 8, seed: 3, ..TrainOptions::default() };
        let a = train(&spec, &data, &opts, |_| {}).unwrap();
        let b = train(&spec, &data, &opts, |_| {}).unwrap();
        assert_eq!(format::encode(&a.weights), format::encode(&b.weights));
        assert!(a.best_accuracy >= 0.9, "{optimizer:?}: {}", a.best_accuracy);
        assert!(a.trace.first().unwrap().loss > a.trace.last().unwrap().loss);
    }
}

#[test]
fn early_stopping_respects_patience() {
    let spec = NetworkSpec::tiny(8, (2, 2), 2);
    let x = FeatureTensor::zeros(8, 8, 1);
    let data = vec![(x.clone(), 0usize), (x, 1usize)];
    let opts = TrainOptions { lr: 1e-3, epochs: 100, batch_size: 2, patience: 3, ..TrainOptions::default() };
    let out = train(&spec, &data, &opts, |_| {}).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.trace.len(), 4);
}

#[test]
fn empty_dataset_is_rejected() {
    let spec = NetworkSpec::tiny(8, (2, 2), 2);
    let err = train(&spec, &[], &TrainOptions::default(), |_| {}).unwrap_err();
    assert_eq!(err, NnError::EmptyDataset);
}

#[test]
fn divergence_is_reported() {
    let spec = NetworkSpec::tiny(8, (2, 2), 2);
    let mut x = FeatureTensor::zeros(8, 8, 1);
    x.data.fill(f64::MAX);
    let err = train(&spec, &[(x, 0)], &TrainOptions::default(), |_| {}).unwrap_err();
    assert!(matches!(err, NnError::DivergedLoss { .. } | NnError::NonFiniteActivation));
}

#[test]
fn load_checks_spec() {
    let spec = NetworkSpec::tiny(8, (4, 8), 4);
    let bytes = save_weights(&WeightSet::init(&spec, 1));
    assert!(load_weights(&bytes, &spec).is_ok());
    let other = NetworkSpec::tiny(8, (4, 8), 3);
    assert!(matches!(load_weights(&bytes, &other), Err(NnError::ShapeMismatch(_))));
}

