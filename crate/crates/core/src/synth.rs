//! Seeded tone-plus-noise signals for training and benchmarking.

use alloc::vec::Vec;

use crate::rng::{mix_seed, SeededRng};

/// Band centers in Hz, geometrically spaced from 300 Hz to 3.2 kHz.
pub fn band_centers(classes: usize) -> Vec<f64> {
    let (lo, hi) = (300.0f64, 3200.0f64);
    if classes == 1 {
        return alloc::vec![lo];
    }
    (0..classes).map(|k| lo * libm::pow(hi / lo, k as f64 / (classes - 1) as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneSpec {
    pub center_hz: f64,
    /// Relative spread of the partials around the center.
    pub spread: f64,
    pub amplitude: f64,
    pub noise: f64,
}

/// Three random partials inside `center·(1 ± spread)` plus white noise.
pub fn tone_clip(spec: &ToneSpec, samples: usize, rate: u32, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::new(seed);
    let partials: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = spec.center_hz * (1.0 + rng.uniform_range(-spec.spread, spec.spread));
            let phase = rng.uniform_range(0.0, core::f64::consts::TAU);
            let weight = rng.uniform_range(0.5, 1.0);
            (f, phase, weight)
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.2).sum();
    let dt = 1.0 / rate as f64;
    (0..samples)
        .map(|n| {
            let t = n as f64 * dt;
            let tone: f64 = partials
                .iter()
                .map(|&(f, ph, w)| w * libm::sin(core::f64::consts::TAU * f * t + ph))
                .sum::<f64>()
                / norm;
            let v = spec.amplitude * tone + spec.noise * rng.uniform_range(-1.0, 1.0);
            v.clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// One labeled clip of class `class` out of `classes`, with amplitude and
/// noise drawn from fixed ranges.
pub fn class_clip(class: usize, classes: usize, samples: usize, rate: u32, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::new(mix_seed(seed, 0xC1A5));
    let spec = ToneSpec {
        center_hz: band_centers(classes)[class],
        spread: 0.08,
        amplitude: rng.uniform_range(0.2, 0.7),
        noise: rng.uniform_range(0.01, 0.05),
    };
    tone_clip(&spec, samples, rate, seed)
}
