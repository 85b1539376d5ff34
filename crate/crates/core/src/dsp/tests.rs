use super::*;
use crate::rng::SeededRng;
use proptest::prelude::*;

const RATE: u32 = 16_000;

fn segment(samples: Vec<f32>) -> AudioSegment {
    AudioSegment::new(samples, RATE, 0.0)
}

fn sine(freq: f64, seconds: f64, amp: f64) -> Vec<f32> {
    let n = (seconds * RATE as f64) as usize;
    (0..n)
        .map(|i| (amp * (core::f64::consts::TAU * freq * i as f64 / RATE as f64).sin()) as f32)
        .collect()
}

/// O(N^2) power spectrum of one Hann-windowed, zero-padded frame.
fn naive_power(frame: &[f32], fft_size: usize) -> Vec<f64> {
    let win = frame.len();
    let w: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (core::f64::consts::TAU * n as f64 / win as f64).cos())
        .collect();
    (0..=fft_size / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..win {
                let ang = -core::f64::consts::TAU * (k * n) as f64 / fft_size as f64;
                let x = frame[n] as f64 * w[n];
                re += x * ang.cos();
                im += x * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[test]
fn silence_gives_zero_power() {
    let p = stft_power(&segment(vec![0.0; 4000]), &StftConfig::default()).unwrap();
    assert_eq!(p.rows, 257);
    assert!(p.data.iter().all(|&v| v == 0.0));
}

#[test]
fn too_short_segment_is_rejected() {
    let err = stft_power(&segment(vec![0.0; 399]), &StftConfig::default()).unwrap_err();
    assert_eq!(err, DspError::SegmentTooShort { samples: 399, window: 400 });
    assert!(zero_crossing_rate(&segment(vec![0.0; 10]), &StftConfig::default()).is_err());
}

#[test]
fn bin_centered_sine_peaks_at_its_bin() {
    let k = 20;
    let freq = k as f64 * RATE as f64 / 512.0;
    let x = sine(freq, 0.2, 0.5);
    let ex = FeatureExtractor::canonical();
    let p = ex.stft_power(&x).unwrap();
    for t in 0..p.cols {
        let col: Vec<f64> = p.column(t).collect();
        let argmax = col.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, k);
        let start = t * 160;
        let oracle = naive_power(&x[start..start + 400], 512);
        for (a, b) in col.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn ones_frame_dc_power_is_squared_window_sum() {
    let p = stft_power(&segment(vec![1.0; 400]), &StftConfig::default()).unwrap();
    assert_eq!(p.cols, 1);
    let w_sum: f64 = (0..400).map(|n| 0.5 - 0.5 * (core::f64::consts::TAU * n as f64 / 400.0).cos()).sum();
    assert!((p.get(0, 0) - w_sum * w_sum).abs() < 1e-6 * w_sum * w_sum);
}

#[test]
fn random_frames_match_naive_dft() {
    let mut rng = SeededRng::new(42);
    let ex = FeatureExtractor::canonical();
    for _ in 0..20 {
        let frame: Vec<f32> = (0..400).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
        let p = ex.stft_power(&frame).unwrap();
        let oracle = naive_power(&frame, 512);
        let max_diff = p.column(0).zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-6, "{max_diff}");
    }
}

#[test]
fn silence_log_mel_hits_floor() {
    let mel = mel_spectrogram(&segment(vec![0.0; 48_000]), &StftConfig::default(), &MelConfig::default()).unwrap();
    let floor = (1e-10f64).ln();
    assert!((floor + 23.0259).abs() < 1e-4);
    assert!(mel.data.iter().all(|&v| v == floor));
}

#[test]
fn three_seconds_gives_298_frames() {
    let mut frames = 0;
    let mut start = 0;
    while start + 400 <= 48_000 {
        frames += 1;
        start += 160;
    }
    assert_eq!(frames, 298);
    let mel = mel_spectrogram(&segment(vec![0.0; 48_000]), &StftConfig::default(), &MelConfig::default()).unwrap();
    assert_eq!(mel.shape(), [64, 298, 1]);
    assert_eq!(mel.frame_times.len(), 298);
    assert!((mel.frame_times[1] - 0.01).abs() < 1e-12);
}

#[test]
fn sine_440_peaks_at_nearest_band() {
    // centers from the HTK formula, computed here rather than via the filterbank
    let mel_max = 2595.0 * (1.0 + 8000.0f64 / 700.0).log10();
    let centers: Vec<f64> = (1..=64)
        .map(|i| 700.0 * (10f64.powf(mel_max * i as f64 / 65.0 / 2595.0) - 1.0))
        .collect();
    let nearest = centers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
        .unwrap()
        .0;

    let mel = mel_spectrogram(&segment(sine(440.0, 1.0, 0.5)), &StftConfig::default(), &MelConfig::default())
        .unwrap();
    for t in 0..mel.frames {
        let argmax = (0..64).max_by(|&a, &b| mel.get(a, t, 0).total_cmp(&mel.get(b, t, 0))).unwrap();
        assert_eq!(argmax, nearest, "frame {t}");
    }
}

#[test]
fn filterbank_rows_nonnegative_and_cover_band() {
    let ex = FeatureExtractor::canonical();
    let fb = ex.filterbank();
    assert_eq!(fb.n_mels(), 64);
    for k in 0..fb.n_bins() {
        let f = k as f64 * 16_000.0 / 512.0;
        let total: f64 = (0..64).map(|m| fb.weight(m, k)).sum();
        assert!((0..64).all(|m| fb.weight(m, k) >= 0.0));
        if f > 0.0 && f < 8000.0 {
            assert!(total > 0.0, "bin {k} ({f} Hz) uncovered");
        }
    }
}

#[test]
fn mfcc_of_constant_column() {
    let mut t = FeatureTensor::zeros(64, 3, 1);
    t.data.fill(2.5);
    let c = mfcc(&t, 13).unwrap();
    for f in 0..3 {
        assert!((c.get(0, f) - 2.5 * 8.0).abs() < 1e-12);
        for k in 1..13 {
            assert!(c.get(k, f).abs() < 1e-12);
        }
    }
}

#[test]
fn mfcc_of_silence() {
    let mel = mel_spectrogram(&segment(vec![0.0; 8000]), &StftConfig::default(), &MelConfig::default()).unwrap();
    let c = FeatureExtractor::canonical().mfcc(&mel, 13).unwrap();
    let expected = (1e-10f64).ln() * 8.0;
    for f in 0..c.cols {
        assert!((c.get(0, f) - expected).abs() < 1e-9);
        assert!((1..13).all(|k| c.get(k, f).abs() < 1e-9));
    }
}

#[test]
fn mfcc_matches_naive_double_loop() {
    let mut rng = SeededRng::new(5);
    let mut t = FeatureTensor::zeros(64, 4, 1);
    for v in t.data.iter_mut() {
        *v = rng.uniform_range(-30.0, 5.0);
    }
    let ex = FeatureExtractor::canonical();
    let c = ex.mfcc(&t, 64).unwrap();
    for f in 0..4 {
        for k in 0..64 {
            let scale = if k == 0 { (1.0f64 / 64.0).sqrt() } else { (2.0f64 / 64.0).sqrt() };
            let mut acc = 0.0;
            for n in 0..64 {
                acc += t.get(n, f, 0) * (core::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / 128.0).cos();
            }
            assert!((c.get(k, f) - scale * acc).abs() < 1e-9);
        }
    }
    assert_eq!(
        mfcc(&t, 65).unwrap_err(),
        DspError::TooManyCoefficients { requested: 65, available: 64 }
    );
}

#[test]
fn centroid_cases() {
    let mut p = Matrix::zeros(257, 3);
    p.set(10, 0, 4.0);
    p.set(10, 2, 1.0);
    p.set(30, 2, 1.0);
    let c = spectral_centroid(&p, 16_000, 512);
    assert_eq!(c[0], 10.0 * 16_000.0 / 512.0);
    assert_eq!(c[1], 0.0);
    assert!((c[2] - 20.0 * 31.25).abs() < 1e-9);
}

#[test]
fn zcr_cases() {
    let cfg = StftConfig::default();
    let alt: Vec<f32> = (0..400).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    assert_eq!(zero_crossing_rate(&segment(alt), &cfg).unwrap(), [1.0]);
    assert_eq!(zero_crossing_rate(&segment(vec![0.3; 400]), &cfg).unwrap(), [0.0]);
    assert_eq!(zero_crossing_rate(&segment(vec![0.0; 400]), &cfg).unwrap(), [0.0]);

    let x = sine(100.0, 0.025, 1.0);
    let mut crossings = 0;
    for i in 1..x.len() {
        let a = x[i - 1] >= 0.0;
        let b = x[i] >= 0.0;
        if a != b {
            crossings += 1;
        }
    }
    assert_eq!(crossings, 4);
    let z = zero_crossing_rate(&segment(x), &cfg).unwrap();
    assert_eq!(z, [4.0 / 399.0]);
}

#[test]
fn input_tensor_shapes() {
    let seg = segment(sine(300.0, 3.0, 0.3));
    assert_eq!(build_input_tensor(&seg, InputMode::MelOnly).unwrap().shape(), [64, 298, 1]);
    let stacked = build_input_tensor(&seg, InputMode::Stacked).unwrap();
    assert_eq!(stacked.shape(), [64, 298, 3]);
    for t in 0..298 {
        for h in 13..64 {
            assert_eq!(stacked.get(h, t, 1), 0.0);
        }
        assert!((0..64).all(|h| (0.0..=1.0).contains(&stacked.get(h, t, 2))));
    }
}

#[test]
fn silence_stacked_third_channel_is_zero() {
    let t = build_input_tensor(&segment(vec![0.0; 48_000]), InputMode::Stacked).unwrap();
    for h in 0..64 {
        for f in 0..t.frames {
            assert_eq!(t.get(h, f, 2), 0.0);
        }
    }
}

#[test]
fn frame_features_row_width() {
    let rows = FeatureExtractor::canonical().frame_features(&sine(500.0, 0.5, 0.2), 13).unwrap();
    assert_eq!(rows.len(), 48);
    assert!(rows.iter().all(|r| r.mel.len() + r.mfcc.len() + 2 == 79));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn log_mel_monotone_in_gain(seed in 0u64..1000, g in 1.0f64..4.0) {
        let mut rng = SeededRng::new(seed);
        let x: Vec<f32> = (0..1200).map(|_| rng.uniform_range(-0.2, 0.2) as f32).collect();
        let y: Vec<f32> = x.iter().map(|&s| (s as f64 * g) as f32).collect();
        let ex = FeatureExtractor::canonical();
        let a = ex.mel_spectrogram(&x).unwrap();
        let b = ex.mel_spectrogram(&y).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            prop_assert!(v + 1e-9 >= *u);
        }
    }

    #[test]
    fn features_always_finite(samples in proptest::collection::vec(-1.0f32..1.0, 400..2000)) {
        let seg = segment(samples);
        let t = build_input_tensor(&seg, InputMode::Stacked).unwrap();
        prop_assert!(t.is_finite());
    }
}
