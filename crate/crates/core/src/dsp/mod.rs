//! Spectral front end: power STFT, log-mel spectrogram, MFCC, spectral
//! centroid, zero-crossing rate and the CNN input tensor built from them.
//!
//! [`FeatureExtractor`] precomputes the window, FFT plan, mel filterbank and
//! DCT basis once; the free functions build a throwaway extractor for
//! one-off calls.

mod fft;
mod mel;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::audio::AudioSegment;

pub use fft::{Complex, FftPlan};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};

/// Default number of cepstral coefficients kept by [`mfcc`].
pub const DEFAULT_MFCC: usize = 13;

/// Frames whose total power is below this report a centroid of 0.
pub const SILENT_FRAME_POWER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum DspError {
    SegmentTooShort { samples: usize, window: usize },
    TooManyCoefficients { requested: usize, available: usize },
    InvalidConfig(&'static str),
}

impl DspError {
    pub fn kind(&self) -> &'static str {
        match self {
            DspError::SegmentTooShort { .. } => "SegmentTooShort",
            DspError::TooManyCoefficients { .. } => "TooManyCoefficients",
            DspError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

impl fmt::Display for DspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DspError::SegmentTooShort { samples, window } => {
                write!(f, "segment has {samples} samples, need at least one {window}-sample window")
            }
            DspError::TooManyCoefficients { requested, available } => {
                write!(f, "{requested} cepstral coefficients requested but only {available} mel bands")
            }
            DspError::InvalidConfig(msg) => write!(f, "invalid feature config: {msg}"),
        }
    }
}

impl core::error::Error for DspError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub window_fn: WindowFn,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window_ms: 25.0, hop_ms: 10.0, fft_size: 512, window_fn: WindowFn::Hann }
    }
}

impl StftConfig {
    pub fn window_samples(&self, rate: u32) -> usize {
        libm::round(self.window_ms * rate as f64 / 1000.0) as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        libm::round(self.hop_ms * rate as f64 / 1000.0) as usize
    }

    /// Frames that fit entirely inside `len` samples, or `None` when not even
    /// one does.
    pub fn frame_count(&self, len: usize, rate: u32) -> Option<usize> {
        let win = self.window_samples(rate);
        let hop = self.hop_samples(rate);
        if len < win || hop == 0 || win == 0 {
            return None;
        }
        Some((len - win) / hop + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { n_mels: 64, f_min: 0.0, f_max: 8000.0, log_floor: 1e-10 }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, c))
    }
}

/// Time-frequency features laid out `[height][frames][channels]`, channel
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub height: usize,
    pub frames: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Start time of each frame in seconds, relative to the segment.
    pub frame_times: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(height: usize, frames: usize, channels: usize) -> Self {
        FeatureTensor {
            height,
            frames,
            channels,
            data: vec![0.0; height * frames * channels],
            frame_times: vec![0.0; frames],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.frames, self.channels]
    }

    #[inline]
    pub fn index(&self, h: usize, t: usize, c: usize) -> usize {
        (h * self.frames + t) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, t: usize, c: usize) -> f64 {
        self.data[self.index(h, t, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, t: usize, c: usize, v: f64) {
        let i = self.index(h, t, c);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// How the CNN input tensor is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// One channel of log-mel energies.
    #[default]
    MelOnly,
    /// Log-mel, zero-padded MFCC, and broadcast centroid/ZCR rows.
    Stacked,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::MelOnly => 1,
            InputMode::Stacked => 3,
        }
    }
}

/// Per-frame feature rows as written by the `features` CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub mel: Vec<f64>,
    pub mfcc: Vec<f64>,
    pub centroid: f64,
    pub zcr: f64,
}

/// Precomputed analysis state for one sample rate and configuration.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    rate: u32,
    stft: StftConfig,
    mel: MelConfig,
    window: Vec<f64>,
    plan: FftPlan,
    filterbank: MelFilterbank,
    dct: Matrix,
}

impl FeatureExtractor {
    pub fn new(rate: u32, stft: StftConfig, mel: MelConfig) -> Result<Self, DspError> {
        let win = stft.window_samples(rate);
        if win == 0 || stft.hop_samples(rate) == 0 {
            return Err(DspError::InvalidConfig("window and hop must span at least one sample"));
        }
        if stft.fft_size < win {
            return Err(DspError::InvalidConfig("fft_size must be at least the window length"));
        }
        let plan = FftPlan::new(stft.fft_size).ok_or(DspError::InvalidConfig("fft_size must be a power of two"))?;
        if mel.n_mels == 0 {
            return Err(DspError::InvalidConfig("n_mels must be at least 1"));
        }
        if !(mel.f_min >= 0.0 && mel.f_min < mel.f_max && mel.f_max <= rate as f64 / 2.0) {
            return Err(DspError::InvalidConfig("mel range must satisfy 0 <= f_min < f_max <= rate/2"));
        }
        if !(mel.log_floor > 0.0) {
            return Err(DspError::InvalidConfig("log_floor must be positive"));
        }
        Ok(FeatureExtractor {
            rate,
            stft,
            mel,
            window: hann(win),
            plan,
            filterbank: MelFilterbank::new(rate, stft.fft_size, &mel),
            dct: dct_ii_basis(mel.n_mels),
        })
    }

    /// 16 kHz extractor with the default 25 ms / 10 ms / 512-point / 64-band setup.
    pub fn canonical() -> Self {
        FeatureExtractor::new(crate::CANONICAL_RATE, StftConfig::default(), MelConfig::default())
            .expect("default feature config is valid")
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn window_samples(&self) -> usize {
        self.window.len()
    }

    pub fn hop_samples(&self) -> usize {
        self.stft.hop_samples(self.rate)
    }

    pub fn frame_count(&self, len: usize) -> Result<usize, DspError> {
        self.stft
            .frame_count(len, self.rate)
            .ok_or(DspError::SegmentTooShort { samples: len, window: self.window.len() })
    }

    fn frames<'a>(&self, samples: &'a [f32]) -> Result<impl Iterator<Item = &'a [f32]> + 'a, DspError> {
        let n = self.frame_count(samples.len())?;
        let win = self.window.len();
        let hop = self.hop_samples();
        Ok((0..n).map(move |t| &samples[t * hop..t * hop + win]))
    }

    /// `|DFT(hann * frame)|^2` for bins `0..=fft_size/2`, frames as columns.
    pub fn stft_power(&self, samples: &[f32]) -> Result<Matrix, DspError> {
        let n_frames = self.frame_count(samples.len())?;
        let bins = self.stft.fft_size / 2 + 1;
        let mut out = Matrix::zeros(bins, n_frames);
        let mut buf = vec![Complex::ZERO; self.stft.fft_size];
        for (t, frame) in self.frames(samples)?.enumerate() {
            buf.fill(Complex::ZERO);
            for ((slot, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                slot.re = s as f64 * w;
            }
            self.plan.forward(&mut buf);
            for (k, z) in buf[..bins].iter().enumerate() {
                out.set(k, t, z.norm_sqr());
            }
        }
        Ok(out)
    }

    /// Natural-log mel energies from a power spectrogram, one channel.
    pub fn log_mel_from_power(&self, power: &Matrix) -> FeatureTensor {
        let mut out = FeatureTensor::zeros(self.mel.n_mels, power.cols, 1);
        let hop_s = self.hop_samples() as f64 / self.rate as f64;
        for (t, time) in out.frame_times.iter_mut().enumerate() {
            *time = t as f64 * hop_s;
        }
        for m in 0..self.mel.n_mels {
            let (start, weights) = self.filterbank.row(m);
            for t in 0..power.cols {
                let energy: f64 = weights.iter().enumerate().map(|(i, &w)| w * power.get(start + i, t)).sum();
                out.data[m * power.cols + t] = libm::log(energy.max(self.mel.log_floor));
            }
        }
        out
    }

    pub fn mel_spectrogram(&self, samples: &[f32]) -> Result<FeatureTensor, DspError> {
        let power = self.stft_power(samples)?;
        Ok(self.log_mel_from_power(&power))
    }

    /// Orthonormal DCT-II over the mel axis of channel 0.
    pub fn mfcc(&self, mel: &FeatureTensor, n_coeffs: usize) -> Result<Matrix, DspError> {
        if n_coeffs > mel.height {
            return Err(DspError::TooManyCoefficients { requested: n_coeffs, available: mel.height });
        }
        let basis = if mel.height == self.dct.rows { &self.dct } else { &dct_ii_basis(mel.height) };
        let mut out = Matrix::zeros(n_coeffs, mel.frames);
        for k in 0..n_coeffs {
            let row = &basis.data[k * basis.cols..(k + 1) * basis.cols];
            for t in 0..mel.frames {
                let acc: f64 = row.iter().enumerate().map(|(m, &b)| b * mel.get(m, t, 0)).sum();
                out.set(k, t, acc);
            }
        }
        Ok(out)
    }

    /// Fraction of adjacent-sample sign changes per frame; zero counts as
    /// positive.
    pub fn zero_crossing_rate(&self, samples: &[f32]) -> Result<Vec<f64>, DspError> {
        let denom = (self.window.len() - 1).max(1) as f64;
        Ok(self
            .frames(samples)?
            .map(|frame| {
                let crossings = frame.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count();
                crossings as f64 / denom
            })
            .collect())
    }

    /// Per-frame RMS level in dBFS (full scale = RMS 1.0), floored at `floor_db`.
    pub fn frame_rms_dbfs(&self, samples: &[f32], floor_db: f64) -> Result<Vec<f64>, DspError> {
        Ok(self
            .frames(samples)?
            .map(|frame| {
                let ms = frame.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / frame.len() as f64;
                if ms <= 0.0 {
                    floor_db
                } else {
                    (10.0 * libm::log10(ms)).max(floor_db)
                }
            })
            .collect())
    }

    pub fn build_input_tensor(&self, segment: &AudioSegment, mode: InputMode) -> Result<FeatureTensor, DspError> {
        let samples = segment.samples();
        let power = self.stft_power(samples)?;
        let log_mel = self.log_mel_from_power(&power);
        if mode == InputMode::MelOnly {
            return Ok(log_mel);
        }

        let height = log_mel.height;
        let frames = log_mel.frames;
        let n_mfcc = DEFAULT_MFCC.min(height);
        let cepstra = self.mfcc(&log_mel, n_mfcc)?;
        let mut centroid = spectral_centroid(&power, self.rate, self.stft.fft_size);
        min_max_normalize(&mut centroid);
        let zcr = self.zero_crossing_rate(samples)?;

        let mut out = FeatureTensor::zeros(height, frames, 3);
        out.frame_times.clone_from(&log_mel.frame_times);
        let split = height / 2;
        for h in 0..height {
            for t in 0..frames {
                out.set(h, t, 0, log_mel.get(h, t, 0));
                if h < n_mfcc {
                    out.set(h, t, 1, cepstra.get(h, t));
                }
                out.set(h, t, 2, if h < split { centroid[t] } else { zcr[t] });
            }
        }
        Ok(out)
    }

    /// All per-frame scalar features of a segment, for tabular export.
    pub fn frame_features(&self, samples: &[f32], n_mfcc: usize) -> Result<Vec<FrameFeatures>, DspError> {
        let power = self.stft_power(samples)?;
        let log_mel = self.log_mel_from_power(&power);
        let cepstra = self.mfcc(&log_mel, n_mfcc)?;
        let centroid = spectral_centroid(&power, self.rate, self.stft.fft_size);
        let zcr = self.zero_crossing_rate(samples)?;
        Ok((0..log_mel.frames)
            .map(|t| FrameFeatures {
                mel: (0..log_mel.height).map(|m| log_mel.get(m, t, 0)).collect(),
                mfcc: cepstra.column(t).collect(),
                centroid: centroid[t],
                zcr: zcr[t],
            })
            .collect())
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * libm::cos(core::f64::consts::TAU * n as f64 / len as f64))
        .collect()
}

/// Orthonormal DCT-II basis, `n x n`, row `k` holds coefficient `k`.
pub fn dct_ii_basis(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 { libm::sqrt(1.0 / nf) } else { libm::sqrt(2.0 / nf) };
        for i in 0..n {
            let angle = core::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * nf);
            m.set(k, i, scale * libm::cos(angle));
        }
    }
    m
}

/// Power-weighted mean frequency per frame; near-silent frames give 0.
pub fn spectral_centroid(power: &Matrix, rate: u32, fft_size: usize) -> Vec<f64> {
    let bin_hz = rate as f64 / fft_size as f64;
    (0..power.cols)
        .map(|t| {
            let (num, den) = power
                .column(t)
                .enumerate()
                .fold((0.0, 0.0), |(n, d), (k, p)| (n + k as f64 * bin_hz * p, d + p));
            if den < SILENT_FRAME_POWER {
                0.0
            } else {
                num / den
            }
        })
        .collect()
}

/// Maps values affinely onto `[0, 1]`; a constant vector maps to zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 && span.is_finite() { (*v - lo) / span } else { 0.0 };
    }
}

pub fn stft_power(segment: &AudioSegment, cfg: &StftConfig) -> Result<Matrix, DspError> {
    FeatureExtractor::new(segment.sample_rate(), *cfg, mel_config_for(segment.sample_rate()))?
        .stft_power(segment.samples())
}

pub fn mel_spectrogram(segment: &AudioSegment, stft: &StftConfig, mel: &MelConfig) -> Result<FeatureTensor, DspError> {
    FeatureExtractor::new(segment.sample_rate(), *stft, *mel)?.mel_spectrogram(segment.samples())
}

pub fn mfcc(mel_tensor: &FeatureTensor, n_coeffs: usize) -> Result<Matrix, DspError> {
    if n_coeffs > mel_tensor.height {
        return Err(DspError::TooManyCoefficients { requested: n_coeffs, available: mel_tensor.height });
    }
    let basis = dct_ii_basis(mel_tensor.height);
    let mut out = Matrix::zeros(n_coeffs, mel_tensor.frames);
    for k in 0..n_coeffs {
        for t in 0..mel_tensor.frames {
            let acc: f64 = (0..mel_tensor.height).map(|m| basis.get(k, m) * mel_tensor.get(m, t, 0)).sum();
            out.set(k, t, acc);
        }
    }
    Ok(out)
}

pub fn zero_crossing_rate(segment: &AudioSegment, cfg: &StftConfig) -> Result<Vec<f64>, DspError> {
    FeatureExtractor::new(segment.sample_rate(), *cfg, mel_config_for(segment.sample_rate()))?
        .zero_crossing_rate(segment.samples())
}

pub fn build_input_tensor(segment: &AudioSegment, mode: InputMode) -> Result<FeatureTensor, DspError> {
    FeatureExtractor::new(segment.sample_rate(), StftConfig::default(), mel_config_for(segment.sample_rate()))?
        .build_input_tensor(segment, mode)
}

// Mel settings only matter for the mel path; for STFT/ZCR helpers at other
// rates the band edge has to stay under Nyquist.
fn mel_config_for(rate: u32) -> MelConfig {
    let mut cfg = MelConfig::default();
    cfg.f_max = cfg.f_max.min(rate as f64 / 2.0);
    cfg
}

#[cfg(test)]
mod tests;
