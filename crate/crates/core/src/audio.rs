//! Canonical audio buffers: downmixing, linear resampling and fixed-length
//! segmentation of sample streams.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Sample rate every segment is brought to before feature extraction.
pub const CANONICAL_RATE: u32 = 16_000;

/// Default analysis window length in seconds.
pub const DEFAULT_SEGMENT_SECONDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum AudioError {
    EmptyInput,
    InvalidSegmentation { segment_seconds: f64, hop_seconds: f64 },
    InvalidRate(u32),
    InvalidChannels(u16),
}

impl AudioError {
    pub fn kind(&self) -> &'static str {
        match self {
            AudioError::EmptyInput => "EmptyInput",
            AudioError::InvalidSegmentation { .. } => "InvalidSegmentation",
            AudioError::InvalidRate(_) => "InvalidRate",
            AudioError::InvalidChannels(_) => "InvalidChannels",
        }
    }
}

impl fmt::Display for AudioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AudioError::EmptyInput => write!(f, "no samples to segment"),
            AudioError::InvalidSegmentation { segment_seconds, hop_seconds } => write!(
                f,
                "segment length {segment_seconds} s and hop {hop_seconds} s must be positive with hop <= segment"
            ),
            AudioError::InvalidRate(r) => write!(f, "invalid sample rate {r}"),
            AudioError::InvalidChannels(c) => write!(f, "invalid channel count {c}"),
        }
    }
}

impl core::error::Error for AudioError {}

/// A mono buffer of samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    samples: Vec<f32>,
    sample_rate: u32,
    /// Seconds from the start of the originating stream.
    pub start_offset: f64,
}

impl AudioSegment {
    /// Wraps `samples`, replacing non-finite values with 0 and clamping the
    /// rest into `[-1, 1]`.
    pub fn new(mut samples: Vec<f32>, sample_rate: u32, start_offset: f64) -> Self {
        normalize_in_place(&mut samples);
        AudioSegment { samples, sample_rate, start_offset }
    }

    /// Builds a canonical 16 kHz segment from arbitrary-rate mono samples.
    pub fn from_mono(samples: &[f32], sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate(sample_rate));
        }
        let resampled = resample_linear(samples, sample_rate, CANONICAL_RATE);
        Ok(AudioSegment::new(resampled, CANONICAL_RATE, 0.0))
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

fn normalize_in_place(samples: &mut [f32]) {
    for s in samples.iter_mut() {
        *s = if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 };
    }
}

/// Averages interleaved frames of `channels` samples into one channel.
pub fn downmix(interleaved: &[f32], channels: u16) -> Result<Vec<f32>, AudioError> {
    match channels {
        0 => Err(AudioError::InvalidChannels(0)),
        1 => Ok(interleaved.to_vec()),
        n => {
            let n = n as usize;
            Ok(interleaved
                .chunks_exact(n)
                .map(|frame| frame.iter().map(|&s| s as f64).sum::<f64>() as f32 / n as f32)
                .collect())
        }
    }
}

/// Piecewise-linear resampling. Output sample `i` sits at source position
/// `i * from / to`; positions past the last source sample hold its value.
pub fn resample_linear(samples: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to_rate as u64) / from_rate as u64).max(1) as usize;
    let step = from_rate as f64 / to_rate as f64;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos as usize;
            if idx >= last {
                return samples[last];
            }
            let frac = pos - idx as f64;
            let a = samples[idx] as f64;
            let b = samples[idx + 1] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect()
}

/// Splits a canonical-rate stream into fixed-length windows.
///
/// Windows start every `hop_seconds`; a trailing window that would run past
/// the end of the stream is zero-padded to full length so every sample lands
/// in at least one window.
pub fn segment_stream(
    samples: &[f32],
    sample_rate: u32,
    segment_seconds: f64,
    hop_seconds: f64,
) -> Result<Vec<AudioSegment>, AudioError> {
    if samples.is_empty() {
        return Err(AudioError::EmptyInput);
    }
    if !(segment_seconds > 0.0 && hop_seconds > 0.0 && hop_seconds <= segment_seconds) {
        return Err(AudioError::InvalidSegmentation { segment_seconds, hop_seconds });
    }
    let seg_len = libm::round(segment_seconds * sample_rate as f64) as usize;
    let hop = (libm::round(hop_seconds * sample_rate as f64) as usize).max(1);
    if seg_len == 0 {
        return Err(AudioError::InvalidSegmentation { segment_seconds, hop_seconds });
    }

    let mut starts = Vec::new();
    if samples.len() <= seg_len {
        starts.push(0);
    } else {
        let full = (samples.len() - seg_len) / hop + 1;
        starts.extend((0..full).map(|k| k * hop));
        let covered = (full - 1) * hop + seg_len;
        if covered < samples.len() {
            starts.push(full * hop);
        }
    }

    Ok(starts
        .into_iter()
        .map(|start| {
            let end = (start + seg_len).min(samples.len());
            let mut buf = vec![0.0f32; seg_len];
            buf[..end - start].copy_from_slice(&samples[start..end]);
            AudioSegment::new(buf, sample_rate, start as f64 / sample_rate as f64)
        })
        .collect())
}

/// Zero-pads or truncates `samples` to exactly `seconds` at `sample_rate`.
pub fn fit_to_length(samples: &[f32], sample_rate: u32, seconds: f64) -> Vec<f32> {
    let n = libm::round(seconds * sample_rate as f64) as usize;
    let mut out = vec![0.0; n];
    let m = n.min(samples.len());
    out[..m].copy_from_slice(&samples[..m]);
    out
}
