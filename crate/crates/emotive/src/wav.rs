//! RIFF/WAVE input and output.

use std::fmt;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use emotive_core::audio::{downmix, AudioSegment, CANONICAL_RATE};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

#[derive(Debug)]
pub enum WavError {
    NotFound(PathBuf),
    UnsupportedEncoding(String),
    CorruptHeader(String),
    Io(io::Error),
}

impl WavError {
    pub fn kind(&self) -> &'static str {
        match self {
            WavError::NotFound(_) => "NotFound",
            WavError::UnsupportedEncoding(_) => "UnsupportedEncoding",
            WavError::CorruptHeader(_) => "CorruptHeader",
            WavError::Io(_) => "IoError",
        }
    }
}

impl WavError {
    fn from_write(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(e) => WavError::Io(e),
            other => map_hound(other),
        }
    }
}

impl fmt::Display for WavError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WavError::NotFound(p) => write!(f, "{} does not exist", p.display()),
            WavError::UnsupportedEncoding(m) => write!(f, "unsupported WAV encoding: {m}"),
            WavError::CorruptHeader(m) => write!(f, "corrupt WAV file: {m}"),
            WavError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for WavError {}

fn map_hound(e: hound::Error) -> WavError {
    match e {
        // The file opened, so a read failure here is a truncated or malformed body.
        hound::Error::IoError(e) => WavError::CorruptHeader(e.to_string()),
        hound::Error::FormatError(m) => WavError::CorruptHeader(m.into()),
        hound::Error::TooWide => WavError::UnsupportedEncoding("sample width exceeds 32 bits".into()),
        hound::Error::UnfinishedSample => WavError::CorruptHeader("data ends inside a sample".into()),
        hound::Error::Unsupported => WavError::UnsupportedEncoding("only PCM integer and 32-bit float data are read".into()),
        hound::Error::InvalidSampleFormat => WavError::UnsupportedEncoding("sample format does not match its bit depth".into()),
    }
}

/// Interleaved samples scaled to `[-1, 1]` with the source layout.
#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub samples: Vec<f32>,
    pub channels: u16,
    pub sample_rate: u32,
}

pub fn decode<R: Read>(reader: R) -> Result<WavData, WavError> {
    let reader = WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.sample_rate == 0 {
        return Err(WavError::CorruptHeader("zero channels or sample rate".into()));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>().map_err(map_hound)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
        (format, bits) => {
            return Err(WavError::UnsupportedEncoding(format!("{bits}-bit {format:?} samples")));
        }
    };
    Ok(WavData { samples, channels: spec.channels, sample_rate: spec.sample_rate })
}

pub fn read_raw(path: &Path) -> Result<WavData, WavError> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => WavError::NotFound(path.to_path_buf()),
        _ => WavError::Io(e),
    })?;
    decode(io::BufReader::new(file))
}

/// Reads any supported WAV as a mono segment at the canonical rate.
pub fn read_wav(path: &Path) -> Result<AudioSegment, WavError> {
    let data = read_raw(path)?;
    let mono = downmix(&data.samples, data.channels).map_err(|e| WavError::CorruptHeader(e.to_string()))?;
    if data.sample_rate == CANONICAL_RATE {
        return Ok(AudioSegment::new(mono, CANONICAL_RATE, 0.0));
    }
    AudioSegment::from_mono(&mono, data.sample_rate).map_err(|e| WavError::CorruptHeader(e.to_string()))
}

/// Writes 16-bit PCM, rounding `x · 32768` and saturating.
pub fn write_pcm16(path: &Path, interleaved: &[f32], channels: u16, sample_rate: u32) -> Result<(), WavError> {
    let spec = WavSpec { channels, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec).map_err(WavError::from_write)?;
    for &x in interleaved {
        let v = (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(WavError::from_write)?;
    }
    w.finalize().map_err(WavError::from_write)
}

/// Writes integer PCM of the given width from raw integer samples.
pub fn write_int(path: &Path, interleaved: &[i32], channels: u16, sample_rate: u32, bits: u16) -> Result<(), WavError> {
    let spec = WavSpec { channels, sample_rate, bits_per_sample: bits, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec).map_err(WavError::from_write)?;
    for &v in interleaved {
        match bits {
            8 => w.write_sample(v as i8),
            16 => w.write_sample(v as i16),
            _ => w.write_sample(v),
        }
        .map_err(WavError::from_write)?;
    }
    w.finalize().map_err(WavError::from_write)
}

pub fn write_f32(path: &Path, interleaved: &[f32], channels: u16, sample_rate: u32) -> Result<(), WavError> {
    let spec = WavSpec { channels, sample_rate, bits_per_sample: 32, sample_format: SampleFormat::Float };
    let mut w = WavWriter::create(path, spec).map_err(WavError::from_write)?;
    for &x in interleaved {
        w.write_sample(x).map_err(WavError::from_write)?;
    }
    w.finalize().map_err(WavError::from_write)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_int(&p, &[32767, -32768, 0, 16384], 1, 16_000, 16).unwrap();
        let seg = read_wav(&p).unwrap();
        assert_eq!(seg.samples(), &[32767.0 / 32768.0, -1.0, 0.0, 0.5]);
        assert!((seg.samples()[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn widths_and_float() {
        let dir = tempfile::tempdir().unwrap();
        for (bits, v, expect) in [(8u16, 64i32, 0.5f32), (24, 1 << 22, 0.5), (32, 1 << 30, 0.5)] {
            let p = dir.path().join(format!("w{bits}.wav"));
            write_int(&p, &[v, -v], 1, 16_000, bits).unwrap();
            assert_eq!(read_wav(&p).unwrap().samples(), &[expect, -expect], "{bits}-bit");
        }
        let p = dir.path().join("f.wav");
        write_f32(&p, &[0.25, -0.75], 1, 16_000).unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.25, -0.75]);
    }

    #[test]
    fn stereo_cancels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let x: Vec<f32> = (0..200).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        write_pcm16(&p, &x, 2, 16_000).unwrap();
        let seg = read_wav(&p).unwrap();
        assert_eq!(seg.len(), 100);
        assert!(seg.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resamples_to_canonical_rate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let x: Vec<f32> = (0..8000).map(|i| (i as f32 * 0.001).sin() * 0.5).collect();
        write_pcm16(&p, &x, 1, 8000).unwrap();
        let seg = read_wav(&p).unwrap();
        assert_eq!(seg.sample_rate(), CANONICAL_RATE);
        assert_eq!(seg.len(), 16_000);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_wav(&dir.path().join("missing.wav")).unwrap_err().kind(), "NotFound");
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        assert_eq!(read_wav(&p).unwrap_err().kind(), "CorruptHeader");

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        // A-law, mono, 16 kHz, 8 bits.
        bytes.extend_from_slice(&6u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16_000u32.to_le_bytes());
        bytes.extend_from_slice(&16_000u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        let p = dir.path().join("alaw.wav");
        std::fs::write(&p, &bytes).unwrap();
        let e = read_wav(&p).unwrap_err();
        assert_eq!(e.kind(), "UnsupportedEncoding", "{e}");
    }
}
