//! Per-frame feature table as CSV.

use std::io::Write;

use emotive_core::dsp::{FeatureExtractor, FrameFeatures, DspError, DEFAULT_MFCC};

pub fn header(n_mels: usize, n_mfcc: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..n_mels).map(|i| format!("mel_{i}")).collect();
    h.extend((0..n_mfcc).map(|i| format!("mfcc_{i}")));
    h.push("centroid".into());
    h.push("zcr".into());
    h
}

pub fn extract(fx: &FeatureExtractor, samples: &[f32]) -> Result<Vec<FrameFeatures>, DspError> {
    fx.frame_features(samples, DEFAULT_MFCC)
}

/// Writes one row per frame. Values use Rust's shortest round-trip format.
pub fn write_csv<W: Write>(out: W, rows: &[FrameFeatures], n_mels: usize) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(n_mels, DEFAULT_MFCC))?;
    for r in rows {
        let fields = r.mel.iter().chain(&r.mfcc).chain([&r.centroid, &r.zcr]).map(|v| v.to_string());
        w.write_record(fields)?;
    }
    w.flush()?;
    Ok(())
}
