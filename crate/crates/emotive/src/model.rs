//! Weight files, labeled WAV directories and training runs.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use emotive_core::audio::{fit_to_length, AudioSegment, CANONICAL_RATE};
use emotive_core::dsp::{FeatureExtractor, FeatureTensor, InputMode};
use emotive_core::nn::{self, NetworkSpec, NnError, WeightSet};
use emotive_core::synth;

use crate::wav::{self, WavError};

#[derive(Debug)]
pub enum ModelError {
    NotFound(PathBuf),
    Io { path: PathBuf, source: io::Error },
    Nn(NnError),
    Wav { path: PathBuf, source: WavError },
    Dsp(String),
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::NotFound(_) => "NotFound",
            ModelError::Io { .. } => "IoError",
            ModelError::Nn(e) => e.kind(),
            ModelError::Wav { source, .. } => source.kind(),
            ModelError::Dsp(_) => "DspError",
        }
    }
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NotFound(p) => write!(f, "{} does not exist", p.display()),
            ModelError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ModelError::Nn(e) => write!(f, "{e}"),
            ModelError::Wav { path, source } => write!(f, "{}: {source}", path.display()),
            ModelError::Dsp(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<NnError> for ModelError {
    fn from(e: NnError) -> Self {
        ModelError::Nn(e)
    }
}

fn io_err(path: &Path, e: io::Error) -> ModelError {
    if e.kind() == io::ErrorKind::NotFound {
        ModelError::NotFound(path.to_path_buf())
    } else {
        ModelError::Io { path: path.to_path_buf(), source: e }
    }
}

/// Reads and decodes a weight file without checking it against a spec.
pub fn read_weight_file(path: &Path) -> Result<WeightSet, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(nn::format::decode(&bytes).map_err(NnError::from)?)
}

pub fn read_weights(path: &Path, spec: &NetworkSpec) -> Result<WeightSet, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(nn::load_weights(&bytes, spec)?)
}

pub fn write_weights(path: &Path, weights: &WeightSet) -> Result<(), ModelError> {
    std::fs::write(path, nn::save_weights(weights)).map_err(|e| io_err(path, e))
}

/// Infers the emotion CNN spec (input channels, class count) from a weight
/// file's tensor shapes.
pub fn infer_spec(weights: &WeightSet) -> Result<NetworkSpec, ModelError> {
    let mismatch = |m: &str| ModelError::Nn(NnError::ShapeMismatch(m.into()));
    let conv = weights.tensors.first().ok_or_else(|| mismatch("weight file holds no tensors"))?;
    let channels = *conv.dims.get(2).ok_or_else(|| mismatch("first tensor is not a 3x3 kernel"))?;
    let dense = weights
        .tensors
        .iter()
        .rev()
        .find(|t| t.dims.len() == 2)
        .ok_or_else(|| mismatch("no dense layer found"))?;
    let spec = NetworkSpec::emotion_cnn_with_input(64, channels, dense.dims[1]);
    weights.check_against(&spec)?;
    Ok(spec)
}

/// WAV files grouped by class; classes are the sorted subdirectory names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDir {
    pub classes: Vec<String>,
    pub items: Vec<(PathBuf, usize)>,
}

pub fn scan_dataset(dir: &Path) -> Result<LabeledDir, ModelError> {
    let read = |d: &Path| -> Result<Vec<PathBuf>, ModelError> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(d)
            .map_err(|e| io_err(d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let mut classes = Vec::new();
    let mut items = Vec::new();
    for sub in read(dir)?.into_iter().filter(|p| p.is_dir()) {
        let wavs: Vec<PathBuf> = read(&sub)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        if wavs.is_empty() {
            continue;
        }
        let label = classes.len();
        classes.push(sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        items.extend(wavs.into_iter().map(|p| (p, label)));
    }
    if items.is_empty() {
        return Err(NnError::EmptyDataset.into());
    }
    Ok(LabeledDir { classes, items })
}

/// Loads every clip, fits it to `seconds`, and extracts network inputs.
pub fn load_examples(
    data: &LabeledDir,
    fx: &FeatureExtractor,
    mode: InputMode,
    seconds: f64,
) -> Result<Vec<(FeatureTensor, usize)>, ModelError> {
    data.items
        .iter()
        .map(|(path, label)| {
            let seg = wav::read_wav(path).map_err(|source| ModelError::Wav { path: path.clone(), source })?;
            let fitted = AudioSegment::new(fit_to_length(seg.samples(), CANONICAL_RATE, seconds), CANONICAL_RATE, 0.0);
            let x = fx.build_input_tensor(&fitted, mode).map_err(|e| ModelError::Dsp(e.to_string()))?;
            Ok((x, *label))
        })
        .collect()
}

pub type Labeled<T> = Vec<(T, usize)>;

/// Deterministic per-item split: every `1/holdout`-th item of each class
/// goes to the held-out set.
pub fn split_holdout<T: Clone>(examples: &[(T, usize)], every: usize) -> (Labeled<T>, Labeled<T>) {
    let mut seen = std::collections::HashMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for ex in examples {
        let n = seen.entry(ex.1).or_insert(0usize);
        if every > 0 && *n % every == every - 1 {
            test.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
        *n += 1;
    }
    (train, test)
}

/// Writes `per_class` seeded tone clips for each of `classes` into
/// `dir/<name>/NNNN.wav`.
pub fn write_synthetic_dataset(
    dir: &Path,
    names: &[String],
    per_class: usize,
    seconds: f64,
    seed: u64,
) -> Result<(), ModelError> {
    let samples = (seconds * CANONICAL_RATE as f64).round() as usize;
    for (class, name) in names.iter().enumerate() {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
        for i in 0..per_class {
            let clip_seed = emotive_core::rng::mix_seed(seed, (class * 1_000_003 + i) as u64);
            let clip = synth::class_clip(class, names.len(), samples, CANONICAL_RATE, clip_seed);
            let path = sub.join(format!("{i:04}.wav"));
            wav::write_pcm16(&path, &clip, 1, CANONICAL_RATE).map_err(|source| ModelError::Wav { path, source })?;
        }
    }
    Ok(())
}
