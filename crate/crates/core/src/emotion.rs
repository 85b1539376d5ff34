//! Emotion recognition agent: log-mel features, CNN class distribution and
//! an energy/ZCR arousal estimate.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::audio::AudioSegment;
use crate::dsp::{DspError, FeatureExtractor, FeatureTensor, InputMode};
use crate::nn::{argmax, Network, NetworkSpec, NnError, Scratch, WeightSet};
use crate::pipeline::Clock;

#[derive(Debug, Clone, PartialEq)]
pub enum EmotionError {
    Dsp(DspError),
    Nn(NnError),
    InvalidCategories(String),
}

impl EmotionError {
    pub fn kind(&self) -> &'static str {
        match self {
            EmotionError::Dsp(e) => e.kind(),
            EmotionError::Nn(e) => e.kind(),
            EmotionError::InvalidCategories(_) => "InvalidCategories",
        }
    }
}

impl fmt::Display for EmotionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmotionError::Dsp(e) => write!(f, "{e}"),
            EmotionError::Nn(e) => write!(f, "{e}"),
            EmotionError::InvalidCategories(m) => write!(f, "invalid category set: {m}"),
        }
    }
}

impl core::error::Error for EmotionError {}

impl From<DspError> for EmotionError {
    fn from(e: DspError) -> Self {
        EmotionError::Dsp(e)
    }
}

impl From<NnError> for EmotionError {
    fn from(e: NnError) -> Self {
        EmotionError::Nn(e)
    }
}

/// Ordered, unique class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct EmotionCategories(Vec<String>);

impl EmotionCategories {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Result<Self, EmotionError> {
        if labels.len() < 2 {
            return Err(EmotionError::InvalidCategories("need at least two labels".into()));
        }
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().trim().to_string()).collect();
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l == "*" {
                return Err(EmotionError::InvalidCategories(alloc::format!("label {i} is not a name")));
            }
            if labels[..i].contains(l) {
                return Err(EmotionError::InvalidCategories(alloc::format!("duplicate label {l:?}")));
            }
        }
        Ok(EmotionCategories(labels))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.0[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }
}

impl Default for EmotionCategories {
    fn default() -> Self {
        EmotionCategories::new(&["sad", "angry", "neutral", "happy"]).expect("static labels")
    }
}

impl<'de> Deserialize<'de> for EmotionCategories {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        EmotionCategories::new(&labels).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArousalLevel {
    Low,
    High,
}

impl ArousalLevel {
    pub const ALL: [ArousalLevel; 2] = [ArousalLevel::Low, ArousalLevel::High];

    pub fn name(self) -> &'static str {
        match self {
            ArousalLevel::Low => "low",
            ArousalLevel::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArousalConfig {
    pub w_energy: f64,
    pub w_zcr: f64,
    pub bias: f64,
    pub threshold: f64,
    /// Frame level mapped to zero energy.
    pub floor_db: f64,
}

impl Default for ArousalConfig {
    fn default() -> Self {
        ArousalConfig { w_energy: 4.0, w_zcr: 2.0, bias: -3.0, threshold: 0.5, floor_db: -60.0 }
    }
}

impl ArousalConfig {
    pub fn level(&self, score: f64) -> ArousalLevel {
        if score >= self.threshold {
            ArousalLevel::High
        } else {
            ArousalLevel::Low
        }
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Arousal score in `[0, 1]` from mean frame energy and mean ZCR.
pub fn estimate_arousal(
    fx: &FeatureExtractor,
    samples: &[f32],
    cfg: &ArousalConfig,
) -> Result<(f64, ArousalLevel), DspError> {
    let db = fx.frame_rms_dbfs(samples, cfg.floor_db)?;
    let zcr = fx.zero_crossing_rate(samples)?;
    let mean_db = db.iter().sum::<f64>() / db.len() as f64;
    let energy = ((mean_db - cfg.floor_db) / -cfg.floor_db).clamp(0.0, 1.0);
    let z = zcr.iter().sum::<f64>() / zcr.len() as f64;
    let score = logistic(cfg.w_energy * energy + cfg.w_zcr * z + cfg.bias);
    Ok((score, cfg.level(score)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionState {
    pub distribution: Vec<f64>,
    pub predicted: String,
    pub predicted_index: usize,
    pub arousal: ArousalLevel,
    pub arousal_score: f64,
    pub confidence: f64,
}

impl EmotionState {
    pub fn from_distribution(
        distribution: Vec<f64>,
        categories: &EmotionCategories,
        arousal_score: f64,
        arousal: ArousalLevel,
    ) -> Self {
        let predicted_index = argmax(&distribution);
        EmotionState {
            predicted: categories.label(predicted_index).to_string(),
            confidence: distribution[predicted_index],
            predicted_index,
            distribution,
            arousal,
            arousal_score,
        }
    }
}

/// Output of one recognition call with its stage durations.
#[derive(Debug, Clone)]
pub struct Recognition {
    pub state: EmotionState,
    pub feature_ms: f64,
    pub inference_ms: f64,
}

/// Anything that turns a segment into an [`EmotionState`].
pub trait EmotionRecognizer: Send + Sync {
    fn categories(&self) -> &EmotionCategories;

    fn recognize(
        &self,
        segment: &AudioSegment,
        scratch: &mut Scratch<f32>,
        clock: &dyn Clock,
    ) -> Result<Recognition, EmotionError>;
}

/// Agent 1: DSP front end plus the CNN.
#[derive(Debug, Clone)]
pub struct EmotionAgent {
    extractor: FeatureExtractor,
    network: Network<f32>,
    categories: EmotionCategories,
    arousal: ArousalConfig,
    mode: InputMode,
}

impl EmotionAgent {
    pub fn new(
        spec: &NetworkSpec,
        weights: &WeightSet,
        categories: EmotionCategories,
        arousal: ArousalConfig,
    ) -> Result<Self, EmotionError> {
        let extractor = FeatureExtractor::canonical();
        let mode = match spec.input_channels {
            1 => InputMode::MelOnly,
            3 => InputMode::Stacked,
            c => return Err(NnError::InvalidSpec(alloc::format!("unsupported input channel count {c}")).into()),
        };
        if spec.input_height != extractor.mel_config().n_mels {
            return Err(NnError::ShapeMismatch(alloc::format!(
                "network expects height {}, features have {}",
                spec.input_height,
                extractor.mel_config().n_mels
            ))
            .into());
        }
        if spec.classes() != categories.len() {
            return Err(NnError::ShapeMismatch(alloc::format!(
                "network has {} classes, category set has {}",
                spec.classes(),
                categories.len()
            ))
            .into());
        }
        weights.check_against(spec)?;
        let network = Network::from_weights(spec, weights)?;
        Ok(EmotionAgent { extractor, network, categories, arousal, mode })
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn arousal_config(&self) -> &ArousalConfig {
        &self.arousal
    }

    pub fn features(&self, segment: &AudioSegment) -> Result<FeatureTensor, EmotionError> {
        Ok(self.extractor.build_input_tensor(segment, self.mode)?)
    }

    pub fn classify(&self, segment: &AudioSegment, scratch: &mut Scratch<f32>) -> Result<EmotionState, EmotionError> {
        Ok(self.recognize(segment, scratch, &crate::pipeline::NoClock)?.state)
    }
}

impl EmotionRecognizer for EmotionAgent {
    fn categories(&self) -> &EmotionCategories {
        &self.categories
    }

    fn recognize(
        &self,
        segment: &AudioSegment,
        scratch: &mut Scratch<f32>,
        clock: &dyn Clock,
    ) -> Result<Recognition, EmotionError> {
        let t0 = clock.now_ms();
        let tensor = self.features(segment)?;
        let (score, level) = estimate_arousal(&self.extractor, segment.samples(), &self.arousal)?;
        let t1 = clock.now_ms();
        let probs = self.network.forward(&tensor, scratch)?;
        let distribution: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
        let t2 = clock.now_ms();
        Ok(Recognition {
            state: EmotionState::from_distribution(distribution, &self.categories, score, level),
            feature_ms: t1 - t0,
            inference_ms: t2 - t1,
        })
    }
}

/// Replays a fixed list of (category index, arousal) decisions in order,
/// wrapping around; for driving the downstream agents without a model.
#[derive(Debug)]
pub struct ScriptedRecognizer {
    categories: EmotionCategories,
    script: Vec<(usize, ArousalLevel)>,
    next: AtomicUsize,
}

impl ScriptedRecognizer {
    pub fn new(categories: EmotionCategories, script: Vec<(usize, ArousalLevel)>) -> Result<Self, EmotionError> {
        if script.is_empty() || script.iter().any(|&(c, _)| c >= categories.len()) {
            return Err(EmotionError::InvalidCategories("script is empty or names an unknown class".into()));
        }
        Ok(ScriptedRecognizer { categories, script, next: AtomicUsize::new(0) })
    }

    /// Every (category, arousal) pair, categories outermost.
    pub fn all_pairs(categories: EmotionCategories) -> Self {
        let script = (0..categories.len()).flat_map(|c| ArousalLevel::ALL.map(|a| (c, a))).collect();
        ScriptedRecognizer { categories, script, next: AtomicUsize::new(0) }
    }

    pub fn state(&self, class: usize, arousal: ArousalLevel) -> EmotionState {
        let mut dist = alloc::vec![0.0; self.categories.len()];
        dist[class] = 1.0;
        let score = match arousal {
            ArousalLevel::Low => 0.0,
            ArousalLevel::High => 1.0,
        };
        EmotionState::from_distribution(dist, &self.categories, score, arousal)
    }
}

impl EmotionRecognizer for ScriptedRecognizer {
    fn categories(&self) -> &EmotionCategories {
        &self.categories
    }

    fn recognize(&self, _: &AudioSegment, _: &mut Scratch<f32>, _: &dyn Clock) -> Result<Recognition, EmotionError> {
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.script.len();
        let (class, arousal) = self.script[i];
        Ok(Recognition { state: self.state(class, arousal), feature_ms: 0.0, inference_ms: 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::CANONICAL_RATE;
    use crate::nn::TensorData;
    use alloc::vec;
    use proptest::prelude::*;

    fn three_seconds(f: impl Fn(usize) -> f32) -> AudioSegment {
        AudioSegment::new((0..48_000).map(f).collect(), CANONICAL_RATE, 0.0)
    }

    fn agent(ws: &WeightSet) -> EmotionAgent {
        let spec = NetworkSpec::emotion_cnn(4);
        EmotionAgent::new(&spec, ws, EmotionCategories::default(), ArousalConfig::default()).unwrap()
    }

    #[test]
    fn silence_arousal() {
        let fx = FeatureExtractor::canonical();
        let (score, level) = estimate_arousal(&fx, &[0.0; 16_000], &ArousalConfig::default()).unwrap();
        assert!((score - 1.0 / (1.0 + 3f64.exp())).abs() < 1e-12);
        assert!((score - 0.047).abs() < 5e-4);
        assert_eq!(level, ArousalLevel::Low);
    }

    #[test]
    fn full_scale_alternating_arousal() {
        let fx = FeatureExtractor::canonical();
        let x: Vec<f32> = (0..16_000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (score, level) = estimate_arousal(&fx, &x, &ArousalConfig::default()).unwrap();
        assert!((score - 1.0 / (1.0 + (-3f64).exp())).abs() < 1e-12);
        assert_eq!(level, ArousalLevel::High);
    }

    #[test]
    fn threshold_is_inclusive() {
        let cfg = ArousalConfig::default();
        assert_eq!(cfg.level(0.5), ArousalLevel::High);
        assert_eq!(cfg.level(0.5 - 1e-12), ArousalLevel::Low);
        let fx = FeatureExtractor::canonical();
        let (score, _) = estimate_arousal(&fx, &[0.0; 8000], &cfg).unwrap();
        let at = ArousalConfig { threshold: score, ..cfg };
        assert_eq!(estimate_arousal(&fx, &[0.0; 8000], &at).unwrap().1, ArousalLevel::High);
    }

    #[test]
    fn zero_weights_predict_first_category() {
        let spec = NetworkSpec::emotion_cnn(4);
        let a = agent(&WeightSet::zeros(&spec));
        let seg = three_seconds(|i| (i as f32 * 0.01).sin() * 0.3);
        let s = a.classify(&seg, &mut Scratch::new()).unwrap();
        assert_eq!(s.predicted, "sad");
        assert_eq!(s.predicted_index, 0);
        assert!(s.distribution.iter().all(|p| (p - 0.25).abs() < 1e-6));
        assert!((s.confidence - 0.25).abs() < 1e-6);
    }

    #[test]
    fn biased_weights_predict_happy() {
        let spec = NetworkSpec::emotion_cnn(4);
        let mut ws = WeightSet::zeros(&spec);
        ws.get_mut("layer12.bias").unwrap().data = TensorData::F32(vec![0.0, 0.0, 0.0, 10.0]);
        let s = agent(&ws).classify(&three_seconds(|_| 0.0), &mut Scratch::new()).unwrap();
        assert_eq!(s.predicted, "happy");
        assert!(s.confidence > 0.999);
        assert!((s.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn classify_is_deterministic() {
        let spec = NetworkSpec::emotion_cnn(4);
        let a = agent(&WeightSet::init(&spec, 5));
        let seg = three_seconds(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5);
        let mut scratch = Scratch::new();
        assert_eq!(a.classify(&seg, &mut scratch).unwrap(), a.classify(&seg, &mut scratch).unwrap());
    }

    #[test]
    fn mismatched_categories_rejected() {
        let spec = NetworkSpec::emotion_cnn(4);
        let cats = EmotionCategories::new(&["a", "b", "c"]).unwrap();
        let err = EmotionAgent::new(&spec, &WeightSet::zeros(&spec), cats, ArousalConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "ShapeMismatch");
        assert!(EmotionCategories::new(&["a", "a"]).is_err());
        assert!(EmotionCategories::new(&["a"]).is_err());
    }

    #[test]
    fn short_segment_is_reported() {
        let spec = NetworkSpec::emotion_cnn(4);
        let a = agent(&WeightSet::zeros(&spec));
        let seg = AudioSegment::new(vec![0.0; 100], CANONICAL_RATE, 0.0);
        assert_eq!(a.classify(&seg, &mut Scratch::new()).unwrap_err().kind(), "SegmentTooShort");
    }

    #[test]
    fn scripted_recognizer_cycles() {
        let r = ScriptedRecognizer::all_pairs(EmotionCategories::default());
        let seg = AudioSegment::new(vec![0.0; 10], CANONICAL_RATE, 0.0);
        let mut scratch = Scratch::new();
        let seen: Vec<(String, ArousalLevel)> = (0..9)
            .map(|_| {
                let s = r.recognize(&seg, &mut scratch, &crate::pipeline::NoClock).unwrap().state;
                (s.predicted, s.arousal)
            })
            .collect();
        assert_eq!(seen[0], ("sad".into(), ArousalLevel::Low));
        assert_eq!(seen[7], ("happy".into(), ArousalLevel::High));
        assert_eq!(seen[8], seen[0]);
    }

    proptest! {
        #[test]
        fn louder_never_lowers_arousal(seed in 0u64..1000, gain in 1.0f32..4.0) {
            let mut rng = crate::rng::SeededRng::new(seed);
            let base: Vec<f32> = (0..4000).map(|_| rng.uniform_range(-0.2, 0.2) as f32).collect();
            let loud: Vec<f32> = base.iter().map(|v| v * gain).collect();
            let fx = FeatureExtractor::canonical();
            let cfg = ArousalConfig::default();
            let (a, _) = estimate_arousal(&fx, &base, &cfg).unwrap();
            let (b, _) = estimate_arousal(&fx, &loud, &cfg).unwrap();
            prop_assert!(b >= a - 1e-12);
        }

        #[test]
        fn argmax_survives_monotone_logit_maps(logits in proptest::collection::vec(-20.0f64..20.0, 4), k in 0.1f64..5.0, c in -3.0f64..3.0) {
            let mapped: Vec<f64> = logits.iter().map(|&z| k * z + c).collect();
            let cubed: Vec<f64> = logits.iter().map(|&z| z * z * z).collect();
            prop_assert_eq!(argmax(&logits), argmax(&mapped));
            prop_assert_eq!(argmax(&logits), argmax(&cubed));
        }
    }
}
