//! Content agent: bounded media parameters per response mode, produced by a
//! small two-layer generator and repaired after failed verification.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::emotion::logistic;
use crate::policy::ResponseMode;
use crate::rng::{mix_seed, SeededRng};
use crate::safety::{RuleKind, Target, VerificationResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Tempo,
    Volume,
    ToneSoftness,
    Brightness,
    ColorWarmth,
    AnimationSpeed,
    Sentiment,
    Formality,
}

pub const PARAM_COUNT: usize = 8;

impl Param {
    pub const ALL: [Param; PARAM_COUNT] = [
        Param::Tempo,
        Param::Volume,
        Param::ToneSoftness,
        Param::Brightness,
        Param::ColorWarmth,
        Param::AnimationSpeed,
        Param::Sentiment,
        Param::Formality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Tempo => "tempo",
            Param::Volume => "volume",
            Param::ToneSoftness => "tone_softness",
            Param::Brightness => "brightness",
            Param::ColorWarmth => "color_warmth",
            Param::AnimationSpeed => "animation_speed",
            Param::Sentiment => "sentiment",
            Param::Formality => "formality",
        }
    }

    pub fn parse(s: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Closed domain of the field.
    pub fn range(self) -> (f64, f64) {
        match self {
            Param::Tempo => (0.5, 2.0),
            Param::Sentiment => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn span(self) -> f64 {
        let (lo, hi) = self.range();
        hi - lo
    }

    /// Maps an unbounded pre-activation into the field's range.
    pub fn activate(self, z: f64) -> f64 {
        let (lo, hi) = self.range();
        let v = match self {
            Param::Sentiment => libm::tanh(z),
            _ => lo + (hi - lo) * logistic(z),
        };
        v.clamp(lo, hi)
    }

    /// Inverse of [`Param::activate`] for interior values.
    pub fn inverse(self, v: f64) -> f64 {
        match self {
            Param::Sentiment => libm::atanh(v),
            _ => {
                let (lo, hi) = self.range();
                let u = (v - lo) / (hi - lo);
                libm::log(u / (1.0 - u))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentParameters {
    pub tempo: f64,
    pub volume: f64,
    pub tone_softness: f64,
    pub brightness: f64,
    pub color_warmth: f64,
    pub animation_speed: f64,
    pub sentiment: f64,
    pub formality: f64,
    #[serde(default)]
    pub template_id: Option<String>,
}

impl ContentParameters {
    pub fn from_values(v: [f64; PARAM_COUNT], template_id: Option<String>) -> Self {
        ContentParameters {
            tempo: v[0],
            volume: v[1],
            tone_softness: v[2],
            brightness: v[3],
            color_warmth: v[4],
            animation_speed: v[5],
            sentiment: v[6],
            formality: v[7],
            template_id,
        }
    }

    pub fn values(&self) -> [f64; PARAM_COUNT] {
        [
            self.tempo,
            self.volume,
            self.tone_softness,
            self.brightness,
            self.color_warmth,
            self.animation_speed,
            self.sentiment,
            self.formality,
        ]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.values()[p.index()]
    }

    pub fn set(&mut self, p: Param, value: f64) {
        let mut v = self.values();
        v[p.index()] = value;
        let t = self.template_id.take();
        *self = ContentParameters::from_values(v, t);
    }

    /// First field that is non-finite or outside its domain.
    pub fn out_of_range(&self) -> Option<Param> {
        Param::ALL.into_iter().find(|&p| {
            let (lo, hi) = p.range();
            let v = self.get(p);
            !(v >= lo && v <= hi)
        })
    }

    pub fn in_range(&self) -> bool {
        self.out_of_range().is_none()
    }
}

fn params(v: [f64; PARAM_COUNT], template: &str) -> ContentParameters {
    ContentParameters::from_values(v, Some(template.to_string()))
}

/// Per-mode defaults. Columns: tempo, volume, tone_softness, brightness,
/// color_warmth, animation_speed, sentiment, formality.
pub fn default_params(mode: ResponseMode) -> ContentParameters {
    match mode {
        ResponseMode::Empathy => params([0.7, 0.5, 0.8, 0.6, 0.8, 0.3, 0.1, 0.5], "gentle_presence"),
        ResponseMode::Soothing => params([0.6, 0.4, 0.9, 0.5, 0.7, 0.2, 0.3, 0.5], "slow_breathing"),
        ResponseMode::Play => params([1.0, 0.7, 0.5, 0.7, 0.5, 0.6, 0.6, 0.3], "playful_rhythm"),
        ResponseMode::Amplify => params([1.3, 0.8, 0.4, 0.9, 0.6, 0.8, 0.8, 0.2], "bright_celebration"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentError {
    SchemaError { line: usize, column: usize, message: String },
    DefaultOutOfRange { mode: ResponseMode, param: Param, value: f64 },
    NoViolations,
    InvalidAttempt(usize),
}

impl ContentError {
    pub fn kind(&self) -> &'static str {
        match self {
            ContentError::SchemaError { .. } => "SchemaError",
            ContentError::DefaultOutOfRange { .. } => "DefaultOutOfRange",
            ContentError::NoViolations => "NoViolations",
            ContentError::InvalidAttempt(_) => "InvalidAttempt",
        }
    }
}

impl fmt::Display for ContentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContentError::SchemaError { line, column, message } => {
                write!(f, "content document line {line} column {column}: {message}")
            }
            ContentError::DefaultOutOfRange { mode, param, value } => {
                write!(f, "{mode} default {} = {value} is outside {:?}", param.name(), param.range())
            }
            ContentError::NoViolations => write!(f, "regeneration requested for content that passed verification"),
            ContentError::InvalidAttempt(a) => write!(f, "regeneration attempt {a} is not in 1..K"),
        }
    }
}

impl core::error::Error for ContentError {}

/// Per-mode defaults for all parameters and the template each mode uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentConfig {
    pub empathy: ContentParameters,
    pub soothing: ContentParameters,
    pub play: ContentParameters,
    pub amplify: ContentParameters,
}

impl Default for ContentConfig {
    fn default() -> Self {
        ContentConfig {
            empathy: default_params(ResponseMode::Empathy),
            soothing: default_params(ResponseMode::Soothing),
            play: default_params(ResponseMode::Play),
            amplify: default_params(ResponseMode::Amplify),
        }
    }
}

impl ContentConfig {
    pub fn defaults(&self, mode: ResponseMode) -> &ContentParameters {
        match mode {
            ResponseMode::Empathy => &self.empathy,
            ResponseMode::Soothing => &self.soothing,
            ResponseMode::Play => &self.play,
            ResponseMode::Amplify => &self.amplify,
        }
    }

    pub fn validate(&self) -> Result<(), ContentError> {
        for mode in ResponseMode::ALL {
            if let Some(param) = self.defaults(mode).out_of_range() {
                let value = self.defaults(mode).get(param);
                return Err(ContentError::DefaultOutOfRange { mode, param, value });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("content config serializes")
    }
}

pub fn load_content_config(document: &str) -> Result<ContentConfig, ContentError> {
    let cfg: ContentConfig = serde_json::from_str(document).map_err(|e| ContentError::SchemaError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Margin kept from the endpoints when inverting a default that sits exactly
/// on one.
pub const ENDPOINT_MARGIN: f64 = 1e-4;

/// Half-width of the uniform noise added to output pre-activations.
pub const DEFAULT_JITTER: f64 = 0.25;

/// Fraction of a field's span kept between a repaired value and the bound it
/// violated.
pub const PROJECTION_MARGIN: f64 = 0.05;

pub const HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ClampWarning {
    pub mode: ResponseMode,
    pub param: Param,
    pub value: f64,
    pub clamped_to: f64,
}

impl fmt::Display for ClampWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} default {} = {} sits on a range endpoint; generator reproduces {}",
            self.mode,
            self.param.name(),
            self.value,
            self.clamped_to
        )
    }
}

/// Two-layer generator: `[one-hot mode | previous params | violation mask]`
/// through a ReLU hidden layer to eight range-squashed outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    mask_width: usize,
    /// `[inputs][HIDDEN]`
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// `[HIDDEN][PARAM_COUNT]`
    w2: Vec<f64>,
    b2: Vec<f64>,
    templates: [Option<String>; 4],
    pub jitter: f64,
}

impl GeneratorNet {
    pub fn input_width(mask_width: usize) -> usize {
        ResponseMode::ALL.len() + PARAM_COUNT + mask_width
    }

    pub fn mask_width(&self) -> usize {
        self.mask_width
    }

    /// Random weights, for exercising range closure.
    pub fn random(config: &ContentConfig, mask_width: usize, seed: u64, scale: f64) -> Self {
        let mut rng = SeededRng::new(seed);
        let n_in = Self::input_width(mask_width);
        let mut draw = |n: usize| (0..n).map(|_| scale * rng.normal()).collect::<Vec<f64>>();
        GeneratorNet {
            mask_width,
            w1: draw(n_in * HIDDEN),
            b1: draw(HIDDEN),
            w2: draw(HIDDEN * PARAM_COUNT),
            b2: draw(PARAM_COUNT),
            templates: ResponseMode::ALL.map(|m| config.defaults(m).template_id.clone()),
            jitter: DEFAULT_JITTER,
        }
    }

    fn logits(&self, input: &[f64]) -> [f64; PARAM_COUNT] {
        let mut hidden = self.b1.clone();
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w1[i * HIDDEN..(i + 1) * HIDDEN];
            for (h, &w) in hidden.iter_mut().zip(row) {
                *h += x * w;
            }
        }
        let mut z = [0.0; PARAM_COUNT];
        z.copy_from_slice(&self.b2);
        for (j, &h) in hidden.iter().enumerate() {
            if h <= 0.0 {
                continue;
            }
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += h * self.w2[j * PARAM_COUNT + k];
            }
        }
        z
    }

    fn emit(&self, mode: ResponseMode, input: &[f64], jitter_seed: Option<u64>) -> ContentParameters {
        let mut z = self.logits(input);
        if let Some(seed) = jitter_seed {
            let mut rng = SeededRng::new(seed);
            for zk in z.iter_mut() {
                *zk += rng.uniform_range(-self.jitter, self.jitter);
            }
        }
        let mut v = [0.0; PARAM_COUNT];
        for p in Param::ALL {
            v[p.index()] = p.activate(z[p.index()]);
        }
        ContentParameters::from_values(v, self.templates[mode.index()].clone())
    }

    fn input(&self, mode: ResponseMode, previous: Option<&ContentParameters>, mask: &[u8]) -> Vec<f64> {
        let mut x = vec![0.0; Self::input_width(self.mask_width)];
        x[mode.index()] = 1.0;
        if let Some(prev) = previous {
            for p in Param::ALL {
                let (lo, _) = p.range();
                x[4 + p.index()] = (prev.get(p) - lo) / p.span();
            }
        }
        for (slot, &m) in x[4 + PARAM_COUNT..].iter_mut().zip(mask) {
            *slot = m as f64;
        }
        x
    }

    /// Forward pass for a fresh request.
    pub fn generate(&self, mode: ResponseMode, jitter_seed: Option<u64>) -> ContentParameters {
        self.emit(mode, &self.input(mode, None, &[]), jitter_seed)
    }

    /// Repair after a failed verification. Attempts before the last run the
    /// generator with the previous parameters and violation mask as extra
    /// inputs; the last attempt (`attempt == max_iterations - 1`) instead
    /// pulls every violated field back inside its bound and drops a
    /// rejected template.
    pub fn regenerate(
        &self,
        mode: ResponseMode,
        previous: &ContentParameters,
        violations: &VerificationResult,
        attempt: usize,
        max_iterations: usize,
        jitter_seed: Option<u64>,
    ) -> Result<ContentParameters, ContentError> {
        if violations.passed {
            return Err(ContentError::NoViolations);
        }
        if attempt == 0 || attempt >= max_iterations {
            return Err(ContentError::InvalidAttempt(attempt));
        }
        if attempt + 1 < max_iterations {
            let x = self.input(mode, Some(previous), &violations.mask);
            return Ok(self.emit(mode, &x, jitter_seed));
        }
        Ok(project(previous, violations))
    }
}

/// Moves each field cited by a violated threshold to `bound ∓ margin·span`
/// (clipped to its domain) and clears a template cited by any template rule.
/// Fields without violations keep their values.
pub fn project(previous: &ContentParameters, violations: &VerificationResult) -> ContentParameters {
    let mut out = previous.clone();
    for v in &violations.violations {
        match (v.target, v.bound) {
            (Target::Param(p), Some(bound)) => {
                let (lo, hi) = p.range();
                let margin = PROJECTION_MARGIN * p.span();
                let cur = out.get(p);
                let next = match v.kind {
                    RuleKind::UpperThreshold => cur.min(bound - margin),
                    RuleKind::LowerThreshold => cur.max(bound + margin),
                    RuleKind::Blocklist => cur,
                };
                out.set(p, next.clamp(lo, hi));
            }
            (Target::TemplateRating | Target::TemplateWords, _) => out.template_id = None,
            (Target::Param(_), None) => {}
        }
    }
    out
}

/// Factory generator whose noiseless output for each mode equals that
/// mode's configured defaults. Hidden unit `j` copies the one-hot slot of
/// mode `j`; its outgoing weights hold the inverse activations of mode `j`'s
/// defaults. Weights from the previous-parameter and mask inputs are zero.
pub fn init_generator(
    config: &ContentConfig,
    mask_width: usize,
) -> Result<(GeneratorNet, Vec<ClampWarning>), ContentError> {
    config.validate()?;
    let n_in = GeneratorNet::input_width(mask_width);
    let mut w1 = vec![0.0; n_in * HIDDEN];
    let mut w2 = vec![0.0; HIDDEN * PARAM_COUNT];
    let mut warnings = Vec::new();
    for mode in ResponseMode::ALL {
        let j = mode.index();
        w1[j * HIDDEN + j] = 1.0;
        let defaults = config.defaults(mode);
        for p in Param::ALL {
            let (lo, hi) = p.range();
            let value = defaults.get(p);
            let target = if value <= lo {
                lo + ENDPOINT_MARGIN
            } else if value >= hi {
                hi - ENDPOINT_MARGIN
            } else {
                value
            };
            if target != value {
                warnings.push(ClampWarning { mode, param: p, value, clamped_to: target });
            }
            w2[j * PARAM_COUNT + p.index()] = p.inverse(target);
        }
    }
    let net = GeneratorNet {
        mask_width,
        w1,
        b1: vec![0.0; HIDDEN],
        w2,
        b2: vec![0.0; PARAM_COUNT],
        templates: ResponseMode::ALL.map(|m| config.defaults(m).template_id.clone()),
        jitter: DEFAULT_JITTER,
    };
    Ok((net, warnings))
}

/// Seed for the jitter of one attempt of one request.
pub fn attempt_seed(base: u64, request: u64, attempt: usize) -> u64 {
    mix_seed(mix_seed(base, request), attempt as u64)
}
