//! End-to-end orchestration: recognize, choose a mode, generate, verify,
//! regenerate up to K attempts, and fall back to soothing defaults.

use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::audio::AudioSegment;
use crate::content::{attempt_seed, init_generator, ClampWarning, ContentConfig, ContentError, ContentParameters, GeneratorNet};
use crate::emotion::{EmotionError, EmotionRecognizer, EmotionState};
use crate::nn::Scratch;
use crate::policy::{PolicyTable, ResponseMode};
use crate::safety::{Profile, RuleSet, SafetyError, TemplateRegistry};

/// Millisecond time source. Only differences are used.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero; timings come out as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    Config(String),
    Emotion(EmotionError),
    Content(ContentError),
    Safety(SafetyError),
    /// The fallback content failed verification; nothing is emitted.
    UnsafeFallback,
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "ConfigError",
            PipelineError::Emotion(e) => e.kind(),
            PipelineError::Content(e) => e.kind(),
            PipelineError::Safety(e) => e.kind(),
            PipelineError::UnsafeFallback => "UnsafeFallback",
        }
    }

    /// True for errors caused by configuration rather than input data.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::Content(_) | PipelineError::Safety(_))
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Config(m) => write!(f, "{m}"),
            PipelineError::Emotion(e) => write!(f, "{e}"),
            PipelineError::Content(e) => write!(f, "{e}"),
            PipelineError::Safety(e) => write!(f, "{e}"),
            PipelineError::UnsafeFallback => write!(f, "fallback content failed verification"),
        }
    }
}

impl core::error::Error for PipelineError {}

impl From<EmotionError> for PipelineError {
    fn from(e: EmotionError) -> Self {
        PipelineError::Emotion(e)
    }
}

impl From<ContentError> for PipelineError {
    fn from(e: ContentError) -> Self {
        PipelineError::Content(e)
    }
}

impl From<SafetyError> for PipelineError {
    fn from(e: SafetyError) -> Self {
        PipelineError::Safety(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Generation attempts, the first included.
    pub max_iterations: usize,
    pub profile: Profile,
    pub jitter: bool,
    pub seed: u64,
    /// Skip the policy agent and always answer in [`BYPASS_MODE`].
    pub bypass_policy: bool,
    /// Emit the first generated content without verification.
    pub bypass_safety: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_iterations: 3,
            profile: Profile::Child,
            jitter: false,
            seed: 0,
            bypass_policy: false,
            bypass_safety: false,
        }
    }
}

pub const BYPASS_MODE: ResponseMode = ResponseMode::Play;

pub const FALLBACK_MODE: ResponseMode = ResponseMode::Soothing;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub feature_ms: f64,
    pub inference_ms: f64,
    pub policy_ms: f64,
    pub generation_ms: f64,
    pub verification_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.feature_ms + self.inference_ms + self.policy_ms + self.generation_ms + self.verification_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub emotion: EmotionState,
    pub mode: ResponseMode,
    pub params: ContentParameters,
    /// False only when the safety agent was bypassed.
    pub verified: bool,
    pub attempts_used: usize,
    pub used_fallback: bool,
    pub stage_timings: StageTimings,
}

/// Everything the agents need, validated together.
pub struct Pipeline {
    recognizer: Box<dyn EmotionRecognizer>,
    policy: PolicyTable,
    content: ContentConfig,
    generator: GeneratorNet,
    rules: RuleSet,
    templates: TemplateRegistry,
    config: PipelineConfig,
    warnings: alloc::vec::Vec<ClampWarning>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(
        recognizer: Box<dyn EmotionRecognizer>,
        policy: PolicyTable,
        content: ContentConfig,
        rules: RuleSet,
        templates: TemplateRegistry,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        if config.max_iterations == 0 {
            return Err(PipelineError::Config("max_iterations must be at least 1".into()));
        }
        policy.validate().map_err(|e| PipelineError::Config(alloc::format!("{e}")))?;
        rules.validate()?;
        templates.validate()?;
        let rules = rules.with_profile(config.profile);
        rules.validate()?;
        let (generator, warnings) = init_generator(&content, rules.len())?;
        for mode in ResponseMode::ALL {
            if let Some(t) = &content.defaults(mode).template_id {
                if templates.get(t).is_none() {
                    return Err(SafetyError::UnknownTemplate(t.clone()).into());
                }
            }
        }
        let fallback = rules.verify(content.defaults(FALLBACK_MODE), &templates)?;
        if !fallback.passed {
            return Err(PipelineError::Config(alloc::format!(
                "soothing defaults fail the active rules ({}); fallback would be unsafe",
                fallback.violations.iter().map(|v| v.rule_id.as_str()).collect::<alloc::vec::Vec<_>>().join(", ")
            )));
        }
        Ok(Pipeline { recognizer, policy, content, generator, rules, templates, config, warnings })
    }

    /// Shipped policy, content defaults, rules and templates.
    pub fn with_defaults(recognizer: Box<dyn EmotionRecognizer>, config: PipelineConfig) -> Result<Self, PipelineError> {
        Pipeline::new(
            recognizer,
            PolicyTable::default(),
            ContentConfig::default(),
            RuleSet::default(),
            TemplateRegistry::default(),
            config,
        )
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }

    pub fn content(&self) -> &ContentConfig {
        &self.content
    }

    pub fn generator(&self) -> &GeneratorNet {
        &self.generator
    }

    pub fn recognizer(&self) -> &dyn EmotionRecognizer {
        self.recognizer.as_ref()
    }

    pub fn warnings(&self) -> &[ClampWarning] {
        &self.warnings
    }

    pub fn session(&self) -> Session<'_> {
        Session { pipeline: self, scratch: Scratch::new(), processed: 0 }
    }

    /// Processes one segment; `request` selects the jitter stream.
    pub fn process(
        &self,
        segment: &AudioSegment,
        request: u64,
        scratch: &mut Scratch<f32>,
        clock: &dyn Clock,
    ) -> Result<PipelineOutput, PipelineError> {
        let cfg = &self.config;
        let start = clock.now_ms();
        let rec = self.recognizer.recognize(segment, scratch, clock)?;
        let mut timings = StageTimings { feature_ms: rec.feature_ms, inference_ms: rec.inference_ms, ..StageTimings::default() };
        let emotion = rec.state;

        let t = clock.now_ms();
        let mode = if cfg.bypass_policy { BYPASS_MODE } else { self.policy.decide(&emotion.predicted, emotion.arousal) };
        timings.policy_ms = clock.now_ms() - t;

        let seed = |attempt: usize| cfg.jitter.then(|| attempt_seed(cfg.seed, request, attempt));
        let k = cfg.max_iterations;

        let t = clock.now_ms();
        let mut params = self.generator.generate(mode, seed(0));
        timings.generation_ms += clock.now_ms() - t;

        if cfg.bypass_safety {
            timings.total_ms = clock.now_ms() - start;
            return Ok(PipelineOutput { emotion, mode, params, verified: false, attempts_used: 1, used_fallback: false, stage_timings: timings });
        }

        let mut attempt = 0;
        loop {
            let t = clock.now_ms();
            let result = self.rules.verify(&params, &self.templates)?;
            timings.verification_ms += clock.now_ms() - t;
            if result.passed {
                timings.total_ms = clock.now_ms() - start;
                return Ok(PipelineOutput {
                    emotion,
                    mode,
                    params,
                    verified: true,
                    attempts_used: attempt + 1,
                    used_fallback: false,
                    stage_timings: timings,
                });
            }
            attempt += 1;
            if attempt >= k {
                break;
            }
            let t = clock.now_ms();
            params = self.generator.regenerate(mode, &params, &result, attempt, k, seed(attempt))?;
            timings.generation_ms += clock.now_ms() - t;
        }

        let t = clock.now_ms();
        let fallback = self.content.defaults(FALLBACK_MODE).clone();
        let ok = self.rules.verify(&fallback, &self.templates)?.passed;
        timings.verification_ms += clock.now_ms() - t;
        if !ok {
            return Err(PipelineError::UnsafeFallback);
        }
        timings.total_ms = clock.now_ms() - start;
        Ok(PipelineOutput { emotion, mode, params: fallback, verified: true, attempts_used: k, used_fallback: true, stage_timings: timings })
    }
}

/// Per-caller state: inference scratch and the request counter that keys
/// the jitter streams.
pub struct Session<'p> {
    pipeline: &'p Pipeline,
    scratch: Scratch<f32>,
    processed: u64,
}

impl Session<'_> {
    pub fn process(&mut self, segment: &AudioSegment, clock: &dyn Clock) -> Result<PipelineOutput, PipelineError> {
        let out = self.pipeline.process(segment, self.processed, &mut self.scratch, clock);
        self.processed += 1;
        out
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::CANONICAL_RATE;
    use crate::content::{default_params, Param};
    use crate::emotion::{ArousalLevel, EmotionCategories, ScriptedRecognizer};
    use alloc::vec;
    use alloc::vec::Vec;

    fn scripted(script: Vec<(usize, ArousalLevel)>) -> Box<dyn EmotionRecognizer> {
        Box::new(ScriptedRecognizer::new(EmotionCategories::default(), script).unwrap())
    }

    fn silence() -> AudioSegment {
        AudioSegment::new(vec![0.0; 100], CANONICAL_RATE, 0.0)
    }

    fn close(a: &ContentParameters, b: &ContentParameters) -> bool {
        Param::ALL.iter().all(|&p| (a.get(p) - b.get(p)).abs() < 1e-6) && a.template_id == b.template_id
    }

    #[test]
    fn happy_high_yields_amplify_defaults() {
        let p = Pipeline::with_defaults(scripted(vec![(3, ArousalLevel::High)]), PipelineConfig::default()).unwrap();
        let out = p.session().process(&silence(), &NoClock).unwrap();
        assert_eq!(out.mode, ResponseMode::Amplify);
        assert!(close(&out.params, &default_params(ResponseMode::Amplify)));
        assert_eq!(out.attempts_used, 1);
        assert!(out.verified && !out.used_fallback);
    }

    #[test]
    fn sad_low_yields_empathy_defaults() {
        let p = Pipeline::with_defaults(scripted(vec![(0, ArousalLevel::Low)]), PipelineConfig::default()).unwrap();
        let out = p.session().process(&silence(), &NoClock).unwrap();
        assert_eq!(out.mode, ResponseMode::Empathy);
        assert!(close(&out.params, &default_params(ResponseMode::Empathy)));
    }

    #[test]
    fn unsafe_fallback_config_is_rejected() {
        let mut rules = RuleSet::default();
        rules.rules[0].bound = Some(0.1);
        let cfg = PipelineConfig { max_iterations: 2, ..PipelineConfig::default() };
        let err = Pipeline::new(
            scripted(vec![(3, ArousalLevel::High)]),
            PolicyTable::default(),
            ContentConfig::default(),
            rules,
            TemplateRegistry::default(),
            cfg,
        )
        .unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
        assert!(err.is_config());
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = PipelineConfig { max_iterations: 0, ..PipelineConfig::default() };
        assert_eq!(Pipeline::with_defaults(scripted(vec![(0, ArousalLevel::Low)]), cfg).unwrap_err().kind(), "ConfigError");
    }

    fn strict(cfg: PipelineConfig) -> Pipeline {
        Pipeline::new(
            Box::new(ScriptedRecognizer::all_pairs(EmotionCategories::default())),
            PolicyTable::default(),
            ContentConfig::default(),
            RuleSet::strict(),
            TemplateRegistry::default(),
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn strict_rules_exercise_the_loop() {
        for k in 1..=4 {
            let p = strict(PipelineConfig { jitter: true, seed: 3, max_iterations: k, ..PipelineConfig::default() });
            let mut s = p.session();
            let mut regenerated = 0;
            for _ in 0..400 {
                let out = s.process(&silence(), &NoClock).unwrap();
                assert!(out.verified);
                assert!(out.attempts_used <= k);
                assert!(p.rules().verify(&out.params, p.templates()).unwrap().passed);
                if out.used_fallback {
                    assert!(close(&out.params, &default_params(ResponseMode::Soothing)));
                }
                regenerated += usize::from(out.attempts_used > 1);
            }
            if k > 1 {
                assert!(regenerated > 0);
            }
        }
    }

    #[test]
    fn final_projection_avoids_fallback_when_thresholds_alone_fail() {
        let p = strict(PipelineConfig { jitter: true, seed: 1, max_iterations: 3, ..PipelineConfig::default() });
        let mut s = p.session();
        for _ in 0..200 {
            assert!(!s.process(&silence(), &NoClock).unwrap().used_fallback);
        }
    }

    #[test]
    fn single_attempt_falls_back() {
        let p = strict(PipelineConfig { max_iterations: 1, ..PipelineConfig::default() });
        let mut s = p.session();
        let outs: Vec<PipelineOutput> = (0..8).map(|_| s.process(&silence(), &NoClock).unwrap()).collect();
        let amplify = outs.iter().find(|o| o.mode == ResponseMode::Amplify).unwrap();
        assert!(amplify.used_fallback);
        assert_eq!(amplify.attempts_used, 1);
        let empathy = outs.iter().find(|o| o.mode == ResponseMode::Empathy).unwrap();
        assert!(!empathy.used_fallback);
    }

    #[test]
    fn decisions_are_deterministic() {
        let cfg = PipelineConfig { jitter: true, seed: 11, ..PipelineConfig::default() };
        let run = || {
            let p = strict(cfg.clone());
            let mut s = p.session();
            (0..64).map(|_| s.process(&silence(), &NoClock).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bypasses() {
        let cfg = PipelineConfig { bypass_policy: true, ..PipelineConfig::default() };
        let p = Pipeline::with_defaults(scripted(vec![(0, ArousalLevel::Low)]), cfg).unwrap();
        assert_eq!(p.session().process(&silence(), &NoClock).unwrap().mode, ResponseMode::Play);

        let cfg = PipelineConfig { bypass_safety: true, jitter: true, ..PipelineConfig::default() };
        let p = strict(cfg);
        let mut s = p.session();
        let unsafe_count = (0..200)
            .map(|_| s.process(&silence(), &NoClock).unwrap())
            .filter(|o| !p.rules().verify(&o.params, p.templates()).unwrap().passed)
            .count();
        assert!(unsafe_count > 0);
    }

    struct Ticker(core::cell::Cell<f64>);

    impl Clock for Ticker {
        fn now_ms(&self) -> f64 {
            let v = self.0.get();
            self.0.set(v + 1.0);
            v
        }
    }

    #[test]
    fn stage_timings_fit_in_total() {
        let p = strict(PipelineConfig { jitter: true, ..PipelineConfig::default() });
        let mut s = p.session();
        for _ in 0..16 {
            let out = s.process(&silence(), &Ticker(core::cell::Cell::new(0.0))).unwrap();
            let t = out.stage_timings;
            assert!(t.stage_sum() <= t.total_ms + 1.0, "{t:?}");
        }
    }
}
