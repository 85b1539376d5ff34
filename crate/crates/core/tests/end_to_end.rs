use emotive_core::audio::{segment_stream, AudioSegment, CANONICAL_RATE};
use emotive_core::content::ContentConfig;
use emotive_core::emotion::{ArousalConfig, EmotionAgent, EmotionCategories, ScriptedRecognizer};
use emotive_core::nn::{NetworkSpec, WeightSet};
use emotive_core::pipeline::{NoClock, Pipeline, PipelineConfig, FALLBACK_MODE};
use emotive_core::safety::{Profile, RuleSet, TemplateRegistry};
use emotive_core::synth::class_clip;
use emotive_core::{ArousalLevel, PolicyTable, ResponseMode};
use proptest::prelude::*;

fn cnn_pipeline(seed: u64, config: PipelineConfig) -> Pipeline {
    let spec = NetworkSpec::emotion_cnn(4);
    let agent =
        EmotionAgent::new(&spec, &WeightSet::init(&spec, seed), EmotionCategories::default(), ArousalConfig::default())
            .unwrap();
    Pipeline::with_defaults(Box::new(agent), config).unwrap()
}

fn strict_pipeline(script: Vec<(usize, ArousalLevel)>, config: PipelineConfig) -> Pipeline {
    let rec = ScriptedRecognizer::new(EmotionCategories::default(), script).unwrap();
    Pipeline::new(
        Box::new(rec),
        PolicyTable::default(),
        ContentConfig::default(),
        RuleSet::strict(),
        TemplateRegistry::default(),
        config,
    )
    .unwrap()
}

#[test]
fn cnn_pipeline_over_a_stream() {
    let clip = class_clip(2, 4, 7 * CANONICAL_RATE as usize, CANONICAL_RATE, 5);
    let segments = segment_stream(&clip, CANONICAL_RATE, 3.0, 3.0).unwrap();
    assert_eq!(segments.len(), 3);
    let p = cnn_pipeline(1, PipelineConfig::default());
    let mut session = p.session();
    for seg in &segments {
        let out = session.process(seg, &NoClock).unwrap();
        let total: f64 = out.emotion.distribution.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(out.verified);
        assert!((1..=3).contains(&out.attempts_used));
        assert!(p.rules().verify(&out.params, p.templates()).unwrap().passed);
    }
    assert_eq!(session.processed(), 3);
}

#[test]
fn sessions_replay_identically() {
    let cfg = PipelineConfig { jitter: true, seed: 11, ..Default::default() };
    let clip = class_clip(0, 4, 3 * CANONICAL_RATE as usize, CANONICAL_RATE, 9);
    let seg = AudioSegment::new(clip, CANONICAL_RATE, 0.0);
    let p = cnn_pipeline(4, cfg);
    let run = || {
        let mut s = p.session();
        (0..4).map(|_| s.process(&seg, &NoClock).unwrap().params).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn single_attempt_loop_falls_back_to_soothing() {
    let cfg = PipelineConfig { max_iterations: 1, ..Default::default() };
    // Happy and high arousal asks for the loudest mode, which strict child rules reject.
    let p = strict_pipeline(vec![(3, ArousalLevel::High)], cfg);
    let out = p.session().process(&AudioSegment::new(vec![0.0; 800], CANONICAL_RATE, 0.0), &NoClock).unwrap();
    assert!(out.used_fallback);
    // The reported mode stays the policy's choice; the content is the fallback.
    assert_eq!(out.mode, ResponseMode::Amplify);
    assert_eq!(&out.params, ContentConfig::default().defaults(FALLBACK_MODE));
    assert!(out.verified);
    assert!(p.rules().verify(&out.params, p.templates()).unwrap().passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strict_rules_never_emit_unsafe_content(
        class in 0usize..4,
        high in any::<bool>(),
        general in any::<bool>(),
        jitter in any::<bool>(),
        seed in any::<u64>(),
        k in 1usize..6,
    ) {
        let arousal = if high { ArousalLevel::High } else { ArousalLevel::Low };
        let profile = if general { Profile::General } else { Profile::Child };
        let cfg = PipelineConfig { max_iterations: k, profile, jitter, seed, ..Default::default() };
        let p = strict_pipeline(vec![(class, arousal)], cfg);
        let mut s = p.session();
        for _ in 0..3 {
            let out = s.process(&AudioSegment::new(vec![0.0; 800], CANONICAL_RATE, 0.0), &NoClock).unwrap();
            prop_assert!(out.verified);
            prop_assert!(out.attempts_used <= k);
            prop_assert!(p.rules().verify(&out.params, p.templates()).unwrap().passed);
            if out.used_fallback {
                prop_assert_eq!(&out.params, &ContentConfig::default().defaults(FALLBACK_MODE).clone());
            }
        }
    }
}
