//! Batch quality and latency metrics over pipeline outputs.

use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;

use crate::audio::AudioSegment;
use crate::content::{ContentParameters, Param};
use crate::pipeline::{Clock, Pipeline, PipelineError, PipelineOutput, StageTimings};
use crate::policy::ResponseMode;
use crate::safety::{RuleSet, SafetyError, TemplateRegistry};

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    LengthMismatch { outputs: usize, annotations: usize },
    Pipeline(PipelineError),
    Safety(SafetyError),
}

impl MetricsError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricsError::LengthMismatch { .. } => "LengthMismatch",
            MetricsError::Pipeline(e) => e.kind(),
            MetricsError::Safety(e) => e.kind(),
        }
    }
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch { outputs, annotations } => {
                write!(f, "{annotations} annotations for {outputs} segments")
            }
            MetricsError::Pipeline(e) => write!(f, "{e}"),
            MetricsError::Safety(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Reference labels for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub mode: ResponseMode,
    pub params: Option<ContentParameters>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p/100 · n)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = libm::ceil(p / 100.0 * sorted.len() as f64) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        LatencyStats {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p95: percentile(&s, 95.0),
            p99: percentile(&s, 99.0),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageLatency {
    pub feature: LatencyStats,
    pub inference: LatencyStats,
    pub policy: LatencyStats,
    pub generation: LatencyStats,
    pub verification: LatencyStats,
    pub total: LatencyStats,
}

impl StageLatency {
    pub fn from_timings(t: &[StageTimings]) -> Self {
        let col = |f: fn(&StageTimings) -> f64| LatencyStats::from_samples(&t.iter().map(f).collect::<Vec<_>>());
        StageLatency {
            feature: col(|t| t.feature_ms),
            inference: col(|t| t.inference_ms),
            policy: col(|t| t.policy_ms),
            generation: col(|t| t.generation_ms),
            verification: col(|t| t.verification_ms),
            total: col(|t| t.total_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: &'static str,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamMae {
    pub per_field: Vec<FieldError>,
    pub mean: f64,
    /// Segments with parameter targets.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub n: usize,
    /// Fraction of outputs passing a fresh verification.
    pub compliance_rate: f64,
    /// Fraction that needed more than one attempt.
    pub regeneration_rate: f64,
    pub fallback_rate: f64,
    pub mode_consistency: Option<f64>,
    pub param_mae: Option<ParamMae>,
    pub latency: StageLatency,
}

fn fraction(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

pub fn summarize(
    outputs: &[PipelineOutput],
    rules: &RuleSet,
    templates: &TemplateRegistry,
    annotations: Option<&[Annotation]>,
) -> Result<RunMetrics, MetricsError> {
    let n = outputs.len();
    if let Some(a) = annotations {
        if a.len() != n {
            return Err(MetricsError::LengthMismatch { outputs: n, annotations: a.len() });
        }
    }
    let mut compliant = 0;
    for o in outputs {
        if rules.verify(&o.params, templates).map_err(MetricsError::Safety)?.passed {
            compliant += 1;
        }
    }
    let regenerated = outputs.iter().filter(|o| o.attempts_used > 1).count();
    let fallbacks = outputs.iter().filter(|o| o.used_fallback).count();

    let mode_consistency =
        annotations.map(|a| fraction(outputs.iter().zip(a).filter(|(o, a)| o.mode == a.mode).count(), n));

    let param_mae = annotations.and_then(|a| {
        let pairs: Vec<(&ContentParameters, &ContentParameters)> =
            outputs.iter().zip(a).filter_map(|(o, a)| a.params.as_ref().map(|t| (&o.params, t))).collect();
        if pairs.is_empty() {
            return None;
        }
        let per_field: Vec<FieldError> = Param::ALL
            .iter()
            .map(|&p| FieldError {
                field: p.name(),
                mae: pairs.iter().map(|(g, t)| (g.get(p) - t.get(p)).abs()).sum::<f64>() / pairs.len() as f64,
            })
            .collect();
        let mean = per_field.iter().map(|f| f.mae).sum::<f64>() / per_field.len() as f64;
        Some(ParamMae { per_field, mean, n: pairs.len() })
    });

    let timings: Vec<StageTimings> = outputs.iter().map(|o| o.stage_timings).collect();
    Ok(RunMetrics {
        n,
        compliance_rate: fraction(compliant, n),
        regeneration_rate: fraction(regenerated, n),
        fallback_rate: fraction(fallbacks, n),
        mode_consistency,
        param_mae,
        latency: StageLatency::from_timings(&timings),
    })
}

/// Runs every segment through one session and summarizes.
pub fn run_batch(
    pipeline: &Pipeline,
    segments: &[AudioSegment],
    annotations: Option<&[Annotation]>,
    clock: &dyn Clock,
) -> Result<(Vec<PipelineOutput>, RunMetrics), MetricsError> {
    if let Some(a) = annotations {
        if a.len() != segments.len() {
            return Err(MetricsError::LengthMismatch { outputs: segments.len(), annotations: a.len() });
        }
    }
    let mut session = pipeline.session();
    let outputs = segments
        .iter()
        .map(|s| session.process(s, clock))
        .collect::<Result<Vec<_>, _>>()
        .map_err(MetricsError::Pipeline)?;
    let metrics = summarize(&outputs, pipeline.rules(), pipeline.templates(), annotations)?;
    Ok((outputs, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::CANONICAL_RATE;
    use crate::content::ContentConfig;
    use crate::emotion::{EmotionCategories, ScriptedRecognizer};
    use crate::pipeline::{NoClock, PipelineConfig};
    use crate::policy::PolicyTable;
    use alloc::boxed::Box;
    use alloc::vec;
    use proptest::prelude::*;

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

    fn segments(n: usize) -> Vec<AudioSegment> {
        (0..n).map(|_| AudioSegment::new(vec![0.0; 10], CANONICAL_RATE, 0.0)).collect()
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[3.0, 1.0 + 1.0, 5.0][..1], 50.0), 3.0);
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.mean, s.p95, s.p99, s.max), (2.5, 4.0, 4.0, 4.0));
    }

    #[test]
    fn self_annotations_are_perfect() {
        let p = strict(PipelineConfig::default());
        let (outs, _) = run_batch(&p, &segments(16), None, &NoClock).unwrap();
        let ann: Vec<Annotation> = outs.iter().map(|o| Annotation { mode: o.mode, params: Some(o.params.clone()) }).collect();
        let p = strict(PipelineConfig::default());
        let (_, m) = run_batch(&p, &segments(16), Some(&ann), &NoClock).unwrap();
        assert_eq!(m.mode_consistency, Some(1.0));
        assert_eq!(m.param_mae.unwrap().mean, 0.0);
        assert_eq!(m.compliance_rate, 1.0);
    }

    #[test]
    fn regeneration_rate_matches_recount() {
        let p = strict(PipelineConfig { jitter: true, seed: 2, ..PipelineConfig::default() });
        let (outs, m) = run_batch(&p, &segments(500), None, &NoClock).unwrap();
        let recount = outs.iter().filter(|o| o.attempts_used > 1).count() as f64 / 500.0;
        assert_eq!(m.regeneration_rate, recount);
        assert!(m.regeneration_rate > 0.0);
        assert_eq!(m.compliance_rate, 1.0);
    }

    #[test]
    fn length_mismatch() {
        let p = strict(PipelineConfig::default());
        let ann = vec![Annotation { mode: ResponseMode::Play, params: None }];
        assert_eq!(run_batch(&p, &segments(2), Some(&ann), &NoClock).unwrap_err().kind(), "LengthMismatch");
    }

    #[test]
    fn policy_bypass_lowers_consistency() {
        let full = strict(PipelineConfig::default());
        let (outs, _) = run_batch(&full, &segments(8), None, &NoClock).unwrap();
        let ann: Vec<Annotation> = outs.iter().map(|o| Annotation { mode: o.mode, params: None }).collect();
        let bypass = strict(PipelineConfig { bypass_policy: true, ..PipelineConfig::default() });
        let (_, m) = run_batch(&bypass, &segments(8), Some(&ann), &NoClock).unwrap();
        assert!(m.mode_consistency.unwrap() < 1.0);
    }

    proptest! {
        #[test]
        fn p95_never_exceeds_p99(v in proptest::collection::vec(0.0f64..1e3, 1..300)) {
            let s = LatencyStats::from_samples(&v);
            prop_assert!(s.p95 <= s.p99);
            prop_assert!(s.p99 <= s.max);
        }
    }
}
