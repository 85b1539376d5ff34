//! Wall-clock timing of the full pipeline.

use std::time::Instant;

use emotive_core::audio::{AudioSegment, CANONICAL_RATE};
use emotive_core::metrics::{run_batch, MetricsError, RunMetrics};
use emotive_core::pipeline::{Clock, Pipeline, PipelineOutput};
use emotive_core::rng::mix_seed;
use emotive_core::synth;

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

pub const MIN_ITERATIONS: usize = 30;
pub const SEGMENT_SECONDS: f64 = 3.0;

/// Deterministic 3 s test segments cycling through `classes` tone bands.
pub fn bench_segments(n: usize, classes: usize, seed: u64) -> Vec<AudioSegment> {
    let len = (SEGMENT_SECONDS * CANONICAL_RATE as f64) as usize;
    (0..n)
        .map(|i| {
            let clip = synth::class_clip(i % classes, classes, len, CANONICAL_RATE, mix_seed(seed, i as u64));
            AudioSegment::new(clip, CANONICAL_RATE, 0.0)
        })
        .collect()
}

#[derive(Debug)]
pub struct BenchReport {
    pub outputs: Vec<PipelineOutput>,
    pub metrics: RunMetrics,
}

/// Runs `warmup` untimed segments, then `iterations` timed ones.
pub fn run_benchmark(pipeline: &Pipeline, iterations: usize, warmup: usize, seed: u64) -> Result<BenchReport, MetricsError> {
    let classes = pipeline.recognizer().categories().len();
    let clock = MonotonicClock::new();
    let warm = bench_segments(warmup, classes, mix_seed(seed, 1));
    run_batch(pipeline, &warm, None, &clock)?;
    let segs = bench_segments(iterations, classes, seed);
    let (outputs, metrics) = run_batch(pipeline, &segs, None, &clock)?;
    Ok(BenchReport { outputs, metrics })
}
