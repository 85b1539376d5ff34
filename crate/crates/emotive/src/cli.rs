//! The `emotive` command line.
//!
//! Exit codes: 0 success, 1 domain error (audio, weights, data), 2 usage or
//! configuration error. Failures print one line `error: <Kind>: <message>`
//! on the diagnostic stream.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use emotive_core::audio::{segment_stream, AudioSegment, CANONICAL_RATE};
use emotive_core::emotion::{ArousalConfig, EmotionAgent, EmotionCategories, EmotionRecognizer, EmotionState};
use emotive_core::nn::{self, NetworkSpec, OptimizerKind, Scratch, TrainOptions, WeightSet};
use emotive_core::pipeline::{Pipeline, PipelineError, PipelineOutput};
use emotive_core::safety::Profile;
use emotive_core::dsp::{FeatureExtractor, InputMode};
use emotive_core::Param;

use crate::bench::{self, MonotonicClock, MIN_ITERATIONS, SEGMENT_SECONDS};
use crate::config::{self, ConfigBundle, ConfigError, DocumentKind};
use crate::features;
use crate::model::{self, ModelError};
use crate::wav::{self, WavError};

#[derive(Debug, Parser)]
#[command(name = "emotive", version, about = "Emotion-aware, safety-verified content parameters from audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline over each 3 s segment of a WAV file.
    Pipeline(PipelineArgs),
    /// Emotion distribution and arousal for each segment.
    Classify(ClassifyArgs),
    /// Per-frame log-mel, MFCC, centroid and ZCR as CSV.
    Features {
        wav: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the emotion CNN on class-labeled subdirectories of WAVs.
    Train(TrainArgs),
    /// Fold batch norm and quantize a weight file to INT8.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the pipeline over synthetic 3 s segments.
    Bench(BenchArgs),
    /// Print a shipped default config document.
    ExportConfig {
        #[arg(long, value_enum)]
        what: ExportKind,
    },
    /// Check a config document; reads standard input for `-` or no path.
    ValidateConfig { path: Option<PathBuf> },
    /// Write a seeded synthetic tone dataset for `train`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated class names.
        #[arg(long, default_value = "sad,angry,neutral,happy")]
        labels: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExportKind {
    Policy,
    Rules,
    Content,
    Templates,
    Bundle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Child,
    General,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputArg {
    Mel,
    Stacked,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Weight file; without one the classifier is untrained (uniform).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Comma-separated category labels in network output order.
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    wav: PathBuf,
    /// Bundle document with optional policy/rules/content/templates/pipeline sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    no_policy: bool,
    #[arg(long)]
    no_safety: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Generation attempts per segment (K >= 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: Option<u64>,
    /// Perturb generator logits on every attempt.
    #[arg(long)]
    jitter: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    wav: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, value_enum, default_value = "adamw")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Clip length every file is padded or truncated to.
    #[arg(long, default_value_t = 3.0)]
    seconds: f64,
    /// Hold out every n-th file of each class for evaluation; 0 disables.
    #[arg(long, default_value_t = 5)]
    holdout_every: usize,
    #[arg(long, value_enum, default_value = "mel")]
    input: InputArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

/// A failed command: exit code, error kind and message.
#[derive(Debug)]
struct Failure {
    code: i32,
    kind: String,
    message: String,
}

impl Failure {
    fn domain(kind: &str, message: impl ToString) -> Self {
        Failure { code: 1, kind: kind.into(), message: message.to_string() }
    }

    fn config(kind: &str, message: impl ToString) -> Self {
        Failure { code: 2, kind: kind.into(), message: message.to_string() }
    }
}

impl From<WavError> for Failure {
    fn from(e: WavError) -> Self {
        Failure::domain(e.kind(), &e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::domain(e.kind(), &e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e.kind(), &e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::config(e.kind(), &e)
        } else {
            Failure::domain(e.kind(), &e)
        }
    }
}

fn io_failure(what: &Path, e: std::io::Error) -> Failure {
    Failure::domain("IoError", format!("{}: {e}", what.display()))
}

struct Io<'a> {
    stdin: &'a mut dyn Read,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let _ = writeln!(err, "error: UsageError: {first}");
            return 2;
        }
    };
    let mut io = Io { stdin, out, err };
    match dispatch(cli.command, &mut io) {
        Ok(()) => 0,
        Err(f) => {
            let msg = f.message.replace('\n', " ");
            let _ = writeln!(io.err, "error: {}: {msg}", f.kind);
            f.code
        }
    }
}

fn dispatch(cmd: Command, io: &mut Io<'_>) -> Result<(), Failure> {
    match cmd {
        Command::Pipeline(a) => cmd_pipeline(a, io),
        Command::Classify(a) => cmd_classify(a, io),
        Command::Features { wav, out } => cmd_features(&wav, out.as_deref(), io),
        Command::Train(a) => cmd_train(a, io),
        Command::Quantize { input, out } => cmd_quantize(&input, &out, io),
        Command::Bench(a) => cmd_bench(a, io),
        Command::ExportConfig { what } => {
            let kind = match what {
                ExportKind::Policy => DocumentKind::Policy,
                ExportKind::Rules => DocumentKind::Rules,
                ExportKind::Content => DocumentKind::Content,
                ExportKind::Templates => DocumentKind::Templates,
                ExportKind::Bundle => DocumentKind::Bundle,
            };
            writeln!(io.out, "{}", config::export(kind)).map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
        Command::ValidateConfig { path } => cmd_validate(path.as_deref(), io),
        Command::Synth { out, per_class, seconds, seed, labels } => {
            let names = parse_labels(&labels)?;
            if seconds.is_nan() || seconds <= 0.0 {
                return Err(Failure::config("UsageError", "--seconds must be positive"));
            }
            model::write_synthetic_dataset(&out, names.labels(), per_class, seconds, seed)?;
            writeln!(io.out, "wrote {} clips to {}", per_class * names.len(), out.display())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn parse_labels(s: &str) -> Result<EmotionCategories, Failure> {
    let labels: Vec<&str> = s.split(',').map(str::trim).collect();
    EmotionCategories::new(&labels).map_err(|e| Failure::config(e.kind(), &e))
}

/// Builds the CNN recognizer from `--weights`/`--labels`.
fn recognizer(args: &ModelArgs, io: &mut Io<'_>) -> Result<EmotionAgent, Failure> {
    let labels = args.labels.as_deref().map(parse_labels).transpose()?;
    let (spec, weights) = match &args.weights {
        Some(path) => {
            let ws = model::read_weight_file(path)?;
            (model::infer_spec(&ws)?, ws)
        }
        None => {
            let n = labels.as_ref().map_or(4, EmotionCategories::len);
            let _ = writeln!(io.err, "warning: no --weights given; the classifier is untrained and outputs a uniform distribution");
            let spec = NetworkSpec::emotion_cnn(n);
            let ws = WeightSet::zeros(&spec);
            (spec, ws)
        }
    };
    let categories = match labels {
        Some(c) => c,
        None if spec.classes() == 4 => EmotionCategories::default(),
        None => {
            return Err(Failure::config(
                "ConfigError",
                format!("network has {} classes; pass --labels", spec.classes()),
            ))
        }
    };
    EmotionAgent::new(&spec, &weights, categories, ArousalConfig::default()).map_err(|e| {
        if e.kind() == "InvalidCategories" {
            Failure::config(e.kind(), &e)
        } else {
            Failure::domain(e.kind(), &e)
        }
    })
}

fn segments(path: &Path) -> Result<Vec<AudioSegment>, Failure> {
    let audio = wav::read_wav(path)?;
    segment_stream(audio.samples(), CANONICAL_RATE, SEGMENT_SECONDS, SEGMENT_SECONDS)
        .map_err(|e| Failure::domain(e.kind(), e))
}

fn json_line<T: serde::Serialize>(out: &mut dyn Write, v: &T) -> Result<(), Failure> {
    let s = serde_json::to_string(v).map_err(|e| Failure::domain("SerializeError", e))?;
    writeln!(out, "{s}").map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn describe_state(s: &EmotionState) -> String {
    format!(
        "emotion={} (p={:.3}) arousal={} (score={:.3})",
        s.predicted,
        s.confidence,
        s.arousal.name(),
        s.arousal_score
    )
}

fn describe_output(i: usize, start: f64, o: &PipelineOutput) -> String {
    let params: Vec<String> = Param::ALL.iter().map(|&p| format!("{}={:.3}", p.name(), o.params.get(p))).collect();
    format!(
        "segment {i} @ {start:.2}s: {} mode={} verified={} attempts={} fallback={} template={}\n  {}",
        describe_state(&o.emotion),
        o.mode,
        o.verified,
        o.attempts_used,
        o.used_fallback,
        o.params.template_id.as_deref().unwrap_or("-"),
        params.join(" ")
    )
}

fn cmd_pipeline(a: PipelineArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    let mut bundle = match &a.config {
        Some(p) => ConfigBundle::load(p)?,
        None => ConfigBundle::default(),
    };
    let cfg = &mut bundle.pipeline;
    if let Some(p) = a.profile {
        cfg.profile = match p {
            ProfileArg::Child => Profile::Child,
            ProfileArg::General => Profile::General,
        };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.max_iter {
        cfg.max_iterations = k as usize;
    }
    cfg.jitter |= a.jitter;
    cfg.bypass_policy |= a.no_policy;
    cfg.bypass_safety |= a.no_safety;

    let agent = recognizer(&a.model, io)?;
    let pipeline = Pipeline::new(
        Box::new(agent),
        bundle.policy,
        bundle.content,
        bundle.rules,
        bundle.templates,
        bundle.pipeline,
    )?;
    for w in pipeline.warnings() {
        let _ = writeln!(io.err, "warning: {w}");
    }
    let segs = segments(&a.wav)?;
    let clock = MonotonicClock::new();
    let mut session = pipeline.session();
    for (i, seg) in segs.iter().enumerate() {
        let o = session.process(seg, &clock)?;
        if a.json {
            json_line(io.out, &o)?;
        } else {
            writeln!(io.out, "{}", describe_output(i, seg.start_offset, &o))
                .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn cmd_classify(a: ClassifyArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    let agent = recognizer(&a.model, io)?;
    let segs = segments(&a.wav)?;
    let mut scratch = Scratch::new();
    for (i, seg) in segs.iter().enumerate() {
        let s = agent.classify(seg, &mut scratch).map_err(|e| Failure::domain(e.kind(), &e))?;
        if a.json {
            json_line(io.out, &s)?;
        } else {
            let dist: Vec<String> = agent
                .categories()
                .labels()
                .iter()
                .zip(&s.distribution)
                .map(|(l, p)| format!("{l}={p:.4}"))
                .collect();
            writeln!(io.out, "segment {i} @ {:.2}s: {} [{}]", seg.start_offset, describe_state(&s), dist.join(" "))
                .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn cmd_features(wav_path: &Path, out: Option<&Path>, io: &mut Io<'_>) -> Result<(), Failure> {
    let seg = wav::read_wav(wav_path)?;
    let fx = FeatureExtractor::canonical();
    let rows = features::extract(&fx, seg.samples()).map_err(|e| Failure::domain(e.kind(), e))?;
    let n_mels = fx.mel_config().n_mels;
    let result = match out {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| io_failure(p, e))?;
            features::write_csv(std::io::BufWriter::new(file), &rows, n_mels)
        }
        None => features::write_csv(&mut *io.out, &rows, n_mels),
    };
    result.map_err(|e| Failure::domain("IoError", e))
}

fn cmd_train(a: TrainArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    if a.seconds.is_nan() || a.seconds <= 0.0 {
        return Err(Failure::config("UsageError", "--seconds must be positive"));
    }
    let data = model::scan_dataset(&a.data)?;
    let mode = match a.input {
        InputArg::Mel => InputMode::MelOnly,
        InputArg::Stacked => InputMode::Stacked,
    };
    let fx = FeatureExtractor::canonical();
    let examples = model::load_examples(&data, &fx, mode, a.seconds)?;
    let (train_set, held_out) = model::split_holdout(&examples, a.holdout_every);
    let spec = NetworkSpec::emotion_cnn_with_input(fx.mel_config().n_mels, mode.channels(), data.classes.len());
    let opts = TrainOptions {
        optimizer: match a.optimizer {
            OptimizerArg::Adamw => OptimizerKind::AdamW,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        patience: a.patience,
        ..TrainOptions::default()
    };
    let json = a.json;
    let out = &mut *io.out;
    let outcome = nn::train(&spec, &train_set, &opts, |s| {
        let line = if json {
            serde_json::to_string(s).unwrap_or_default()
        } else {
            format!("epoch {:>3}  loss {:.4}  accuracy {:.4}", s.epoch, s.loss, s.accuracy)
        };
        let _ = writeln!(out, "{line}");
    })
    .map_err(|e| Failure::domain(e.kind(), &e))?;
    let net = nn::Network::<f32>::from_weights(&spec, &outcome.weights).map_err(|e| Failure::domain(e.kind(), &e))?;
    let held = if held_out.is_empty() {
        None
    } else {
        Some(nn::accuracy(&net, &held_out).map_err(|e| Failure::domain(e.kind(), &e))?)
    };
    model::write_weights(&a.out, &outcome.weights)?;
    let summary = serde_json::json!({
        "classes": data.classes,
        "best_epoch": outcome.best_epoch,
        "train_accuracy": outcome.best_accuracy,
        "held_out_accuracy": held,
        "stopped_early": outcome.stopped_early,
        "weights": a.out.display().to_string(),
    });
    if json {
        json_line(io.out, &summary)?;
    } else {
        let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| io_failure(Path::new("<stdout>"), e));
        w(io.out, format!("classes: {}", data.classes.join(",")))?;
        w(io.out, format!("best epoch {} train accuracy {:.4}", outcome.best_epoch, outcome.best_accuracy))?;
        if let Some(h) = held {
            w(io.out, format!("held-out accuracy {h:.4} over {} clips", held_out.len()))?;
        }
        w(io.out, format!("saved {}", a.out.display()))?;
    }
    Ok(())
}

fn cmd_quantize(input: &Path, out: &Path, io: &mut Io<'_>) -> Result<(), Failure> {
    let ws = model::read_weight_file(input)?;
    let spec = model::infer_spec(&ws)?;
    let q = nn::quantize_int8(&spec, &ws).map_err(|e| Failure::domain(e.kind(), &e))?;
    for name in &q.degenerate {
        let _ = writeln!(io.err, "warning: tensor {name} is all zeros; stored with scale 1");
    }
    model::write_weights(out, &q.weights)?;
    let (before, after) = (ws.payload_bytes(), q.weights.payload_bytes());
    writeln!(
        io.out,
        "payload {before} -> {after} bytes (ratio {:.4}); wrote {}",
        after as f64 / before.max(1) as f64,
        out.display()
    )
    .map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn cmd_bench(a: BenchArgs, io: &mut Io<'_>) -> Result<(), Failure> {
    if a.iterations < MIN_ITERATIONS {
        return Err(Failure::config("UsageError", format!("--iterations must be at least {MIN_ITERATIONS}")));
    }
    let bundle = match &a.config {
        Some(p) => ConfigBundle::load(p)?,
        None => ConfigBundle::default(),
    };
    let agent = recognizer(&a.model, io)?;
    let pipeline =
        Pipeline::new(Box::new(agent), bundle.policy, bundle.content, bundle.rules, bundle.templates, bundle.pipeline)?;
    let report = bench::run_benchmark(&pipeline, a.iterations, a.warmup, a.seed).map_err(|e| {
        let code = if matches!(&e, emotive_core::metrics::MetricsError::Pipeline(p) if p.is_config()) { 2 } else { 1 };
        Failure { code, kind: e.kind().into(), message: e.to_string() }
    })?;
    let m = &report.metrics;
    if a.json {
        return json_line(io.out, m);
    }
    let l = &m.latency;
    let mut lines = vec![format!("{} segments of {SEGMENT_SECONDS} s after {} warmup", m.n, a.warmup)];
    for (name, s) in [
        ("feature", l.feature),
        ("inference", l.inference),
        ("policy", l.policy),
        ("generation", l.generation),
        ("verification", l.verification),
        ("total", l.total),
    ] {
        lines.push(format!("{name:<13} mean {:>8.3} ms  p95 {:>8.3}  p99 {:>8.3}  max {:>8.3}", s.mean, s.p95, s.p99, s.max));
    }
    lines.push(format!(
        "compliance {:.4}  regeneration {:.4}  fallback {:.4}",
        m.compliance_rate, m.regeneration_rate, m.fallback_rate
    ));
    writeln!(io.out, "{}", lines.join("\n")).map_err(|e| io_failure(Path::new("<stdout>"), e))
}

fn cmd_validate(path: Option<&Path>, io: &mut Io<'_>) -> Result<(), Failure> {
    let doc = match path {
        Some(p) if p != Path::new("-") => config::read_text(p)?,
        _ => {
            let mut s = String::new();
            io.stdin.read_to_string(&mut s).map_err(|e| Failure::config("ConfigUnreadable", e))?;
            s
        }
    };
    let kind = config::validate_document(&doc)?;
    writeln!(io.out, "ok: {} document", kind.name()).map_err(|e| io_failure(Path::new("<stdout>"), e))
}
