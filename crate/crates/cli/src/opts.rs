//! Command-line surface. Most knobs can also come from a JSON config file
//! (`--config`); explicit flags win over the file, which wins over defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use demoex::demo_builder::{DemoStrategy, RobustnessMode};
use demoex::generation::TrainingConfig;
use demoex::pipeline::{PipelineConfig, RobustnessConfig, RobustnessPhase};

use crate::util::{substream, usage, CliError};

#[derive(Parser)]
#[command(
    name = "demoex",
    version,
    about = "Demonstration-enhanced, schema-guided generative event extraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus for a schema.
    Synth(SynthArgs),
    /// Build low-resource or domain-adaptation splits.
    Split(SplitArgs),
    /// Train a backend on a corpus.
    Train(TrainArgs),
    /// Extract event records for a corpus with a trained backend.
    Predict(PredictArgs),
    /// Score predictions against gold annotations (Trig-C / Arg-C micro F1).
    Score(ScoreArgs),
    /// Run the four demonstration-robustness variants and a baseline.
    Robustness(RobustnessArgs),
    /// Repeat sample/train/predict/score over several seeds; report mean ± std.
    Sweep(SweepArgs),
    /// Dump the per-type demonstrations a strategy would select.
    Demos(DemosArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Number of sentences to generate.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// kshot | ratio | domain
    #[arg(long)]
    pub mode: String,
    /// Examples per event type (kshot mode).
    #[arg(long)]
    pub k: Option<usize>,
    /// Fraction of the corpus to keep (ratio mode).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Sampling population for ratio mode: full | event-bearing.
    #[arg(long, default_value = "full")]
    pub population: String,
    /// Source-domain size in event types (domain mode).
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Train fraction per side (domain mode).
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Knobs shared by train, predict, robustness, and sweep.
#[derive(Args, Clone)]
pub struct TrainCommonArgs {
    /// toy | echo | adapter:<path>
    #[arg(long)]
    pub backend: Option<String>,
    /// rich-role | rich-context | similar
    #[arg(long)]
    pub strategy: Option<String>,
    /// Eliminate demonstrations (ablation).
    #[arg(long)]
    pub no_demo: bool,
    /// Replace label words with indexed placeholders (ablation).
    #[arg(long)]
    pub label_blind: bool,
    /// With --label-blind: keep real labels in targets (prompts only).
    #[arg(long)]
    pub keep_target_labels: bool,
    /// Run per-type generations of a sentence in parallel.
    #[arg(long)]
    pub parallel: bool,
    /// Negative sampling rate m.
    #[arg(long = "m")]
    pub negative_rate: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub warmup: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_target_len: Option<usize>,
    /// Negatives for event-free sentences (0 = strict m-times-positives).
    #[arg(long)]
    pub event_free_negatives: Option<usize>,
    /// Decoding beam width (bundled backends implement 1).
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file mirroring these flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// perturb | drop
    #[arg(long)]
    pub robustness_mode: Option<String>,
    #[arg(long)]
    pub robustness_fraction: Option<f64>,
    /// train | test | both
    #[arg(long)]
    pub robustness_phase: Option<String>,
}

/// The config-file mirror of [`TrainCommonArgs`].
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    strategy: Option<String>,
    no_demo: Option<bool>,
    label_blind: Option<bool>,
    keep_target_labels: Option<bool>,
    parallel: Option<bool>,
    m: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f32>,
    warmup: Option<f32>,
    batch: Option<usize>,
    max_target_len: Option<usize>,
    event_free_negatives: Option<usize>,
    beam: Option<usize>,
    seed: Option<u64>,
    robustness_mode: Option<String>,
    robustness_fraction: Option<f64>,
    robustness_phase: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Toy,
    Echo,
    Adapter(PathBuf),
}

impl std::fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendChoice::Toy => write!(f, "toy"),
            BackendChoice::Echo => write!(f, "echo"),
            BackendChoice::Adapter(p) => write!(f, "adapter:{}", p.display()),
        }
    }
}

/// Everything a command needs after flag/file/default merging.
pub struct Resolved {
    pub backend: BackendChoice,
    pub seed: u64,
    pub config: PipelineConfig,
}

impl TrainCommonArgs {
    /// Merges flags over the config file over defaults. `adaptation` keeps
    /// the 45-epoch schedule when epochs are not set explicitly.
    pub fn resolve(&self, adaptation: bool) -> Result<Resolved, CliError> {
        let file: FileConfig = match &self.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
                serde_json::from_str(&raw)
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let backend_str = self
            .backend
            .clone()
            .or(file.backend)
            .unwrap_or_else(|| "toy".to_string());
        let backend = parse_backend(&backend_str)?;

        let strategy_str = self
            .strategy
            .clone()
            .or(file.strategy)
            .unwrap_or_else(|| "rich-role".to_string());
        let strategy: DemoStrategy = strategy_str.parse().map_err(usage)?;

        let seed = self.seed.or(file.seed).unwrap_or(42);

        // The paper-style defaults assume a pretrained network; a fresh toy
        // backend needs the from-scratch preset. Adaptation runs default to
        // the 45-epoch schedule.
        let mut training = if backend == BackendChoice::Toy {
            TrainingConfig::toy()
        } else {
            TrainingConfig::default()
        };
        if adaptation {
            training.epochs = TrainingConfig::adaptation().epochs;
        }
        if let Some(m) = self.negative_rate.or(file.m) {
            training.negative_rate = m;
        }
        if let Some(epochs) = self.epochs.or(file.epochs) {
            training.epochs = epochs;
        }
        if let Some(lr) = self.lr.or(file.lr) {
            training.learning_rate = lr;
        }
        if let Some(warmup) = self.warmup.or(file.warmup) {
            training.warmup_fraction = warmup;
        }
        if let Some(batch) = self.batch.or(file.batch) {
            training.batch_size = batch;
        }
        if let Some(len) = self.max_target_len.or(file.max_target_len) {
            training.max_target_length = len;
        }
        if let Some(n) = self.event_free_negatives.or(file.event_free_negatives) {
            training.event_free_negatives = n;
        }
        if let Some(beam) = self.beam.or(file.beam) {
            training.beam_width = beam;
        }
        training.seed = substream(seed, "train");
        if let Err(e) = training.validate() {
            return Err(usage(e));
        }

        let robustness = match self
            .robustness_mode
            .clone()
            .or(file.robustness_mode)
            .as_deref()
        {
            None => None,
            Some(mode_str) => {
                let mode = match mode_str {
                    "perturb" => RobustnessMode::Perturb,
                    "drop" => RobustnessMode::Drop,
                    other => return Err(usage(format!("unknown robustness mode '{other}'"))),
                };
                let phase = match self
                    .robustness_phase
                    .clone()
                    .or(file.robustness_phase.clone())
                    .as_deref()
                    .unwrap_or("test")
                {
                    "train" => RobustnessPhase::Train,
                    "test" => RobustnessPhase::Test,
                    "both" => RobustnessPhase::Both,
                    other => return Err(usage(format!("unknown robustness phase '{other}'"))),
                };
                let fraction = self
                    .robustness_fraction
                    .or(file.robustness_fraction)
                    .unwrap_or(0.4);
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(usage(format!(
                        "robustness fraction must lie in [0, 1], got {fraction}"
                    )));
                }
                Some(RobustnessConfig {
                    mode,
                    fraction,
                    phase,
                    seed: substream(seed, "robustness"),
                })
            }
        };

        let config = PipelineConfig {
            strategy,
            use_demo: !(self.no_demo || file.no_demo.unwrap_or(false)),
            label_blind: self.label_blind || file.label_blind.unwrap_or(false),
            label_blind_targets: !(self.keep_target_labels
                || file.keep_target_labels.unwrap_or(false)),
            robustness,
            parallel: self.parallel || file.parallel.unwrap_or(false),
            training,
        };
        Ok(Resolved {
            backend,
            seed,
            config,
        })
    }
}

fn parse_backend(s: &str) -> Result<BackendChoice, CliError> {
    match s {
        "toy" => Ok(BackendChoice::Toy),
        "echo" => Ok(BackendChoice::Echo),
        other => match other.strip_prefix("adapter:") {
            Some(path) if !path.is_empty() => Ok(BackendChoice::Adapter(PathBuf::from(path))),
            _ => Err(usage(format!(
                "unknown backend '{other}' (expected toy, echo, or adapter:<path>)"
            ))),
        },
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Continue from an existing checkpoint directory (parameter-adaptive
    /// adaptation; defaults to the 45-epoch schedule).
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Checkpoint output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: TrainCommonArgs,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Corpus to extract from.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint directory (required for toy; optional for echo, which
    /// otherwise oracles over the prediction corpus's gold records).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Demonstration source corpus (defaults to the prediction corpus).
    #[arg(long)]
    pub demo_corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: TrainCommonArgs,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Report JSON output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-event-type breakdown CSV.
    #[arg(long)]
    pub by_type: Option<PathBuf>,
}

#[derive(Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long = "train")]
    pub train_corpus: PathBuf,
    #[arg(long = "eval")]
    pub eval_corpus: PathBuf,
    /// Fraction of demonstrations to perturb or drop.
    #[arg(long, default_value_t = 0.4)]
    pub fraction: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub common: TrainCommonArgs,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Full training pool to sample from.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "eval")]
    pub eval_corpus: PathBuf,
    /// k-shot sampling per seed.
    #[arg(long)]
    pub k: Option<usize>,
    /// Ratio sampling per seed.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Sampling seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub common: TrainCommonArgs,
}

#[derive(Args)]
pub struct DemosArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "rich-role")]
    pub strategy: String,
    #[arg(long)]
    pub out: PathBuf,
}
