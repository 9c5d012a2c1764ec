// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line surface. Every argument struct is also serializable so that
//! a run's fully resolved arguments can be stored in its manifest and
//! replayed later.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dapi_core::probe::{ProbeHead, ProbeOptimizer, ProbeTrainParams};
use dapi_core::steering::{ScalingMode, SelectionMode, SteeringConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "dapi",
    version,
    about = "Category-specific probe steering for small language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic planted-lexicon bundle.
    Synth(SynthArgs),
    /// Train the small language model on a bundle's corpus.
    TrainLm(TrainLmArgs),
    /// Featurize labelled sentences and train the category and single probes.
    TrainProbes(TrainProbesArgs),
    /// Probe similarity and vocabulary-projection reports.
    Analyze(AnalyzeArgs),
    /// Steered (or plain) greedy generation with a per-step trace.
    Generate(GenerateArgs),
    /// Generate, score and aggregate over a prompt suite.
    Eval(EvalArgs),
    /// Host the lexicon stub scorer over HTTP.
    ServeStubScorer(ServeArgs),
    /// Re-run a command from its manifest and compare outputs byte for byte.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::TrainLm(_) => "train-lm",
            Command::TrainProbes(_) => "train-probes",
            Command::Analyze(_) => "analyze",
            Command::Generate(_) => "generate",
            Command::Eval(_) => "eval",
            Command::ServeStubScorer(_) => "serve-stub-scorer",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full generator spec as JSON; overrides the desk-scale defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Labelled rows over insult/obscene/identity/threat, split by Jigsaw shares.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Labelled non-toxic rows.
    #[arg(long)]
    pub non_toxic: Option<usize>,
    #[arg(long)]
    pub prompts_per_category: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainLmArgs {
    /// Bundle directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f32,
    #[arg(long, default_value_t = 0.1)]
    pub heldout_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 32)]
    pub max_seq_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adamw,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadArg {
    Softmax,
    MultiLabel,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainProbesArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory written by `train-lm`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub warmup_ratio: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adamw)]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value_t = HeadArg::Softmax)]
    pub head: HeadArg,
    /// Seed for the split and the probe initialisation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also train an unregularized set (`probes_lambda0.json`) for comparison.
    #[arg(long)]
    pub baseline: bool,
}

impl TrainProbesArgs {
    pub fn params(&self) -> ProbeTrainParams {
        ProbeTrainParams {
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_ratio: self.warmup_ratio,
            seed: self.seed,
            optimizer: match self.optimizer {
                OptimizerArg::Adamw => ProbeOptimizer::AdamW,
                OptimizerArg::Sgd => ProbeOptimizer::Sgd,
            },
            head: match self.head {
                HeadArg::Softmax => ProbeHead::Softmax,
                HeadArg::MultiLabel => ProbeHead::MultiLabel,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub probes: PathBuf,
    /// A second probe set (usually trained without the penalty) to compare against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Bundle directory; enables own/cross lexicon counts.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionArg {
    Argmax,
    Weighted,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingArg {
    Fixed,
    Dynamic,
}

impl From<ScalingArg> for ScalingMode {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Fixed => ScalingMode::Fixed,
            ScalingArg::Dynamic => ScalingMode::Dynamic,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SteerArgs {
    #[arg(long, value_enum, default_value_t = SelectionArg::Argmax)]
    pub selection: SelectionArg,
    #[arg(long, value_enum, default_value_t = ScalingArg::Dynamic)]
    pub scaling: ScalingArg,
    /// Scale under fixed scaling.
    #[arg(long, default_value_t = 17.0)]
    pub alpha: f64,
    /// Reference scale used to measure the divergence under dynamic scaling.
    #[arg(long, default_value_t = 12.5)]
    pub alpha_probe: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 25.0)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.9)]
    pub top_p: f64,
    /// 1-based block driving selection; defaults to the last block.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub max_new_tokens: usize,
    /// Skip steering when every probe is negatively similar (the default).
    #[arg(long, conflicts_with = "use_neg_cos")]
    pub pass_neg_cos: bool,
    /// Steer even when every probe is negatively similar.
    #[arg(long)]
    pub use_neg_cos: bool,
}

impl SteerArgs {
    pub fn config(&self) -> SteeringConfig {
        SteeringConfig {
            selection_mode: match self.selection {
                SelectionArg::Argmax => SelectionMode::Argmax,
                SelectionArg::Weighted => SelectionMode::WeightedSum,
                SelectionArg::Single => SelectionMode::Single,
            },
            scaling_mode: self.scaling.into(),
            alpha_fixed: self.alpha,
            alpha_probe: self.alpha_probe,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            tau: self.tau,
            top_p: self.top_p,
            use_negative_cos: self.use_neg_cos,
            intervention_layer: self.layer,
            max_new_tokens: self.max_new_tokens,
            ..SteeringConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Probe set; omit for plain greedy decoding.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Prompt text; repeatable.
    #[arg(long)]
    pub prompt: Vec<String>,
    /// Prompt file in JSON lines.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Bundle directory; uses its prompts.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub steer: SteerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Category probe set; adds the "multiple" row.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// One-row probe set; adds the "single" row.
    #[arg(long)]
    pub single: Option<PathBuf>,
    /// Scaling used for the single-probe row.
    #[arg(long, value_enum, default_value_t = ScalingArg::Fixed)]
    pub single_scaling: ScalingArg,
    /// Bundle directory: prompts, lexicons for emission rates and the stub
    /// scorer, and the corpus for perplexity.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Prompt file in JSON lines; overrides the bundle's prompts.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Remote scorer base URL; falls back to DAPI_SCORER_URL.
    #[arg(long)]
    pub scorer_url: Option<String>,
    /// Score with the in-process lexicon stub instead of a remote scorer.
    #[arg(long, conflicts_with = "scorer_url")]
    pub stub_scorer: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Corpus tokens used for perplexity; 0 skips it.
    #[arg(long, default_value_t = 1024)]
    pub ppl_tokens: usize,
    #[arg(long, default_value_t = 32)]
    pub ppl_window: usize,
    #[arg(long, default_value_t = 16)]
    pub ppl_stride: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub steer: SteerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    /// Bundle directory whose lexicons drive the scorer.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Directory for the re-run outputs; defaults to `<original>-replay`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn train_probes_defaults() {
        let cli = Cli::try_parse_from([
            "dapi",
            "train-probes",
            "--data",
            "d",
            "--model",
            "m",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::TrainProbes(a) = cli.command else {
            panic!("wrong command")
        };
        let p = a.params();
        assert_eq!(
            (p.lambda, p.epochs, p.batch_size, p.lr),
            (0.01, 20, 128, 5e-4)
        );
        assert_eq!((p.weight_decay, p.warmup_ratio), (0.01, 0.1));
    }

    #[test]
    fn steering_defaults_match_library() {
        let cli = Cli::try_parse_from(["dapi", "generate", "--model", "m", "--out", "o"]).unwrap();
        let Command::Generate(a) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(a.steer.config(), SteeringConfig::default());
    }

    #[test]
    fn neg_cos_flags_conflict() {
        let r = Cli::try_parse_from([
            "dapi",
            "generate",
            "--model",
            "m",
            "--out",
            "o",
            "--pass-neg-cos",
            "--use-neg-cos",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn command_round_trips_through_json() {
        let cli = Cli::try_parse_from([
            "dapi",
            "eval",
            "--model",
            "m",
            "--out",
            "o",
            "--stub-scorer",
            "--alpha",
            "3",
        ])
        .unwrap();
        let text = serde_json::to_string(&cli.command).unwrap();
        let back: Command = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
