use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use speechprune_core::{Method, Mode};

#[derive(Debug, Parser)]
#[command(name = "speechprune", version, about = "Training-free speech-token pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune the speech tokens of an SPB1 bundle.
    Prune(PruneArgs),
    /// Write a synthetic needle-in-a-haystack bundle.
    Synth(SynthArgs),
    /// Run a needle-retention sweep over synthetic bundles.
    Eval(EvalArgs),
    /// Report modelled prefill FLOPs across audio-token counts.
    Cost(CostArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
    /// Both files, next to each other (eval only).
    Both,
}

// Every struct below is serialized and laid over the --config file, so flag
// names and config keys are the same words. Unset options serialize to null
// and are skipped during the overlay.

#[derive(Debug, Args, Serialize)]
pub struct PruneArgs {
    /// Input bundle (.spb).
    pub input: Option<PathBuf>,
    /// JSON file of defaults; explicit flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for the random baselines.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Fraction of tokens to remove, in [0, 1).
    #[arg(long)]
    pub rate: Option<f64>,
    /// both, phase1_only or phase2_only.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// speechprune, rap or rac.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub intermediate_target: Option<usize>,
    /// Tokens per frame; defaults to the bundle's tokens_per_second.
    #[arg(long)]
    pub frame_size: Option<usize>,
    /// Include per-phase scores and allocations in the JSON result.
    #[arg(long)]
    pub trace: bool,
    /// Write a pruned bundle to --output instead of a result report.
    #[arg(long)]
    pub emit_bundle: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SpecArgs {
    #[arg(long)]
    pub n_tokens: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub proj_dim: Option<usize>,
    #[arg(long)]
    pub n_text: Option<usize>,
    #[arg(long)]
    pub tokens_per_second: Option<usize>,
    #[arg(long)]
    pub needle_length: Option<usize>,
    #[arg(long)]
    pub needle_snr: Option<f32>,
    #[arg(long)]
    pub noise_scale: Option<f32>,
    #[arg(long)]
    pub attn_coupling: Option<f32>,
    /// Bundle seed; eval uses seed + trial for each trial.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Bundle path to write.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Report path; with --format both, the .csv and .json siblings of it.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<Mode>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub intermediate_target: Option<usize>,
    #[arg(long)]
    pub frame_size: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CostArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub n_layers: Option<u64>,
    #[arg(long)]
    pub hidden_dim: Option<u64>,
    #[arg(long)]
    pub ffn_dim: Option<u64>,
    /// Used to derive total_params when that is not given.
    #[arg(long)]
    pub vocab_size: Option<u64>,
    #[arg(long)]
    pub total_params: Option<u64>,
    /// Fixed value; when omitted it is fitted to the reference ratios.
    #[arg(long)]
    pub non_audio_tokens: Option<u64>,
    /// Upper end of the non_audio_tokens search.
    #[arg(long)]
    pub fit_max: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub audio_tokens: Option<Vec<u64>>,
    /// Embedding width used for the phase-2 overhead line.
    #[arg(long)]
    pub embed_dim: Option<u64>,
    /// Projection width used for the phase-2 overhead line.
    #[arg(long)]
    pub proj_dim: Option<u64>,
}
