//! Two-phase speech-token pruning and the random baselines it is compared
//! against.
//!
//! Phase 1 ranks speech tokens by cosine similarity to the text query and
//! spreads the budget across fixed-size frames with a softmax over frame
//! scores. Phase 2 ranks the survivors by the attention they receive under
//! sign-binarized embeddings and first-layer query/key weights.

mod alloc;
mod baseline;
mod phase1;
mod phase2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::EmbeddingBundle;
use crate::tensor::{TensorError, TieBreak};

pub use alloc::allocate;
pub use baseline::{rac_crop, rap_prune};
pub use phase1::{frame_bounds, phase1_select, Phase1Trace};
pub use phase2::{binarized_attention, phase2_select, Phase2Trace};

pub const DEFAULT_INTERMEDIATE_TARGET: usize = 750;
pub const DEFAULT_EPS_NORM: f32 = 1e-12;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("cannot keep {keep} tokens out of {available}")]
    KeepTooLarge { keep: usize, available: usize },
    #[error("text embedding has no tokens")]
    NoTextTokens,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Both,
    Phase1Only,
    Phase2Only,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Both, Mode::Phase1Only, Mode::Phase2Only];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Both => "both",
            Mode::Phase1Only => "phase1_only",
            Mode::Phase2Only => "phase2_only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected both, phase1_only or phase2_only)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Speechprune,
    Rap,
    Rac,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Speechprune, Method::Rap, Method::Rac];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Speechprune => "speechprune",
            Method::Rap => "rap",
            Method::Rac => "rac",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected speechprune, rap or rac)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Fraction of tokens removed, in `[0, 1)`.
    pub pruning_rate: f64,
    /// Phase-1 output size when the input is longer.
    pub intermediate_target: usize,
    /// Tokens per frame; the bundle's `tokens_per_second` when unset.
    pub frame_size_override: Option<usize>,
    pub mode: Mode,
    pub eps_norm: f32,
    pub tie_break: TieBreak,
    /// Only consumed by the random baselines.
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            pruning_rate: 0.0,
            intermediate_target: DEFAULT_INTERMEDIATE_TARGET,
            frame_size_override: None,
            mode: Mode::Both,
            eps_norm: DEFAULT_EPS_NORM,
            tie_break: TieBreak::LowerIndexFirst,
            seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn with_rate(rate: f64) -> Self {
        Self { pruning_rate: rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        if !(0.0..1.0).contains(&self.pruning_rate) {
            return Err(PruneError::InvalidConfig(format!("pruning rate {} is outside [0, 1)", self.pruning_rate)));
        }
        if self.intermediate_target == 0 {
            return Err(PruneError::InvalidConfig("intermediate target must be at least 1".into()));
        }
        if self.frame_size_override == Some(0) {
            return Err(PruneError::InvalidConfig("frame size must be at least 1".into()));
        }
        if !(self.eps_norm.is_finite() && self.eps_norm > 0.0) {
            return Err(PruneError::InvalidConfig("eps_norm must be positive".into()));
        }
        Ok(())
    }

    /// Phase-1 output size for an `n_tokens`-long input.
    pub fn intermediate_count(&self, n_tokens: usize) -> usize {
        n_tokens.min(self.intermediate_target)
    }

    /// Final kept count for an `n_tokens`-long input, shared by all modes.
    pub fn final_count(&self, n_tokens: usize) -> usize {
        retained_count(self.intermediate_count(n_tokens), self.pruning_rate)
    }
}

/// `round_half_up((1 - rate) · n)`, clamped to `n`.
pub fn retained_count(n: usize, rate: f64) -> usize {
    (((1.0 - rate) * n as f64 + 0.5).floor() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneResult {
    /// Ascending indices into the original speech rows.
    pub kept_final: Vec<usize>,
    pub phase1: Option<Phase1Trace>,
    pub phase2: Option<Phase2Trace>,
    pub method: Method,
    pub config: PruneConfig,
}

/// Runs the two-phase pruner (or one phase, per `config.mode`).
pub fn speechprune(bundle: &EmbeddingBundle, config: &PruneConfig) -> Result<PruneResult, PruneError> {
    config.validate()?;
    bundle.validate().map_err(|e| PruneError::InvalidConfig(format!("invalid bundle: {e}")))?;

    let n = bundle.n_tokens();
    let frame_size = config.frame_size_override.unwrap_or(bundle.tokens_per_second);
    let k1 = config.intermediate_count(n);
    let k2 = config.final_count(n);

    let (kept_final, phase1, phase2) = match config.mode {
        Mode::Both => {
            let p1 = phase1_select(&bundle.speech, &bundle.text, frame_size, k1, config.eps_norm)?;
            let survivors = bundle.speech.select_rows(&p1.kept)?;
            let mut p2 = phase2_select(&survivors, &bundle.wq, &bundle.wk, k2)?;
            p2.kept = p2.kept.iter().map(|&i| p1.kept[i]).collect();
            (p2.kept.clone(), Some(p1), Some(p2))
        }
        Mode::Phase1Only => {
            let p1 = phase1_select(&bundle.speech, &bundle.text, frame_size, k2, config.eps_norm)?;
            (p1.kept.clone(), Some(p1), None)
        }
        Mode::Phase2Only => {
            let p2 = phase2_select(&bundle.speech, &bundle.wq, &bundle.wk, k2)?;
            (p2.kept.clone(), None, Some(p2))
        }
    };

    Ok(PruneResult { kept_final, phase1, phase2, method: Method::Speechprune, config: config.clone() })
}

/// Final kept sets of [`speechprune`] for several pruning rates at once.
///
/// Phase-2 scores do not depend on the rate, so they are computed once and
/// only the top-k cut is repeated. Each entry equals
/// `kept_final` of [`speechprune`] run with that rate.
pub fn speechprune_sweep(bundle: &EmbeddingBundle, config: &PruneConfig, rates: &[f64]) -> Result<Vec<Vec<usize>>, PruneError> {
    let configs: Vec<PruneConfig> = rates.iter().map(|&r| PruneConfig { pruning_rate: r, ..config.clone() }).collect();
    for c in &configs {
        c.validate()?;
    }
    bundle.validate().map_err(|e| PruneError::InvalidConfig(format!("invalid bundle: {e}")))?;
    let n = bundle.n_tokens();
    let frame_size = config.frame_size_override.unwrap_or(bundle.tokens_per_second);

    let cut = |scores: &[f32], origin: Option<&[usize]>, keep: usize| -> Result<Vec<usize>, PruneError> {
        let local = crate::tensor::topk_indices(scores, keep, config.tie_break)?;
        Ok(match origin {
            Some(o) => local.into_iter().map(|i| o[i]).collect(),
            None => local,
        })
    };

    match config.mode {
        Mode::Both => {
            let p1 = phase1_select(&bundle.speech, &bundle.text, frame_size, config.intermediate_count(n), config.eps_norm)?;
            let survivors = bundle.speech.select_rows(&p1.kept)?;
            let scores = phase2_select(&survivors, &bundle.wq, &bundle.wk, 0)?.token_scores;
            configs.iter().map(|c| cut(&scores, Some(&p1.kept), c.final_count(n))).collect()
        }
        Mode::Phase1Only => configs
            .iter()
            .map(|c| Ok(phase1_select(&bundle.speech, &bundle.text, frame_size, c.final_count(n), c.eps_norm)?.kept))
            .collect(),
        Mode::Phase2Only => {
            let scores = phase2_select(&bundle.speech, &bundle.wq, &bundle.wk, 0)?.token_scores;
            configs.iter().map(|c| cut(&scores, None, c.final_count(n))).collect()
        }
    }
}

/// Dispatches to the pruner or one of the baselines. Baselines prune all
/// `N` tokens at `config.pruning_rate` using `config.seed`.
pub fn prune(bundle: &EmbeddingBundle, method: Method, config: &PruneConfig) -> Result<PruneResult, PruneError> {
    config.validate()?;
    let n = bundle.n_tokens();
    let kept_final = match method {
        Method::Speechprune => return speechprune(bundle, config),
        Method::Rap => rap_prune(n, config.pruning_rate, config.seed),
        Method::Rac => rac_crop(n, config.pruning_rate, config.seed),
    };
    Ok(PruneResult { kept_final, phase1: None, phase2: None, method, config: config.clone() })
}
