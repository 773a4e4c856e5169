//! Coarse transformer-prefill FLOPs model.
//!
//! Prefill over `n` tokens costs `2·n·P` for the per-token weight matmuls
//! plus `4·n²·h·layers` for the score and value products of self-attention.
//! The model targets cost *ratios* between pruning rates; absolute numbers
//! depend on what an external counter includes and are only reported.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Audio tokens produced by 30 s of speech at 25 tokens/s.
pub const BASELINE_AUDIO_TOKENS: u64 = 750;

/// Reference TFLOPS per pruning rate for the unpruned 750-token input and the
/// pruned inputs: `(rate, tflops)`.
pub const REFERENCE_TFLOPS_BASELINE: f64 = 12.2;
pub const REFERENCE_TFLOPS: [(f64, f64); 4] = [(0.2, 10.06), (0.4, 7.93), (0.6, 5.79), (0.8, 3.66)];

pub const QWEN2_AUDIO_VOCAB: u64 = 156_032;

/// A 10-minute conversation (~15k tokens) was reported at 58.66 TFLOPS.
pub const REFERENCE_LONG_TOKENS: u64 = 15_000;
pub const REFERENCE_LONG_TFLOPS: f64 = 58.66;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("cost model field {0} must be at least 1")]
    ZeroField(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModelConfig {
    pub n_layers: u64,
    pub hidden_dim: u64,
    pub ffn_dim: u64,
    /// Weights taking part in per-token matmuls (including the LM head).
    pub total_params: u64,
    /// Text, prompt and special tokens that accompany the audio.
    pub non_audio_tokens: u64,
}

impl CostModelConfig {
    /// 32 layers, width 4096, SwiGLU width 11008, 156,032-entry vocabulary;
    /// roughly the language backbone of Qwen-2 Audio.
    pub fn qwen2_audio_like() -> Self {
        Self::from_shape(32, 4096, 11008, QWEN2_AUDIO_VOCAB)
    }

    /// Counts attention (`4h²`) and gated-MLP (`3h·ffn`) weights per layer
    /// plus the output head. Saturates instead of overflowing.
    pub fn from_shape(n_layers: u64, hidden_dim: u64, ffn_dim: u64, vocab_size: u64) -> Self {
        let per_layer = hidden_dim
            .saturating_mul(hidden_dim)
            .saturating_mul(4)
            .saturating_add(hidden_dim.saturating_mul(ffn_dim).saturating_mul(3));
        Self {
            n_layers,
            hidden_dim,
            ffn_dim,
            total_params: n_layers.saturating_mul(per_layer).saturating_add(hidden_dim.saturating_mul(vocab_size)),
            non_audio_tokens: 1,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("total_params", self.total_params),
            ("non_audio_tokens", self.non_audio_tokens),
        ] {
            if v == 0 {
                return Err(CostError::ZeroField(name));
            }
        }
        Ok(())
    }
}

pub fn prefill_flops(config: &CostModelConfig, n_audio_tokens: u64) -> u128 {
    let n = n_audio_tokens as u128 + config.non_audio_tokens as u128;
    let linear = (2 * n).saturating_mul(config.total_params as u128);
    let attention = (4 * n)
        .saturating_mul(n)
        .saturating_mul(config.hidden_dim as u128)
        .saturating_mul(config.n_layers as u128);
    linear.saturating_add(attention)
}

/// Phase-2 cost counted as full multiply-accumulates: two `n1×D×Dk`
/// projections plus the `n1×n1×Dk` score matrix.
pub fn phase2_overhead_flops(n1: u64, embed_dim: u64, proj_dim: u64) -> u128 {
    let (n1, d, dk) = (n1 as u128, embed_dim as u128, proj_dim as u128);
    let projections = (4 * n1).saturating_mul(d).saturating_mul(dk);
    projections.saturating_add((2 * n1).saturating_mul(n1).saturating_mul(dk))
}

pub fn flops_ratio(config: &CostModelConfig, n_audio_tokens: u64, baseline_audio_tokens: u64) -> f64 {
    prefill_flops(config, n_audio_tokens) as f64 / prefill_flops(config, baseline_audio_tokens) as f64
}

/// Audio-token count left after pruning the 750-token baseline at `rate`.
pub fn audio_tokens_at(rate: f64) -> u64 {
    crate::pruner::retained_count(BASELINE_AUDIO_TOKENS as usize, rate) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioFit {
    pub non_audio_tokens: u64,
    pub max_abs_error: f64,
}

/// Grid search over `non_audio_tokens ∈ [1, max]` minimising the worst
/// absolute gap between modelled and reference FLOPs ratios.
pub fn fit_non_audio_tokens(base: &CostModelConfig, max: u64) -> RatioFit {
    let mut best = RatioFit { non_audio_tokens: 1, max_abs_error: f64::INFINITY };
    for candidate in 1..=max {
        let cfg = CostModelConfig { non_audio_tokens: candidate, ..base.clone() };
        let err = REFERENCE_TFLOPS
            .iter()
            .map(|&(rate, tf)| {
                (flops_ratio(&cfg, audio_tokens_at(rate), BASELINE_AUDIO_TOKENS) - tf / REFERENCE_TFLOPS_BASELINE).abs()
            })
            .fold(0.0, f64::max);
        if err < best.max_abs_error {
            best = RatioFit { non_audio_tokens: candidate, max_abs_error: err };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub audio_tokens: u64,
    pub pruning_rate: Option<f64>,
    pub flops: f64,
    pub tflops: f64,
    pub ratio: f64,
    pub reference_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadLine {
    pub n1: u64,
    pub embed_dim: u64,
    pub proj_dim: u64,
    pub flops: f64,
    pub fraction_of_prefill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub schema_version: u32,
    pub config: CostModelConfig,
    pub fit: Option<RatioFit>,
    pub baseline_audio_tokens: u64,
    pub rows: Vec<CostRow>,
    pub phase2_overhead: OverheadLine,
    /// Modelled TFLOPS at 15k tokens next to the 58.66 reference. Informational.
    pub long_context_tflops: f64,
    pub long_context_reference_tflops: f64,
}

pub const COST_SCHEMA_VERSION: u32 = 1;

/// Builds the report; when `fit_max` is set, `non_audio_tokens` is refitted
/// first. Each entry of `audio_tokens` becomes a row; counts that match a
/// reference pruning rate carry its reference ratio.
pub fn cost_report(
    config: &CostModelConfig,
    fit_max: Option<u64>,
    audio_tokens: &[u64],
    overhead_dims: (u64, u64),
) -> Result<CostReport, CostError> {
    config.validate()?;
    let fit = fit_max.map(|max| fit_non_audio_tokens(config, max));
    let cfg = match &fit {
        Some(f) => CostModelConfig { non_audio_tokens: f.non_audio_tokens, ..config.clone() },
        None => config.clone(),
    };
    let baseline = prefill_flops(&cfg, BASELINE_AUDIO_TOKENS) as f64;
    let rows = audio_tokens
        .iter()
        .map(|&a| {
            let reference = REFERENCE_TFLOPS.iter().find(|&&(rate, _)| audio_tokens_at(rate) == a);
            let flops = prefill_flops(&cfg, a) as f64;
            CostRow {
                audio_tokens: a,
                pruning_rate: reference.map(|r| r.0).or((a == BASELINE_AUDIO_TOKENS).then_some(0.0)),
                flops,
                tflops: flops / 1e12,
                ratio: flops / baseline,
                reference_ratio: reference
                    .map(|r| r.1 / REFERENCE_TFLOPS_BASELINE)
                    .or((a == BASELINE_AUDIO_TOKENS).then_some(1.0)),
            }
        })
        .collect();
    let (embed_dim, proj_dim) = overhead_dims;
    let overhead = phase2_overhead_flops(BASELINE_AUDIO_TOKENS, embed_dim, proj_dim) as f64;
    Ok(CostReport {
        schema_version: COST_SCHEMA_VERSION,
        config: cfg.clone(),
        fit,
        baseline_audio_tokens: BASELINE_AUDIO_TOKENS,
        rows,
        phase2_overhead: OverheadLine {
            n1: BASELINE_AUDIO_TOKENS,
            embed_dim,
            proj_dim,
            flops: overhead,
            fraction_of_prefill: overhead / baseline,
        },
        long_context_tflops: prefill_flops(&cfg, REFERENCE_LONG_TOKENS) as f64 / 1e12,
        long_context_reference_tflops: REFERENCE_LONG_TFLOPS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CostModelConfig {
        CostModelConfig { n_layers: 2, hidden_dim: 8, ffn_dim: 16, total_params: 1000, non_audio_tokens: 1 }
    }

    #[test]
    fn unit_length_formula() {
        let c = small();
        assert_eq!(prefill_flops(&c, 0), 2 * 1000 + 4 * 8 * 2);
    }

    #[test]
    fn linear_regime_doubles() {
        let c = CostModelConfig { total_params: 1_000_000_000, ..small() };
        let r = prefill_flops(&c, 199) as f64 / prefill_flops(&c, 99) as f64;
        assert!((r - 2.0).abs() < 0.02, "{r}");
    }

    #[test]
    fn strictly_monotone() {
        let c = small();
        for n in 0..50 {
            assert!(prefill_flops(&c, n + 1) > prefill_flops(&c, n));
        }
        let base = prefill_flops(&c, 10);
        assert!(prefill_flops(&CostModelConfig { n_layers: 3, ..c.clone() }, 10) > base);
        assert!(prefill_flops(&CostModelConfig { hidden_dim: 9, ..c.clone() }, 10) > base);
        assert!(prefill_flops(&CostModelConfig { total_params: 1001, ..c.clone() }, 10) > base);
    }

    #[test]
    fn overhead_formula_and_growth() {
        assert_eq!(phase2_overhead_flops(1, 10, 3), 4 * 10 * 3 + 2 * 3);
        let r = phase2_overhead_flops(2_000_000, 8, 8) as f64 / phase2_overhead_flops(1_000_000, 8, 8) as f64;
        assert!((r - 4.0).abs() < 1e-3);
    }

    #[test]
    fn audio_token_grid() {
        let counts: Vec<u64> = REFERENCE_TFLOPS.iter().map(|r| audio_tokens_at(r.0)).collect();
        assert_eq!(counts, vec![600, 450, 300, 150]);
    }

    #[test]
    fn zero_fields_rejected() {
        let c = CostModelConfig { hidden_dim: 0, ..small() };
        assert!(cost_report(&c, None, &[750], (8, 8)).is_err());
    }
}
