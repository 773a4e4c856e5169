//! Synthetic needle-in-a-haystack bundles and retention experiments.
//!
//! A bundle holds background speech tokens with no relation to the text
//! query and one contiguous needle span pulled toward the mean text
//! direction. Pruning quality is measured as the fraction of needle tokens
//! that survive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, EmbeddingBundle, NeedleSpan};
use crate::pruner::{self, Method, Mode, PruneConfig, PruneError, PruneResult};
use crate::tensor::{self, Matrix};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "method,mode,pruning_rate,trials,retention_mean,retention_std,kept_mean";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
    #[error("needle span is empty")]
    EmptyNeedle,
    #[error("bundle carries no needle span")]
    NoNeedle,
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_tokens: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub n_text: usize,
    pub tokens_per_second: usize,
    pub needle_length: usize,
    /// Norm of the text-direction component mixed into needle tokens,
    /// relative to the noise norm.
    pub needle_snr: f32,
    /// Expected norm of every token's noise vector.
    pub noise_scale: f32,
    /// Strength of the text-direction component shared by the query and key
    /// weights; zero gives purely random weights.
    pub attn_coupling: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 90 s of speech at 25 tokens/s with a 2 s needle.
    fn default() -> Self {
        Self {
            n_tokens: 2250,
            embed_dim: 128,
            proj_dim: 64,
            n_text: 8,
            tokens_per_second: 25,
            needle_length: 50,
            needle_snr: 4.0,
            noise_scale: 1.0,
            attn_coupling: 8.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let counts = [
            ("n_tokens", self.n_tokens),
            ("embed_dim", self.embed_dim),
            ("proj_dim", self.proj_dim),
            ("n_text", self.n_text),
            ("tokens_per_second", self.tokens_per_second),
            ("needle_length", self.needle_length),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(HarnessError::InvalidSpec(format!("{name} must be at least 1")));
        }
        if self.needle_length > self.n_tokens {
            return Err(HarnessError::InvalidSpec(format!(
                "needle length {} exceeds {} tokens",
                self.needle_length, self.n_tokens
            )));
        }
        if !(self.needle_snr.is_finite() && self.needle_snr >= 0.0) {
            return Err(HarnessError::InvalidSpec("needle_snr must be finite and non-negative".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(HarnessError::InvalidSpec("noise_scale must be finite and positive".into()));
        }
        if !(self.attn_coupling.is_finite() && self.attn_coupling >= 0.0) {
            return Err(HarnessError::InvalidSpec("attn_coupling must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize, scale: f32) -> Vec<f32> {
    (0..len).map(|_| rng.sample::<f32, _>(StandardNormal) * scale).collect()
}

fn unit(v: &[f32]) -> Vec<f32> {
    let norm = tensor::dot_f64(v, v).sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| (x as f64 / norm) as f32).collect()
}

/// Generates a needle bundle; deterministic in `spec`.
pub fn synth_bundle(spec: &SyntheticSpec) -> Result<EmbeddingBundle, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d, dk) = (spec.n_tokens, spec.embed_dim, spec.proj_dim);

    let text_raw = Matrix::new(spec.n_text, d, normal_vec(&mut rng, spec.n_text * d, 1.0)).expect("shape");
    let text = tensor::l2_normalize_rows(&text_raw, pruner::DEFAULT_EPS_NORM);
    let mean_text = tensor::mean_axis(&text, tensor::Axis::Rows).expect("n_text >= 1");
    let direction = unit(&mean_text);

    let start = rng.random_range(0..=n - spec.needle_length);
    let needle = NeedleSpan { start, length: spec.needle_length };

    // Per-coordinate std chosen so the noise vector has norm ≈ noise_scale.
    let coord_scale = spec.noise_scale / (d as f32).sqrt();
    let mut speech = Vec::with_capacity(n * d);
    for i in 0..n {
        let noise = normal_vec(&mut rng, d, coord_scale);
        if needle.contains(i) {
            let mixed: Vec<f32> = noise
                .iter()
                .zip(&direction)
                .map(|(&e, &u)| spec.needle_snr * spec.noise_scale * u + e)
                .collect();
            speech.extend(unit(&mixed));
        } else {
            speech.extend(noise);
        }
    }

    let shared = normal_vec(&mut rng, dk, 1.0);
    let weights = |rng: &mut ChaCha8Rng| {
        let mut w = normal_vec(rng, d * dk, 1.0);
        for (a, u) in direction.iter().enumerate() {
            for (k, s) in shared.iter().enumerate() {
                w[a * dk + k] += spec.attn_coupling * u * s;
            }
        }
        Matrix::new(d, dk, w).expect("shape")
    };
    let wq = weights(&mut rng);
    let wk = weights(&mut rng);

    let mut bundle = EmbeddingBundle::new(
        Matrix::new(n, d, speech).expect("shape"),
        text,
        wq,
        wk,
        spec.tokens_per_second,
    )?;
    bundle.needle = Some(needle);
    bundle.label = Some(if spec.needle_snr == 0.0 { "unseparated" } else { "synthetic" }.to_string());
    bundle.validate()?;
    Ok(bundle)
}

/// Fraction of the needle span present in `kept` (ascending indices).
pub fn retention_of(kept: &[usize], needle: NeedleSpan) -> Result<f64, HarnessError> {
    if needle.length == 0 {
        return Err(HarnessError::EmptyNeedle);
    }
    let lo = kept.partition_point(|&i| i < needle.start);
    let hi = kept.partition_point(|&i| i < needle.end());
    Ok((hi - lo) as f64 / needle.length as f64)
}

pub fn needle_retention(result: &PruneResult, needle: NeedleSpan) -> Result<f64, HarnessError> {
    retention_of(&result.kept_final, needle)
}

/// One row of the report: a method (and mode, for the pruner) at one rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Arm {
    pub method: Method,
    /// `None` for the random baselines.
    pub mode: Option<Mode>,
    pub pruning_rate_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    /// Applied to the pruner only.
    pub modes: Vec<Mode>,
    pub trials: usize,
    pub intermediate_target: usize,
    pub frame_size_override: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.2, 0.4, 0.6, 0.8],
            methods: vec![Method::Speechprune, Method::Rap, Method::Rac],
            modes: vec![Mode::Both],
            trials: 100,
            intermediate_target: pruner::DEFAULT_INTERMEDIATE_TARGET,
            frame_size_override: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::InvalidExperiment("trials must be at least 1".into()));
        }
        if self.rates.is_empty() || self.methods.is_empty() {
            return Err(HarnessError::InvalidExperiment("need at least one rate and one method".into()));
        }
        if self.methods.contains(&Method::Speechprune) && self.modes.is_empty() {
            return Err(HarnessError::InvalidExperiment("speechprune needs at least one mode".into()));
        }
        for &rate in &self.rates {
            self.prune_config(rate, Mode::Both, 0).validate()?;
        }
        Ok(())
    }

    fn prune_config(&self, rate: f64, mode: Mode, seed: u64) -> PruneConfig {
        PruneConfig {
            pruning_rate: rate,
            intermediate_target: self.intermediate_target,
            frame_size_override: self.frame_size_override,
            mode,
            seed,
            ..PruneConfig::default()
        }
    }

    /// Report rows in output order: rate-major, then method, then mode.
    pub fn arms(&self) -> Vec<Arm> {
        let mut arms = Vec::new();
        for rate_idx in 0..self.rates.len() {
            for &method in &self.methods {
                if method == Method::Speechprune {
                    for &mode in &self.modes {
                        arms.push(Arm { method, mode: Some(mode), pruning_rate_index: rate_idx });
                    }
                } else {
                    arms.push(Arm { method, mode: None, pruning_rate_index: rate_idx });
                }
            }
        }
        arms
    }
}

/// Baselines get a generator stream distinct from the bundle's.
pub fn baseline_seed(trial_seed: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = trial_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial outcome for every arm, in [`ExperimentConfig::arms`] order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub retention: Vec<f64>,
    pub kept: Vec<usize>,
}

pub fn run_trial(spec: &SyntheticSpec, exp: &ExperimentConfig, trial: usize) -> Result<TrialOutcome, HarnessError> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let bundle = synth_bundle(&spec.with_seed(seed))?;
    let needle = bundle.needle.ok_or(HarnessError::NoNeedle)?;
    let arms = exp.arms();

    let mut by_mode: Vec<(Mode, Vec<Vec<usize>>)> = Vec::new();
    if exp.methods.contains(&Method::Speechprune) {
        for &mode in &exp.modes {
            let cfg = exp.prune_config(0.0, mode, 0);
            by_mode.push((mode, pruner::speechprune_sweep(&bundle, &cfg, &exp.rates)?));
        }
    }

    let mut retention = Vec::with_capacity(arms.len());
    let mut kept_counts = Vec::with_capacity(arms.len());
    for arm in arms {
        let rate = exp.rates[arm.pruning_rate_index];
        let kept = match (arm.method, arm.mode) {
            (Method::Speechprune, Some(mode)) => {
                let sets = &by_mode.iter().find(|(m, _)| *m == mode).expect("mode swept").1;
                sets[arm.pruning_rate_index].clone()
            }
            (method, _) => {
                let cfg = exp.prune_config(rate, Mode::Both, baseline_seed(seed));
                pruner::prune(&bundle, method, &cfg)?.kept_final
            }
        };
        retention.push(retention_of(&kept, needle)?);
        kept_counts.push(kept.len());
    }
    Ok(TrialOutcome { seed, retention, kept: kept_counts })
}

/// Runs every trial (in parallel) and returns outcomes in trial order.
pub fn run_trials(spec: &SyntheticSpec, exp: &ExperimentConfig) -> Result<Vec<TrialOutcome>, HarnessError> {
    spec.validate()?;
    exp.validate()?;
    (0..exp.trials).into_par_iter().map(|t| run_trial(spec, exp, t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub mode: Option<Mode>,
    pub pruning_rate: f64,
    pub trials: usize,
    pub retention_mean: f64,
    pub retention_std: f64,
    pub kept_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionReport {
    pub schema_version: u32,
    pub spec: SyntheticSpec,
    pub experiment: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl RetentionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.3}\n",
                r.method.as_str(),
                r.mode.map_or("-", |m| m.as_str()),
                r.pruning_rate,
                r.trials,
                r.retention_mean,
                r.retention_std,
                r.kept_mean
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn row(&self, method: Method, mode: Option<Mode>, rate: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.mode == mode && r.pruning_rate == rate)
    }
}

/// Aggregates outcomes sequentially in trial order, so the result does not
/// depend on how trials were scheduled.
pub fn aggregate(spec: &SyntheticSpec, exp: &ExperimentConfig, outcomes: &[TrialOutcome]) -> RetentionReport {
    let trials = outcomes.len();
    let rows = exp
        .arms()
        .iter()
        .enumerate()
        .map(|(a, arm)| {
            let sum: f64 = outcomes.iter().map(|o| o.retention[a]).sum();
            let mean = sum / trials as f64;
            let var = if trials > 1 {
                outcomes.iter().map(|o| (o.retention[a] - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
            } else {
                0.0
            };
            let kept_mean = outcomes.iter().map(|o| o.kept[a] as f64).sum::<f64>() / trials as f64;
            ReportRow {
                method: arm.method,
                mode: arm.mode,
                pruning_rate: exp.rates[arm.pruning_rate_index],
                trials,
                retention_mean: mean,
                retention_std: var.sqrt(),
                kept_mean,
            }
        })
        .collect();
    RetentionReport { schema_version: REPORT_SCHEMA_VERSION, spec: spec.clone(), experiment: exp.clone(), rows }
}

pub fn run_experiment(spec: &SyntheticSpec, exp: &ExperimentConfig) -> Result<RetentionReport, HarnessError> {
    let outcomes = run_trials(spec, exp)?;
    Ok(aggregate(spec, exp, &outcomes))
}
