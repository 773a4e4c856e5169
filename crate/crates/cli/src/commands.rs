use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use speechprune_core::cost::{self, CostReport};
use speechprune_core::harness::{self, ExperimentConfig};
use speechprune_core::pruner::{Phase1Trace, Phase2Trace};
use speechprune_core::{read_bundle, EmbeddingBundle, Method, Mode, NeedleSpan, PruneConfig, PruneResult};

use crate::args::{CostArgs, EvalArgs, Format, PruneArgs, SynthArgs};
use crate::error::CliError;
use crate::settings::{overlay, CostSettings, EvalSettings, PruneSettings, SynthSettings};

pub const PRUNE_SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// or to standard output when there is no path.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::io("stdout", e));
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir.display(), e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path.display(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path.display(), e.error))?;
    Ok(())
}

fn load_bundle(path: &Path) -> Result<EmbeddingBundle, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    read_bundle(BufReader::new(file)).map_err(|e| {
        let err = CliError::from(e);
        match err {
            CliError::Data { kind, message } => CliError::Data { kind, message: format!("{}: {message}", path.display()) },
            other => other,
        }
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.into()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Serialize)]
struct Counts {
    input: usize,
    phase1: Option<usize>,
    #[serde(rename = "final")]
    final_count: usize,
}

#[derive(Serialize)]
struct Phase1Summary<'a> {
    token_scores: &'a [f32],
    frame_scores: &'a [f32],
    frame_probs: &'a [f32],
    allocations: &'a [usize],
    kept: &'a [usize],
}

#[derive(Serialize)]
struct Phase2Summary<'a> {
    /// Indexed like the phase-2 input: phase-1 survivors in `both` mode.
    token_scores: &'a [f32],
    kept: &'a [usize],
}

#[derive(Serialize)]
struct Trace<'a> {
    phase1: Option<Phase1Summary<'a>>,
    phase2: Option<Phase2Summary<'a>>,
}

#[derive(Serialize)]
struct PruneReport<'a> {
    schema_version: u32,
    input: String,
    method: Method,
    config: &'a PruneConfig,
    counts: Counts,
    kept: &'a [usize],
    needle: Option<NeedleSpan>,
    needle_retention: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Trace<'a>>,
}

fn trace_of(result: &PruneResult) -> Trace<'_> {
    Trace {
        phase1: result.phase1.as_ref().map(|p: &Phase1Trace| Phase1Summary {
            token_scores: &p.token_scores,
            frame_scores: &p.frame_scores,
            frame_probs: &p.frame_probs,
            allocations: &p.allocations,
            kept: &p.kept,
        }),
        phase2: result.phase2.as_ref().map(|p: &Phase2Trace| Phase2Summary { token_scores: &p.token_scores, kept: &p.kept }),
    }
}

/// The bundle restricted to `kept` rows. A needle that loses every token is
/// dropped and flagged with `needle_pruned`.
pub fn pruned_bundle(bundle: &EmbeddingBundle, kept: &[usize]) -> Result<EmbeddingBundle, CliError> {
    let mut out = bundle.clone();
    out.speech = bundle.speech.select_rows(kept).map_err(|e| CliError::Internal(e.into()))?;
    if let Some(needle) = bundle.needle {
        let start = kept.partition_point(|&i| i < needle.start);
        let end = kept.partition_point(|&i| i < needle.end());
        if end > start {
            out.needle = Some(NeedleSpan { start, length: end - start });
        } else {
            out.needle = None;
            out.extra_metadata.insert("needle_pruned".into(), Value::Bool(true));
        }
    }
    out.validate()?;
    Ok(out)
}

pub fn prune(args: PruneArgs) -> Result<(), CliError> {
    let s = PruneSettings::load(overlay(args.config.as_deref(), &args)?)?;
    let input = s.input.clone().ok_or_else(|| CliError::Usage("missing input bundle".into()))?;
    if s.method != Method::Speechprune && s.mode.is_some_and(|m| m != Mode::Both) {
        return Err(CliError::Usage(format!("--mode applies to speechprune only, not {}", s.method.as_str())));
    }
    if s.emit_bundle && s.output.is_none() {
        return Err(CliError::Usage("--emit-bundle needs --output".into()));
    }
    if s.format == Format::Both {
        return Err(CliError::Usage("prune writes a single report; use csv or json".into()));
    }
    let config = PruneConfig {
        pruning_rate: s.rate,
        intermediate_target: s.intermediate_target,
        frame_size_override: s.frame_size,
        mode: s.mode.unwrap_or_default(),
        seed: s.seed,
        ..PruneConfig::default()
    };
    config.validate()?;

    let bundle = load_bundle(&input)?;
    let result = speechprune_core::prune(&bundle, s.method, &config)?;

    if s.emit_bundle {
        let pruned = pruned_bundle(&bundle, &result.kept_final)?;
        return emit(s.output.as_deref(), &pruned.to_bytes()?);
    }

    let bytes = match s.format {
        Format::Csv => {
            let mut out = String::from("index\n");
            for i in &result.kept_final {
                out.push_str(&format!("{i}\n"));
            }
            out.into_bytes()
        }
        _ => {
            let report = PruneReport {
                schema_version: PRUNE_SCHEMA_VERSION,
                input: input.display().to_string(),
                method: s.method,
                config: &config,
                counts: Counts {
                    input: bundle.n_tokens(),
                    phase1: result.phase1.as_ref().map(|p| p.kept.len()),
                    final_count: result.kept_final.len(),
                },
                kept: &result.kept_final,
                needle: bundle.needle,
                needle_retention: match bundle.needle {
                    Some(n) => Some(harness::needle_retention(&result, n)?),
                    None => None,
                },
                trace: s.trace.then(|| trace_of(&result)),
            };
            json_bytes(&report)?
        }
    };
    emit(s.output.as_deref(), &bytes)
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let s = SynthSettings::load(overlay(args.config.as_deref(), &args)?)?;
    let output = s.output.ok_or_else(|| CliError::Usage("synth needs --output".into()))?;
    let bundle = harness::synth_bundle(&s.spec)?;
    emit(Some(&output), &bundle.to_bytes()?)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let s = EvalSettings::load(overlay(args.config.as_deref(), &args)?)?;
    let sweep = s.sweep;
    let exp = ExperimentConfig {
        rates: sweep.rates,
        methods: sweep.methods,
        modes: sweep.modes,
        trials: sweep.trials,
        intermediate_target: sweep.intermediate_target,
        frame_size_override: sweep.frame_size,
    };
    if sweep.format == Format::Both && sweep.output.is_none() {
        return Err(CliError::Usage("--format both needs --output".into()));
    }
    s.spec.validate()?;
    exp.validate()?;
    let report = harness::run_experiment(&s.spec, &exp)?;
    match sweep.format {
        Format::Csv => emit(sweep.output.as_deref(), report.to_csv().as_bytes()),
        Format::Json => emit(sweep.output.as_deref(), report.to_json().as_bytes()),
        Format::Both => {
            let base = sweep.output.expect("checked above");
            emit(Some(&sibling(&base, "csv")), report.to_csv().as_bytes())?;
            emit(Some(&sibling(&base, "json")), report.to_json().as_bytes())
        }
    }
}

fn cost_csv(report: &CostReport) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("audio_tokens,pruning_rate,flops,tflops,ratio,reference_ratio\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{}\n",
            r.audio_tokens,
            opt(r.pruning_rate),
            r.flops,
            r.tflops,
            r.ratio,
            opt(r.reference_ratio)
        ));
    }
    out
}

pub fn cost(args: CostArgs) -> Result<(), CliError> {
    let s = CostSettings::load(overlay(args.config.as_deref(), &args)?)?;
    if s.format == Format::Both {
        return Err(CliError::Usage("cost writes a single report; use csv or json".into()));
    }
    let model = s.model();
    let fit_max = match s.non_audio_tokens {
        Some(_) => None,
        None if s.fit_max == 0 => return Err(CliError::Usage("fit_max must be at least 1".into())),
        None => Some(s.fit_max),
    };
    if s.embed_dim == 0 || s.proj_dim == 0 {
        return Err(CliError::Usage("embed_dim and proj_dim must be at least 1".into()));
    }
    let report = cost::cost_report(&model, fit_max, &s.audio_tokens, (s.embed_dim, s.proj_dim))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let bytes = match s.format {
        Format::Csv => cost_csv(&report).into_bytes(),
        _ => json_bytes(&report)?,
    };
    emit(s.output.as_deref(), &bytes)
}
