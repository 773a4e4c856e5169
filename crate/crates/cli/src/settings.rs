//! Effective settings: the optional --config JSON object with explicit flags
//! laid on top, then deserialized into typed settings.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use speechprune_core::cost::{self, CostModelConfig};
use speechprune_core::harness::SyntheticSpec;
use speechprune_core::{pruner, Method, Mode};

use crate::args::Format;
use crate::error::CliError;

pub fn overlay<A: Serialize>(config: Option<&Path>, flags: &A) -> Result<Map<String, Value>, CliError> {
    let mut map = match config {
        None => Map::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(CliError::Usage(format!("config {} is not a JSON object", path.display()))),
                Err(e) => return Err(CliError::Usage(format!("config {}: {e}", path.display()))),
            }
        }
    };
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Internal(e.into()))? else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, value) in given {
        if value.is_null() || value == Value::Bool(false) {
            continue;
        }
        map.insert(key, value);
    }
    Ok(map)
}

fn parse<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("invalid settings: {e}")))
}

/// Moves `keys` out of `map` and deserializes them as `T`.
fn split<T: DeserializeOwned>(map: &mut Map<String, Value>, keys: &[&str]) -> Result<T, CliError> {
    let mut part = Map::new();
    for key in keys {
        if let Some(v) = map.remove(*key) {
            part.insert((*key).to_string(), v);
        }
    }
    parse(part)
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSettings {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    pub rate: f64,
    pub mode: Option<Mode>,
    pub method: Method,
    pub intermediate_target: usize,
    pub frame_size: Option<usize>,
    pub trace: bool,
    pub emit_bundle: bool,
}

impl Default for PruneSettings {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            format: Format::Json,
            seed: 0,
            rate: 0.0,
            mode: None,
            method: Method::Speechprune,
            intermediate_target: pruner::DEFAULT_INTERMEDIATE_TARGET,
            frame_size: None,
            trace: false,
            emit_bundle: false,
        }
    }
}

impl PruneSettings {
    pub fn load(map: Map<String, Value>) -> Result<Self, CliError> {
        parse(map)
    }
}

#[derive(Debug)]
pub struct SynthSettings {
    pub output: Option<PathBuf>,
    pub spec: SyntheticSpec,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct OutputOnly {
    output: Option<PathBuf>,
}

impl SynthSettings {
    pub fn load(mut map: Map<String, Value>) -> Result<Self, CliError> {
        let OutputOnly { output } = split(&mut map, &["output"])?;
        Ok(Self { output, spec: parse(map)? })
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub output: Option<PathBuf>,
    pub format: Format,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub modes: Vec<Mode>,
    pub trials: usize,
    pub intermediate_target: usize,
    pub frame_size: Option<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            output: None,
            format: Format::Csv,
            rates: vec![0.2, 0.4, 0.6, 0.8],
            methods: Method::ALL.to_vec(),
            modes: vec![Mode::Both],
            trials: 100,
            intermediate_target: pruner::DEFAULT_INTERMEDIATE_TARGET,
            frame_size: None,
        }
    }
}

#[derive(Debug)]
pub struct EvalSettings {
    pub sweep: SweepSettings,
    pub spec: SyntheticSpec,
}

impl EvalSettings {
    pub fn load(mut map: Map<String, Value>) -> Result<Self, CliError> {
        let sweep = split(
            &mut map,
            &["output", "format", "rates", "methods", "modes", "trials", "intermediate_target", "frame_size"],
        )?;
        Ok(Self { sweep, spec: parse(map)? })
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSettings {
    pub output: Option<PathBuf>,
    pub format: Format,
    pub n_layers: u64,
    pub hidden_dim: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    pub total_params: Option<u64>,
    pub non_audio_tokens: Option<u64>,
    pub fit_max: u64,
    pub audio_tokens: Vec<u64>,
    pub embed_dim: u64,
    pub proj_dim: u64,
}

impl Default for CostSettings {
    fn default() -> Self {
        let q = CostModelConfig::qwen2_audio_like();
        Self {
            output: None,
            format: Format::Json,
            n_layers: q.n_layers,
            hidden_dim: q.hidden_dim,
            ffn_dim: q.ffn_dim,
            vocab_size: cost::QWEN2_AUDIO_VOCAB,
            total_params: None,
            non_audio_tokens: None,
            fit_max: 4096,
            audio_tokens: vec![750, 600, 450, 300, 150],
            embed_dim: q.hidden_dim,
            proj_dim: q.hidden_dim,
        }
    }
}

impl CostSettings {
    pub fn load(map: Map<String, Value>) -> Result<Self, CliError> {
        parse(map)
    }

    pub fn model(&self) -> CostModelConfig {
        let mut cfg = CostModelConfig::from_shape(self.n_layers, self.hidden_dim, self.ffn_dim, self.vocab_size);
        if let Some(p) = self.total_params {
            cfg.total_params = p;
        }
        if let Some(n) = self.non_audio_tokens {
            cfg.non_audio_tokens = n;
        }
        cfg
    }
}
