//! Run configuration: a single TOML document with a schema version.
//! Secrets never live here; they come from the environment.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DEFAULT_EXCLUDE, DEFAULT_INCLUDE};
use crate::eval::SandboxConfig;
use crate::gateway::{default_examples, Mode, PromptExample, StageTag, DEFAULT_TEMPERATURE};
use crate::pipeline::{ConditionName, PipelineSettings};
use crate::retrieval::{HashProjection, SourceMode};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported config schema_version {found} (this build reads {CONFIG_SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmProvider {
    /// Any OpenAI-compatible chat-completions endpoint.
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    /// Deterministic offline bag-of-words projection.
    HashProjection,
    /// OpenAI-compatible embeddings endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: LlmProvider,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub concurrency: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            provider: LlmProvider::Openai,
            model: "gpt-4o-mini".into(),
            temperature: DEFAULT_TEMPERATURE,
            timeout_secs: 120,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProviderKind,
    /// Used by the `http` provider only.
    pub model: String,
    pub dim: usize,
    /// Used by the `hash_projection` provider only.
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: EmbeddingProviderKind::HashProjection,
            model: "text-embedding-3-small".into(),
            dim: HashProjection::DEFAULT_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub k_samples: u32,
    pub top_k_similar: usize,
    pub window_size: usize,
    pub stride: usize,
    /// Prompt budget in estimated tokens; 0 disables truncation.
    pub token_limit: usize,
    /// In-context examples per stage for steps and API descriptions.
    pub examples_per_stage: usize,
    /// Optional JSONL file of extra examples, used before the bundled ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples_path: Option<PathBuf>,
    pub source_mode: SourceMode,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k_samples: 5,
            top_k_similar: 5,
            window_size: 20,
            stride: 10,
            token_limit: 16_000,
            examples_per_stage: 2,
            examples_path: None,
            source_mode: SourceMode::TextDescription,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_root: PathBuf,
    pub benchmark_dir: PathBuf,
    pub run_dir: PathBuf,
    /// Replay cache file; required in replay and record modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus_root: PathBuf::from("repo"),
            benchmark_dir: PathBuf::from("bench"),
            run_dir: PathBuf::from("runs/default"),
            cache: None,
            include: DEFAULT_INCLUDE.iter().map(|s| s.to_string()).collect(),
            exclude: DEFAULT_EXCLUDE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub conditions: Vec<ConditionName>,
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub generation: GenerationConfig,
    pub paths: PathsConfig,
    pub sandbox: SandboxConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            mode: Mode::Live,
            conditions: vec![ConditionName::AllianceCoder],
            llm: LlmConfig::default(),
            embedding: EmbeddingConfig::default(),
            generation: GenerationConfig::default(),
            paths: PathsConfig::default(),
            sandbox: SandboxConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Probe {
            schema_version: Option<u32>,
        }
        let probe: Probe =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        match probe.schema_version {
            Some(CONFIG_SCHEMA_VERSION) => {}
            Some(found) => return Err(ConfigError::Schema { found }),
            None => return Err(ConfigError::Invalid("missing schema_version".into())),
        }
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })
    }

    /// Loads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::parse(&text, path)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus_root);
        fix(&mut self.paths.benchmark_dir);
        fix(&mut self.paths.run_dir);
        if let Some(c) = self.paths.cache.as_mut() {
            fix(c);
        }
        if let Some(e) = self.generation.examples_path.as_mut() {
            fix(e);
        }
    }

    /// Checks value ranges and mode requirements. Replay needs an existing
    /// cache file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema_version });
        }
        if !(self.llm.temperature.is_finite() && (0.0..=2.0).contains(&self.llm.temperature)) {
            return bad(format!("llm.temperature must be in [0, 2], got {}", self.llm.temperature));
        }
        let g = &self.generation;
        if g.k_samples == 0 {
            return bad("generation.k_samples must be at least 1".into());
        }
        if g.window_size == 0 || g.stride == 0 {
            return bad("generation.window_size and generation.stride must be positive".into());
        }
        if self.embedding.dim == 0 {
            return bad("embedding.dim must be positive".into());
        }
        if self.conditions.is_empty() {
            return bad("conditions must name at least one condition".into());
        }
        if self.sandbox.timeout.is_zero() {
            return bad("sandbox.timeout must be positive".into());
        }
        match (self.mode, &self.paths.cache) {
            (Mode::Replay, None) => bad("replay mode requires paths.cache".into()),
            (Mode::Replay, Some(c)) if !c.is_file() => {
                bad(format!("replay mode requires an existing cache, {} not found", c.display()))
            }
            (Mode::Record, None) => bad("record mode requires paths.cache".into()),
            _ => Ok(()),
        }
    }

    pub fn llm_timeout(&self) -> Duration {
        Duration::from_secs(self.llm.timeout_secs)
    }

    /// Pipeline settings with `examples_per_stage` examples for each stage,
    /// taken from `examples_path` first and the bundled set after.
    pub fn pipeline_settings(&self) -> Result<PipelineSettings, ConfigError> {
        let extra: Vec<PromptExample> = match &self.generation.examples_path {
            Some(p) => crate::jsonl::read_all(p).map_err(|e| ConfigError::Read { path: p.clone(), source: e })?,
            None => Vec::new(),
        };
        let pick = |stage: StageTag| -> Vec<PromptExample> {
            extra
                .iter()
                .filter(|e| e.stage_tag == stage)
                .cloned()
                .chain(default_examples(stage))
                .take(self.generation.examples_per_stage)
                .collect()
        };
        Ok(PipelineSettings {
            model: self.llm.model.clone(),
            temperature: self.llm.temperature,
            k_samples: self.generation.k_samples,
            top_k_similar: self.generation.top_k_similar,
            token_limit: (self.generation.token_limit > 0).then_some(self.generation.token_limit),
            steps_examples: pick(StageTag::Steps),
            api_desc_examples: pick(StageTag::ApiDescs),
        })
    }
}
