//! Run configuration: a TOML file with sections, every field overridable
//! by a command-line flag. Flags win over the file, the file wins over
//! built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nerval::eval::RepairMode;
use nerval::prompt::Granularity;
use serde::{Deserialize, Serialize};

use crate::provider::{ModelConfig, ProviderMode};

/// Raw configuration file contents. All fields are optional so a partial
/// file plus flags can still form a complete run.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
    /// JSON file with the label inventory; omitted means the built-in set.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    pub template_dir: Option<PathBuf>,
    /// "span_level" or "token_level".
    pub granularity: Option<String>,
    pub exemplar_id: Option<String>,
    /// Maximum prompt size in model units; omitted disables the check.
    pub context_budget: Option<u64>,
    pub chars_per_unit: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_units: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    /// Name of the environment variable holding the API credential.
    /// The credential value itself never appears in files or logs.
    pub credential_ref: Option<String>,
    pub requests_per_minute: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// "live", "replay", or "record".
    pub provider: Option<String>,
    pub fixture_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub concurrency: Option<usize>,
    /// "strict_only" or "with_regrounded"; picks the headline metric.
    pub repair_mode: Option<String>,
    pub echo_threshold: Option<f64>,
    /// Count the outside class in token-level metrics.
    pub include_outside: Option<bool>,
}

/// Command-line overrides, mirroring the file sections. `None` means the
/// flag was not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub granularity: Option<Granularity>,
    pub exemplar_id: Option<String>,
    pub context_budget: Option<u64>,
    pub chars_per_unit: Option<f64>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
    pub max_output_units: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub credential_ref: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub provider: Option<ProviderMode>,
    pub fixture_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub repair_mode: Option<RepairMode>,
    pub echo_threshold: Option<f64>,
    pub include_outside: Option<bool>,
}

/// A fully resolved run: every field has a value and the combination has
/// been validated.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub labels_path: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub granularity: Granularity,
    pub exemplar_id: Option<String>,
    pub context_budget: Option<u64>,
    pub chars_per_unit: f64,
    pub model: ModelConfig,
    pub provider_mode: ProviderMode,
    pub fixture_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub concurrency: usize,
    pub repair_mode: RepairMode,
    pub echo_threshold: f64,
    pub include_outside: bool,
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&raw).with_context(|| format!("invalid config file {}", path.display()))
}

pub fn parse_granularity(s: &str) -> Result<Granularity> {
    match s.replace('-', "_").as_str() {
        "span_level" | "span" => Ok(Granularity::SpanLevel),
        "token_level" | "token" => Ok(Granularity::TokenLevel),
        _ => bail!("unknown granularity {s:?}: expected span_level or token_level"),
    }
}

pub fn parse_repair_mode(s: &str) -> Result<RepairMode> {
    match s.replace('-', "_").as_str() {
        "strict_only" | "strict" => Ok(RepairMode::StrictOnly),
        "with_regrounded" | "regrounded" => Ok(RepairMode::WithRegrounded),
        _ => bail!("unknown repair mode {s:?}: expected strict_only or with_regrounded"),
    }
}

pub fn parse_provider_mode(s: &str) -> Result<ProviderMode> {
    match s {
        "live" => Ok(ProviderMode::Live),
        "replay" => Ok(ProviderMode::Replay),
        "record" => Ok(ProviderMode::Record),
        _ => bail!("unknown provider mode {s:?}: expected live, replay, or record"),
    }
}

/// Merges defaults, the optional config file, and flag overrides into a
/// validated `RunConfig`.
pub fn resolve(file: FileConfig, over: &Overrides) -> Result<RunConfig> {
    let granularity = match &over.granularity {
        Some(g) => *g,
        None => match &file.prompt.granularity {
            Some(s) => parse_granularity(s)?,
            None => Granularity::SpanLevel,
        },
    };
    let repair_mode = match &over.repair_mode {
        Some(m) => *m,
        None => match &file.run.repair_mode {
            Some(s) => parse_repair_mode(s)?,
            None => RepairMode::WithRegrounded,
        },
    };
    let provider_mode = match &over.provider {
        Some(p) => *p,
        None => match &file.run.provider {
            Some(s) => parse_provider_mode(s)?,
            None => ProviderMode::Replay,
        },
    };

    let corpus_path = over
        .corpus
        .clone()
        .or(file.corpus.path)
        .context("no corpus path: set [corpus].path or pass --corpus")?;
    let model = ModelConfig {
        endpoint_url: over
            .endpoint_url
            .clone()
            .or(file.model.endpoint_url)
            .unwrap_or_default(),
        model_name: over
            .model_name
            .clone()
            .or(file.model.model_name)
            .unwrap_or_else(|| "unnamed-model".to_string()),
        temperature: over.temperature.or(file.model.temperature).unwrap_or(0.0),
        max_output_units: over.max_output_units.or(file.model.max_output_units),
        timeout_secs: over.timeout_secs.or(file.model.timeout_secs).unwrap_or(60),
        max_retries: over.max_retries.or(file.model.max_retries).unwrap_or(3),
        backoff_ms: over.backoff_ms.or(file.model.backoff_ms).unwrap_or(250),
        credential_ref: over.credential_ref.clone().or(file.model.credential_ref),
        requests_per_minute: over.requests_per_minute.or(file.model.requests_per_minute),
    };

    let config = RunConfig {
        corpus_path,
        labels_path: over.labels.clone().or(file.corpus.labels),
        template_dir: over.template_dir.clone().or(file.prompt.template_dir),
        granularity,
        exemplar_id: over.exemplar_id.clone().or(file.prompt.exemplar_id),
        context_budget: over.context_budget.or(file.prompt.context_budget),
        chars_per_unit: over.chars_per_unit.or(file.prompt.chars_per_unit).unwrap_or(4.0),
        model,
        provider_mode,
        fixture_dir: over.fixture_dir.clone().or(file.run.fixture_dir),
        output_dir: over
            .output_dir
            .clone()
            .or(file.run.output_dir)
            .unwrap_or_else(|| PathBuf::from("out")),
        concurrency: over.concurrency.or(file.run.concurrency).unwrap_or(4),
        repair_mode,
        echo_threshold: over.echo_threshold.or(file.run.echo_threshold).unwrap_or(0.5),
        include_outside: over.include_outside.or(file.run.include_outside).unwrap_or(false),
    };
    config.validate_common()?;
    Ok(config)
}

impl RunConfig {
    /// Invariants every command relies on.
    fn validate_common(&self) -> Result<()> {
        if self.model.temperature < 0.0 || !self.model.temperature.is_finite() {
            bail!("temperature must be a finite number >= 0");
        }
        if self.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        if self.chars_per_unit <= 0.0 || !self.chars_per_unit.is_finite() {
            bail!("chars_per_unit must be a positive finite number");
        }
        if !(0.0..=1.0).contains(&self.echo_threshold) {
            bail!("echo_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Mode-specific invariants, checked only by commands that will
    /// actually contact a provider: replay and record need a fixture
    /// store, live and record need an endpoint.
    pub fn validate_provider(&self) -> Result<()> {
        match self.provider_mode {
            ProviderMode::Live => {
                if self.model.endpoint_url.is_empty() {
                    bail!("live mode needs an endpoint: set [model].endpoint_url or pass --endpoint");
                }
            }
            ProviderMode::Replay | ProviderMode::Record => {
                if self.fixture_dir.is_none() {
                    bail!(
                        "{} mode needs a fixture store: set [run].fixture_dir or pass --fixtures",
                        self.provider_mode
                    );
                }
                if self.provider_mode == ProviderMode::Record && self.model.endpoint_url.is_empty()
                {
                    bail!("record mode needs an endpoint: set [model].endpoint_url or pass --endpoint");
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderMode::Live => "live",
            ProviderMode::Replay => "replay",
            ProviderMode::Record => "record",
        })
    }
}
