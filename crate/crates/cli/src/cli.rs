//! Command-line surface: argument definitions and the dispatch from
//! parsed arguments to the library. Exit codes: 0 success (including
//! runs with per-document failures), 1 usage error, 2 environment or
//! configuration error.

use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nerval::eval::RepairMode;
use nerval::prompt::{build_prompt, check_context_budget, BudgetReport, Granularity, Prompt};
use nerval::tokenize::tokenize;

use crate::config::{self, Overrides, RunConfig};
use crate::provider::{FixtureStore, ProviderMode};
use crate::reports::{self, ModelReport};
use crate::runner;

#[derive(Debug, Parser)]
#[command(
    name = "nerval",
    version,
    about = "Few-shot named-entity extraction over chat models, with grounded positions and strict-match evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize text and print each token with its character offsets
    Tokenize(TokenizeArgs),
    /// Render the extraction prompt for one corpus document
    BuildPrompt(BuildPromptArgs),
    /// Run extraction over a corpus and persist all artifacts
    Extract(ExtractArgs),
    /// Score stored predictions against the gold corpus in both repair modes
    Evaluate(EvaluateArgs),
    /// Render aggregate reports as a table, CSV, or JSON
    Report(ReportArgs),
    /// Store canned response files as replay fixtures
    Record(RecordArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    #[value(name = "span-level", alias = "span_level")]
    SpanLevel,
    #[value(name = "token-level", alias = "token_level")]
    TokenLevel,
}

impl From<GranularityArg> for Granularity {
    fn from(arg: GranularityArg) -> Self {
        match arg {
            GranularityArg::SpanLevel => Granularity::SpanLevel,
            GranularityArg::TokenLevel => Granularity::TokenLevel,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RepairModeArg {
    #[value(name = "strict-only", alias = "strict_only")]
    StrictOnly,
    #[value(name = "with-regrounded", alias = "with_regrounded")]
    WithRegrounded,
}

impl From<RepairModeArg> for RepairMode {
    fn from(arg: RepairModeArg) -> Self {
        match arg {
            RepairModeArg::StrictOnly => RepairMode::StrictOnly,
            RepairModeArg::WithRegrounded => RepairMode::WithRegrounded,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderModeArg {
    Live,
    Replay,
    Record,
}

impl From<ProviderModeArg> for ProviderMode {
    fn from(arg: ProviderModeArg) -> Self {
        match arg {
            ProviderModeArg::Live => ProviderMode::Live,
            ProviderModeArg::Replay => ProviderMode::Replay,
            ProviderModeArg::Record => ProviderMode::Record,
        }
    }
}

/// Configuration file plus per-field flag overrides; flags win.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Corpus file in the native line-delimited format
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Label-set JSON file (defaults to the built-in inventory)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of prompt template files
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub granularity: Option<GranularityArg>,
    /// Document id to use as the in-prompt exemplar
    #[arg(long)]
    pub exemplar: Option<String>,
    /// Maximum prompt size in model units; omit to skip the check
    #[arg(long)]
    pub context_budget: Option<u64>,
    #[arg(long)]
    pub chars_per_unit: Option<f64>,
    /// Chat-completion endpoint base URL
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model identifier sent with each request
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_output_units: Option<u32>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// Name of the environment variable holding the API credential
    #[arg(long)]
    pub credential_ref: Option<String>,
    #[arg(long)]
    pub requests_per_minute: Option<u32>,
    #[arg(long)]
    pub provider: Option<ProviderModeArg>,
    /// Fixture store directory for replay and record modes
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Output directory for run artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Which repair mode headlines the summary output
    #[arg(long)]
    pub repair_mode: Option<RepairModeArg>,
    #[arg(long)]
    pub echo_threshold: Option<f64>,
    /// Count the outside class in token-level metrics
    #[arg(long)]
    pub include_outside: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            corpus: self.corpus.clone(),
            labels: self.labels.clone(),
            template_dir: self.templates.clone(),
            granularity: self.granularity.map(Into::into),
            exemplar_id: self.exemplar.clone(),
            context_budget: self.context_budget,
            chars_per_unit: self.chars_per_unit,
            endpoint_url: self.endpoint.clone(),
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_output_units: self.max_output_units,
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            backoff_ms: self.backoff_ms,
            credential_ref: self.credential_ref.clone(),
            requests_per_minute: self.requests_per_minute,
            provider: self.provider.map(Into::into),
            fixture_dir: self.fixtures.clone(),
            output_dir: self.out.clone(),
            concurrency: self.concurrency,
            repair_mode: self.repair_mode.map(Into::into),
            echo_threshold: self.echo_threshold,
            include_outside: self.include_outside.then_some(true),
        }
    }

    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let file = match &self.config {
            Some(path) => config::load_file(path)?,
            None => config::FileConfig::default(),
        };
        config::resolve(file, &self.overrides())
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["text", "file"]))]
pub struct TokenizeArgs {
    /// Text to tokenize
    #[arg(long)]
    pub text: Option<String>,
    /// File whose contents to tokenize
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Print a JSON array instead of the tab-separated listing
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BuildPromptArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Target document id
    #[arg(long)]
    pub doc_id: String,
    /// Write the prompt JSON here instead of stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of PredictionSet files (defaults to <out>/predictions)
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Aggregate report files, as NAME=PATH or bare PATH
    #[arg(required = true)]
    pub rows: Vec<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Write here instead of stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(true).args(["entries", "response_dir"]))]
pub struct RecordArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Canned response as DOC_ID=PATH; repeatable
    #[arg(long = "entry")]
    pub entries: Vec<String>,
    /// Directory of canned responses named <doc-id>.txt
    #[arg(long)]
    pub response_dir: Option<PathBuf>,
}

/// A command failure with its exit-code class.
#[derive(Debug)]
pub enum CmdError {
    /// Wrong invocation: exit 1.
    Usage(anyhow::Error),
    /// Broken environment, configuration, or input data: exit 2.
    Env(anyhow::Error),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Env(_) => 2,
        }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmdError::Usage(err) | CmdError::Env(err) => write!(f, "{err:#}"),
        }
    }
}

fn env_err(err: anyhow::Error) -> CmdError {
    CmdError::Env(err)
}

pub fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Tokenize(args) => cmd_tokenize(args),
        Command::BuildPrompt(args) => cmd_build_prompt(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
        Command::Record(args) => cmd_record(args),
    }
}

fn cmd_tokenize(args: TokenizeArgs) -> Result<(), CmdError> {
    let text = match (&args.text, &args.file) {
        (Some(text), None) => text.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(env_err)?,
        _ => unreachable!("clap enforces exactly one input"),
    };
    let tokens = tokenize(&text);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&tokens).expect("token serialization"));
    } else {
        for token in &tokens {
            println!("{}\t{}\t{}\t{}", token.index, token.start, token.end, token.text);
        }
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct PromptOutput<'a> {
    prompt: &'a Prompt,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<BudgetReport>,
}

fn cmd_build_prompt(args: BuildPromptArgs) -> Result<(), CmdError> {
    let cfg = args.config.resolve().map_err(env_err)?;
    let run = runner::load_inputs(&cfg).map_err(env_err)?;
    let target = run
        .corpus
        .get(&args.doc_id)
        .ok_or_else(|| env_err(anyhow!("no document with id {:?} in the corpus", args.doc_id)))?;
    let prompt = build_prompt(
        &run.templates,
        cfg.granularity,
        &run.corpus.label_set,
        &[&run.exemplar],
        &target.tokens,
    )
    .map_err(|err| env_err(anyhow!("prompt build: {err}")))?;
    let budget = match cfg.context_budget {
        Some(max) => Some(
            check_context_budget(&prompt, max, cfg.chars_per_unit)
                .map_err(|err| env_err(anyhow!("budget check: {err}")))?,
        ),
        None => None,
    };
    let mut rendered = serde_json::to_string_pretty(&PromptOutput { prompt: &prompt, budget })
        .expect("prompt serialization");
    rendered.push('\n');
    match &args.output {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(env_err)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<(), CmdError> {
    let cfg = args.config.resolve().map_err(env_err)?;
    let summary = runner::run_extract(&cfg).map_err(env_err)?;
    println!(
        "extracted {} document(s): {} ok, {} failed; manifest at {}",
        summary.succeeded + summary.failed,
        summary.succeeded,
        summary.failed,
        summary.manifest_path.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CmdError> {
    let cfg = args.config.resolve().map_err(env_err)?;
    let predictions = args
        .predictions
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("predictions"));
    let summary = runner::run_evaluate(
        &cfg.corpus_path,
        cfg.labels_path.as_deref(),
        &predictions,
        &cfg.output_dir,
        cfg.include_outside,
    )
    .map_err(env_err)?;
    println!("evaluated {} document(s)", summary.documents);
    for mode in &summary.reports {
        let r = &mode.report.rates;
        println!(
            "{}: P={} R={} F1={}",
            mode.mode.as_str(),
            reports::format_rate(r.precision),
            reports::format_rate(r.recall),
            reports::format_rate(r.f1)
        );
    }
    println!("reports under {}", cfg.output_dir.join("evaluation").display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CmdError> {
    let mut rows = Vec::with_capacity(args.rows.len());
    for spec in &args.rows {
        let (name, path) = split_row_spec(spec).map_err(CmdError::Usage)?;
        let raw = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read report {}", path.display()))
            .map_err(env_err)?;
        let report: nerval::eval::EvalReport = serde_json::from_str(&raw)
            .with_context(|| format!("invalid report file {}", path.display()))
            .map_err(env_err)?;
        rows.push(ModelReport {
            model: name,
            precision: report.rates.precision,
            recall: report.rates.recall,
            f1: report.rates.f1,
        });
    }
    let rendered = match args.format {
        ReportFormat::Table => reports::render_table(&rows),
        ReportFormat::Csv => reports::render_csv(&rows),
        ReportFormat::Json => reports::render_json(&rows),
    };
    match &args.output {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(env_err)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

/// `NAME=PATH` names a row explicitly; a bare path uses its file stem,
/// or the parent directory when the stem is just "report".
fn split_row_spec(spec: &str) -> Result<(String, PathBuf), anyhow::Error> {
    if let Some((name, path)) = spec.split_once('=') {
        if name.is_empty() || path.is_empty() {
            anyhow::bail!("bad row spec {spec:?}: expected NAME=PATH");
        }
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(spec);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    let name = if stem == "report" {
        path.parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(stem)
    } else {
        stem
    };
    Ok((name, path))
}

fn cmd_record(args: RecordArgs) -> Result<(), CmdError> {
    let cfg = args.config.resolve().map_err(env_err)?;
    let fixture_dir = cfg
        .fixture_dir
        .clone()
        .ok_or_else(|| env_err(anyhow!("record needs a fixture store: set [run].fixture_dir or pass --fixtures")))?;
    let run = runner::load_inputs(&cfg).map_err(env_err)?;
    let store = FixtureStore::open(fixture_dir);

    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for entry in &args.entries {
        let (id, path) = entry
            .split_once('=')
            .filter(|(id, path)| !id.is_empty() && !path.is_empty())
            .ok_or_else(|| CmdError::Usage(anyhow!("bad --entry {entry:?}: expected DOC_ID=PATH")))?;
        entries.push((id.to_string(), PathBuf::from(path)));
    }
    if let Some(dir) = &args.response_dir {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("cannot read response directory {}", dir.display()))
            .map_err(env_err)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            entries.push((id, path));
        }
    }

    for (id, path) in &entries {
        let doc = run
            .corpus
            .get(id)
            .ok_or_else(|| env_err(anyhow!("no document with id {id:?} in the corpus")))?;
        let prompt = build_prompt(
            &run.templates,
            cfg.granularity,
            &run.corpus.label_set,
            &[&run.exemplar],
            &doc.tokens,
        )
        .map_err(|err| env_err(anyhow!("prompt build for {id:?}: {err}")))?;
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read response file {}", path.display()))
            .map_err(env_err)?;
        store
            .record_raw(&prompt.fingerprint, &cfg.model.model_name, &text)
            .map_err(env_err)?;
    }
    println!("recorded {} fixture(s) in {}", entries.len(), store.dir().display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_specs_split_names_and_derive_them_from_paths() {
        let (name, path) = split_row_spec("gpt-4o=/tmp/r.json").unwrap();
        assert_eq!(name, "gpt-4o");
        assert_eq!(path, PathBuf::from("/tmp/r.json"));

        let (name, _) = split_row_spec("out/evaluation/with_regrounded/report.json").unwrap();
        assert_eq!(name, "with_regrounded");

        let (name, _) = split_row_spec("scores.json").unwrap();
        assert_eq!(name, "scores");

        assert!(split_row_spec("=x").is_err());
    }

    #[test]
    fn cli_parses_a_full_extract_invocation() {
        let cli = Cli::try_parse_from([
            "nerval",
            "extract",
            "--corpus",
            "c.jsonl",
            "--provider",
            "replay",
            "--fixtures",
            "fx",
            "--granularity",
            "token-level",
            "--repair-mode",
            "strict_only",
            "--concurrency",
            "2",
        ])
        .unwrap();
        let Command::Extract(args) = cli.command else {
            panic!("wrong subcommand")
        };
        let over = args.config.overrides();
        assert_eq!(over.granularity, Some(Granularity::TokenLevel));
        assert_eq!(over.repair_mode, Some(RepairMode::StrictOnly));
        assert_eq!(over.concurrency, Some(2));
    }

    #[test]
    fn tokenize_requires_exactly_one_input() {
        assert!(Cli::try_parse_from(["nerval", "tokenize"]).is_err());
        assert!(Cli::try_parse_from(["nerval", "tokenize", "--text", "a", "--file", "b"]).is_err());
    }

    #[test]
    fn report_requires_at_least_one_row() {
        assert!(Cli::try_parse_from(["nerval", "report"]).is_err());
    }
}
