//! Batch orchestration: run extraction over a corpus with bounded
//! concurrency, persist every intermediate artifact, and evaluate stored
//! predictions against the gold corpus in both repair modes.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use anyhow::{bail, Context, Result};
use nerval::corpus::{flatten_nested, select_exemplar, select_exemplar_by_id, Corpus, Document, Split};
use nerval::eval::{aggregate, eval_spans, eval_tokens, DocEval, EvalReport, RepairMode};
use nerval::label::{default_label_set, LabelSet};
use nerval::outparse::{detect_example_echo, parse_response, PredictionSet};
use nerval::prompt::{build_prompt, check_context_budget, Granularity, Prompt, PromptTemplates};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus_io;
use crate::provider::{FixtureStore, HttpProvider, Provider, ProviderMode, TransportStatus};
use crate::templates;

/// Inputs shared by every per-document step, loaded and validated once.
pub struct LoadedRun {
    pub corpus: Corpus,
    pub templates: PromptTemplates,
    /// The flattened exemplar document shown in every prompt.
    pub exemplar: Document,
}

pub fn load_label_set(labels_path: Option<&Path>) -> Result<LabelSet> {
    match labels_path {
        Some(path) => corpus_io::load_label_set(path),
        None => Ok(default_label_set()),
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<LoadedRun> {
    let label_set = load_label_set(cfg.labels_path.as_deref())?;
    let corpus = corpus_io::load_corpus(&cfg.corpus_path, label_set, Split::Unspecified)?;
    let templates = templates::load(cfg.template_dir.as_deref())?;
    let exemplar = match &cfg.exemplar_id {
        Some(id) => select_exemplar_by_id(&corpus, id),
        None => select_exemplar(&corpus),
    }
    .map_err(|err| anyhow::anyhow!("exemplar selection: {err}"))?;
    let exemplar = flatten_nested(exemplar)
        .map_err(|err| anyhow::anyhow!("exemplar {:?}: {err}", exemplar.id))?;
    Ok(LoadedRun { corpus, templates, exemplar })
}

/// Per-document record in the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub fingerprint: Option<String>,
    pub status: TransportStatus,
    pub latency_ms: u64,
    /// Present when a prediction file was written.
    pub accepted_records: Option<u32>,
    pub dropped_records: Option<u64>,
    pub echoed: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTotals {
    pub documents: u64,
    pub succeeded: u64,
    pub failed: u64,
    /// Sum of per-document latencies; zero in replay runs.
    pub total_latency_ms: u64,
}

/// Everything needed to re-execute the run: the resolved configuration
/// snapshot plus per-document outcomes. Written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub config: &'a RunConfig,
    pub labels: Vec<String>,
    pub exemplar_id: String,
    pub documents: Vec<DocRecord>,
    pub totals: ManifestTotals,
    /// Wall-clock stamp for live and record runs; omitted in replay mode
    /// so that replay output is byte-deterministic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<String>,
}

pub struct ExtractSummary {
    pub manifest_path: PathBuf,
    pub succeeded: u64,
    pub failed: u64,
}

struct DocOutcome {
    record: DocRecord,
    prompt_json: Option<(PathBuf, String)>,
    response_text: Option<(PathBuf, String)>,
    prediction_json: Option<(PathBuf, String)>,
}

/// Runs the full extraction pipeline over every corpus document except
/// the exemplar. Per-document failures are recorded and skipped, never
/// fatal; configuration problems abort before any request.
pub fn run_extract(cfg: &RunConfig) -> Result<ExtractSummary> {
    cfg.validate_provider()?;
    let run = load_inputs(cfg)?;
    let provider = build_provider(cfg)?;

    let out = &cfg.output_dir;
    let prompts_dir = out.join("prompts");
    let responses_dir = out.join("responses");
    let predictions_dir = out.join("predictions");
    for dir in [out, &prompts_dir, &responses_dir, &predictions_dir] {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    }

    let targets: Vec<&Document> = run
        .corpus
        .documents
        .iter()
        .filter(|d| d.id != run.exemplar.id)
        .collect();

    let next = AtomicUsize::new(0);
    let slots: Vec<OnceLock<DocOutcome>> = targets.iter().map(|_| OnceLock::new()).collect();
    let workers = cfg.concurrency.min(targets.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(target) = targets.get(i) else { break };
                let outcome = process_document(
                    cfg,
                    &run,
                    &provider,
                    target,
                    &prompts_dir,
                    &responses_dir,
                    &predictions_dir,
                );
                let _ = slots[i].set(outcome);
            });
        }
    });

    let mut documents = Vec::with_capacity(targets.len());
    let mut totals = ManifestTotals {
        documents: targets.len() as u64,
        succeeded: 0,
        failed: 0,
        total_latency_ms: 0,
    };
    for slot in slots {
        let outcome = slot.into_inner().expect("worker filled every slot");
        for (path, content) in [
            &outcome.prompt_json,
            &outcome.response_text,
            &outcome.prediction_json,
        ]
        .into_iter()
        .flatten()
        {
            std::fs::write(path, content)
                .with_context(|| format!("cannot write artifact {}", path.display()))?;
        }
        totals.total_latency_ms += outcome.record.latency_ms;
        if outcome.record.status.is_failed() {
            totals.failed += 1;
            let reason = match &outcome.record.status {
                TransportStatus::Failed(reason) => reason.as_str(),
                _ => unreachable!(),
            };
            eprintln!("warning: document {}: {reason}", outcome.record.id);
        } else {
            totals.succeeded += 1;
        }
        documents.push(outcome.record);
    }

    let manifest = Manifest {
        config: cfg,
        labels: run.corpus.label_set.names().map(str::to_string).collect(),
        exemplar_id: run.exemplar.id.clone(),
        documents,
        totals,
        recorded_at: match cfg.provider_mode {
            ProviderMode::Replay => None,
            _ => Some(chrono::Utc::now().to_rfc3339()),
        },
    };
    let manifest_path = out.join("manifest.json");
    let mut serialized =
        serde_json::to_string_pretty(&manifest).context("manifest serialization")?;
    serialized.push('\n');
    std::fs::write(&manifest_path, serialized)
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;

    Ok(ExtractSummary {
        manifest_path,
        succeeded: manifest.totals.succeeded,
        failed: manifest.totals.failed,
    })
}

fn build_provider(cfg: &RunConfig) -> Result<Provider> {
    Ok(match cfg.provider_mode {
        ProviderMode::Live => Provider::Live(HttpProvider::new(cfg.model.clone())?),
        ProviderMode::Replay => {
            Provider::Replay(FixtureStore::open(cfg.fixture_dir.clone().expect("validated")))
        }
        ProviderMode::Record => Provider::Record(
            HttpProvider::new(cfg.model.clone())?,
            FixtureStore::open(cfg.fixture_dir.clone().expect("validated")),
        ),
    })
}

fn process_document(
    cfg: &RunConfig,
    run: &LoadedRun,
    provider: &Provider,
    target: &Document,
    prompts_dir: &Path,
    responses_dir: &Path,
    predictions_dir: &Path,
) -> DocOutcome {
    let file_stem = sanitize_filename(&target.id);
    let failed = |fingerprint: Option<String>,
                  prompt_json: Option<(PathBuf, String)>,
                  latency_ms: u64,
                  reason: String| DocOutcome {
        record: DocRecord {
            id: target.id.clone(),
            fingerprint,
            status: TransportStatus::Failed(reason),
            latency_ms,
            accepted_records: None,
            dropped_records: None,
            echoed: None,
        },
        prompt_json,
        response_text: None,
        prediction_json: None,
    };

    let prompt = match build_prompt(
        &run.templates,
        cfg.granularity,
        &run.corpus.label_set,
        &[&run.exemplar],
        &target.tokens,
    ) {
        Ok(prompt) => prompt,
        Err(err) => return failed(None, None, 0, format!("prompt build: {err}")),
    };
    let prompt_artifact = (
        prompts_dir.join(format!("{file_stem}.json")),
        pretty_line(&prompt),
    );

    if let Some(budget) = cfg.context_budget {
        match check_context_budget(&prompt, budget, cfg.chars_per_unit) {
            Ok(report) if !report.fits => {
                return failed(
                    Some(prompt.fingerprint.clone()),
                    Some(prompt_artifact),
                    0,
                    format!(
                        "context budget exceeded: estimated {} units > budget {}",
                        report.estimated_units, report.max_units
                    ),
                );
            }
            Ok(_) => {}
            Err(err) => {
                return failed(
                    Some(prompt.fingerprint.clone()),
                    Some(prompt_artifact),
                    0,
                    format!("budget check: {err}"),
                );
            }
        }
    }

    let response = provider.complete(&prompt);
    let response_artifact = response
        .text
        .as_ref()
        .map(|text| (responses_dir.join(format!("{file_stem}.txt")), text.clone()));

    let Some(text) = &response.text else {
        let reason = match &response.transport_status {
            TransportStatus::Failed(reason) => reason.clone(),
            _ => "missing response text".to_string(),
        };
        return failed(
            Some(prompt.fingerprint.clone()),
            Some(prompt_artifact),
            response.latency_ms,
            reason,
        );
    };

    let set = parse_response(text, target, &run.corpus.label_set, cfg.granularity);
    let set = detect_example_echo(set, &run.exemplar, target, cfg.echo_threshold);
    let mut prediction = serde_json::to_string(&set).expect("prediction serialization");
    prediction.push('\n');

    DocOutcome {
        record: DocRecord {
            id: target.id.clone(),
            fingerprint: Some(prompt.fingerprint.clone()),
            status: response.transport_status,
            latency_ms: response.latency_ms,
            accepted_records: Some(set.accepted_records),
            dropped_records: Some(set.diagnostics.dropped_records()),
            echoed: Some(set.echoed),
        },
        prompt_json: Some(prompt_artifact),
        response_text: response_artifact,
        prediction_json: Some((predictions_dir.join(format!("{file_stem}.json")), prediction)),
    }
}

fn pretty_line(prompt: &Prompt) -> String {
    let mut out = serde_json::to_string_pretty(prompt).expect("prompt serialization");
    out.push('\n');
    out
}

/// Maps an opaque document id onto a safe file stem.
pub fn sanitize_filename(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Evaluation artifacts for one repair mode.
pub struct ModeReports {
    pub mode: RepairMode,
    pub report: EvalReport,
}

pub struct EvaluateSummary {
    pub reports: Vec<ModeReports>,
    pub documents: u64,
}

/// Evaluates every stored PredictionSet against the gold corpus, in both
/// repair modes, writing per-document and aggregate reports under
/// `out_dir/evaluation/<mode>/`.
pub fn run_evaluate(
    corpus_path: &Path,
    labels_path: Option<&Path>,
    predictions_dir: &Path,
    out_dir: &Path,
    include_outside: bool,
) -> Result<EvaluateSummary> {
    let label_set = load_label_set(labels_path)?;
    let corpus = corpus_io::load_corpus(corpus_path, label_set, Split::Unspecified)?;
    let sets = load_prediction_sets(predictions_dir)?;

    let mut granularity: Option<Granularity> = None;
    let mut gold_docs: Vec<Document> = Vec::with_capacity(sets.len());
    for set in &sets {
        let doc = corpus
            .get(&set.doc_id)
            .with_context(|| format!("prediction for unknown document id {:?}", set.doc_id))?;
        match granularity {
            None => granularity = Some(set.granularity()),
            Some(g) if g != set.granularity() => {
                bail!(
                    "mixed granularities in {}: document {:?} is {}",
                    predictions_dir.display(),
                    set.doc_id,
                    set.granularity().as_str()
                )
            }
            Some(_) => {}
        }
        let flat = flatten_nested(doc)
            .map_err(|err| anyhow::anyhow!("document {:?}: {err}", doc.id))?;
        gold_docs.push(flat);
    }
    let granularity = granularity.unwrap_or(Granularity::SpanLevel);

    let mut summary = EvaluateSummary { reports: Vec::new(), documents: sets.len() as u64 };
    for mode in [RepairMode::StrictOnly, RepairMode::WithRegrounded] {
        let mut evals: Vec<DocEval> = Vec::with_capacity(sets.len());
        for (set, gold) in sets.iter().zip(&gold_docs) {
            let eval = match granularity {
                Granularity::SpanLevel => eval_spans(&gold.spans, set, mode),
                Granularity::TokenLevel => {
                    eval_tokens(&gold.token_labels, set, mode, include_outside)
                }
            }
            .map_err(|err| anyhow::anyhow!("document {:?}: {err}", set.doc_id))?;
            evals.push(eval);
        }
        let report = aggregate(granularity, mode, &evals)
            .map_err(|err| anyhow::anyhow!("aggregation: {err}"))?;
        write_mode_reports(out_dir, mode, &evals, &report)?;
        summary.reports.push(ModeReports { mode, report });
    }
    Ok(summary)
}

fn load_prediction_sets(dir: &Path) -> Result<Vec<PredictionSet>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read predictions directory {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    let mut sets = Vec::with_capacity(paths.len());
    for path in paths {
        let raw = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read prediction file {}", path.display()))?;
        let set: PredictionSet = serde_json::from_str(&raw)
            .with_context(|| format!("invalid prediction file {}", path.display()))?;
        sets.push(set);
    }
    Ok(sets)
}

fn write_mode_reports(
    out_dir: &Path,
    mode: RepairMode,
    evals: &[DocEval],
    report: &EvalReport,
) -> Result<()> {
    let mode_dir = out_dir.join("evaluation").join(mode.as_str());
    let per_doc_dir = mode_dir.join("per_doc");
    std::fs::create_dir_all(&per_doc_dir)
        .with_context(|| format!("cannot create {}", per_doc_dir.display()))?;

    let mut aggregate_json =
        serde_json::to_string_pretty(report).context("report serialization")?;
    aggregate_json.push('\n');
    std::fs::write(mode_dir.join("report.json"), aggregate_json)?;
    std::fs::write(mode_dir.join("report.txt"), crate::reports::render_eval_text(report))?;
    std::fs::write(mode_dir.join("per_doc.txt"), crate::reports::render_per_doc_table(evals))?;

    for eval in evals {
        let mut doc_json = serde_json::to_string_pretty(eval).context("eval serialization")?;
        doc_json.push('\n');
        let path = per_doc_dir.join(format!("{}.json", sanitize_filename(&eval.doc_id)));
        std::fs::write(&path, doc_json)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filenames_are_sanitized_conservatively() {
        assert_eq!(sanitize_filename("doc-01"), "doc-01");
        assert_eq!(sanitize_filename("a/b:c d"), "a_b_c_d");
        assert_eq!(sanitize_filename("épée.json"), "_p_e.json");
    }
}
