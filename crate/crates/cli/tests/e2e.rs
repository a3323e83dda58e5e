//! End-to-end tests driving the compiled binary: exit codes, replay
//! determinism, evaluation on gold data, and the report formats.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nerval::outparse::{Diagnostics, Grounding, PredictedSpan, PredictionSet, Records};
use nerval::text::TextIndex;

fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay")
}

/// Runs the binary from the fixture directory, where the relative paths
/// in config.toml resolve.
fn nerval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nerval"))
        .args(args)
        .current_dir(fixture_root())
        .output()
        .expect("run nerval")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(output),
        stderr(output)
    );
}

fn snapshot_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    collect_tree(dir, dir, &mut files);
    files
}

fn collect_tree(root: &Path, dir: &Path, files: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).expect("read dir") {
        let path = entry.expect("entry").path();
        if path.is_dir() {
            collect_tree(root, &path, files);
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_path_buf();
            files.insert(rel, std::fs::read(&path).expect("read file"));
        }
    }
}

#[test]
fn tokenize_prints_one_line_per_token() {
    let out = nerval(&["tokenize", "--text", "Paris."]);
    assert_exit(&out, 0);
    assert_eq!(stdout(&out), "0\t0\t5\tParis\n1\t5\t6\t.\n");
}

#[test]
fn tokenize_of_empty_text_prints_nothing() {
    let out = nerval(&["tokenize", "--text", ""]);
    assert_exit(&out, 0);
    assert_eq!(stdout(&out), "");
}

#[test]
fn tokenize_json_is_a_parseable_array() {
    let out = nerval(&["tokenize", "--text", "l'Encyclopédie", "--json"]);
    assert_exit(&out, 0);
    let tokens: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let tokens = tokens.as_array().unwrap();
    assert_eq!(tokens.len(), 2, "the elided article stays a single token");
    assert_eq!(tokens[0]["text"], "l'");
    assert_eq!(tokens[1]["text"], "Encyclopédie");
    assert_eq!(tokens[1]["end"], 14, "offsets count chars, not bytes");
}

#[test]
fn tokenize_of_a_missing_file_exits_2() {
    let out = nerval(&["tokenize", "--file", "/no/such/file.txt"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn tokenize_without_input_is_a_usage_error() {
    let out = nerval(&["tokenize"]);
    assert_exit(&out, 1);
    let out = nerval(&["tokenize", "--text", "a", "--file", "b"]);
    assert_exit(&out, 1);
}

#[test]
fn help_and_version_exit_0() {
    assert_exit(&nerval(&["--help"]), 0);
    assert_exit(&nerval(&["--version"]), 0);
    assert_exit(&nerval(&["extract", "--help"]), 0);
}

#[test]
fn unknown_subcommands_and_flags_are_usage_errors() {
    assert_exit(&nerval(&["frobnicate"]), 1);
    assert_exit(&nerval(&["tokenize", "--text", "x", "--no-such-flag"]), 1);
    assert_exit(&nerval(&[]), 1);
}

#[test]
fn replay_extract_and_evaluate_are_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out_flag = out_dir.to_str().unwrap();

    let run = || {
        let extract = nerval(&["extract", "-c", "config.toml", "--out", out_flag]);
        assert_exit(&extract, 0);
        assert!(stdout(&extract).contains("5 ok, 0 failed"));
        let evaluate = nerval(&["evaluate", "-c", "config.toml", "--out", out_flag]);
        assert_exit(&evaluate, 0);
    };

    run();
    let first = snapshot_tree(&out_dir);
    std::fs::remove_dir_all(&out_dir).unwrap();
    run();
    let second = snapshot_tree(&out_dir);

    assert!(!first.is_empty());
    let first_paths: Vec<_> = first.keys().collect();
    let second_paths: Vec<_> = second.keys().collect();
    assert_eq!(first_paths, second_paths);
    for (path, bytes) in &first {
        assert_eq!(bytes, &second[path], "{} differs between runs", path.display());
    }
}

#[test]
fn evaluation_reports_match_the_committed_expectations() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out_flag = out_dir.to_str().unwrap();
    assert_exit(&nerval(&["extract", "-c", "config.toml", "--out", out_flag]), 0);
    assert_exit(&nerval(&["evaluate", "-c", "config.toml", "--out", out_flag]), 0);

    for mode in ["with_regrounded", "strict_only"] {
        let got = std::fs::read(out_dir.join("evaluation").join(mode).join("report.json")).unwrap();
        let want = std::fs::read(fixture_root().join(format!("expected/{mode}_report.json"))).unwrap();
        assert_eq!(got, want, "{mode} report drifted from the committed expectation");
    }
}

#[test]
fn a_missing_fixture_fails_only_its_document() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    std::fs::create_dir(&store).unwrap();
    let mut removed_one = false;
    for entry in std::fs::read_dir(fixture_root().join("store")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        // Drop the first response fixture we see; keep the index.
        if name != "index.json" && !removed_one {
            removed_one = true;
            continue;
        }
        std::fs::copy(&path, store.join(&name)).unwrap();
    }
    assert!(removed_one);

    let out_dir = tmp.path().join("run");
    let out = nerval(&[
        "extract",
        "-c",
        "config.toml",
        "--fixtures",
        store.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("4 ok, 1 failed"), "got: {}", stdout(&out));
    assert!(stderr(&out).contains("no fixture for fingerprint"), "got: {}", stderr(&out));

    let predictions = std::fs::read_dir(out_dir.join("predictions")).unwrap().count();
    assert_eq!(predictions, 4, "the failed document must not leave a prediction");
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("no fixture for fingerprint"));
}

#[test]
fn live_mode_without_the_credential_variable_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nerval(&[
        "extract",
        "-c",
        "config.toml",
        "--provider",
        "live",
        "--endpoint",
        "http://127.0.0.1:9",
        "--credential-ref",
        "NERVAL_E2E_UNSET_CRED",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("NERVAL_E2E_UNSET_CRED"), "got: {}", stderr(&out));
}

#[test]
fn replay_mode_without_a_fixture_store_exits_2() {
    let out = nerval(&["extract", "--corpus", "corpus.jsonl", "--labels", "labels.json"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("fixture store"), "got: {}", stderr(&out));
}

/// Turns each gold document into the prediction a perfect model would
/// produce, using the document's own offsets.
fn write_gold_predictions(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let corpus = std::fs::read_to_string(fixture_root().join("corpus.jsonl")).unwrap();
    for line in corpus.lines() {
        let doc: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = doc["id"].as_str().unwrap();
        if id == "ex-01" {
            continue;
        }
        let text = doc["text"].as_str().unwrap();
        let index = TextIndex::new(text);
        let tokens = doc["tokens"].as_array().unwrap();
        let spans: Vec<PredictedSpan> = doc["spans"]
            .as_array()
            .unwrap()
            .iter()
            .map(|span| {
                let start_token = span["start_token"].as_u64().unwrap() as usize;
                let end_token = span["end_token"].as_u64().unwrap() as usize;
                let start_char = tokens[start_token]["start"].as_u64().unwrap() as usize;
                let end_char = tokens[end_token - 1]["end"].as_u64().unwrap() as usize;
                PredictedSpan {
                    start_token,
                    end_token,
                    start_char,
                    end_char,
                    text: index.slice(start_char, end_char).unwrap().to_string(),
                    label: span["label"].as_str().unwrap().to_string(),
                    grounding: Grounding::Verbatim,
                }
            })
            .collect();
        let set = PredictionSet {
            doc_id: id.to_string(),
            payload_records: spans.len() as u32,
            accepted_records: spans.len() as u32,
            claimed_texts: spans.iter().map(|s| s.text.clone()).collect(),
            records: Records::Spans(spans),
            diagnostics: Diagnostics::default(),
            raw_text: String::new(),
            echoed: false,
        };
        let mut line = serde_json::to_string(&set).unwrap();
        line.push('\n');
        std::fs::write(dir.join(format!("{id}.json")), line).unwrap();
    }
}

#[test]
fn gold_predictions_score_a_perfect_f1() {
    let tmp = tempfile::tempdir().unwrap();
    let predictions = tmp.path().join("predictions");
    write_gold_predictions(&predictions);

    let out_dir = tmp.path().join("run");
    let out = nerval(&[
        "evaluate",
        "-c",
        "config.toml",
        "--predictions",
        predictions.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("evaluated 5 document(s)"));

    for mode in ["strict_only", "with_regrounded"] {
        let raw =
            std::fs::read_to_string(out_dir.join("evaluation").join(mode).join("report.json"))
                .unwrap();
        let report: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(report["rates"]["precision"], 1.0, "{mode}");
        assert_eq!(report["rates"]["recall"], 1.0, "{mode}");
        assert_eq!(report["rates"]["f1"], 1.0, "{mode}");
        assert_eq!(report["outcomes"]["missed"], 0, "{mode}");
    }
}

#[test]
fn evaluating_an_empty_predictions_dir_reports_zero_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let predictions = tmp.path().join("predictions");
    std::fs::create_dir_all(&predictions).unwrap();
    let out_dir = tmp.path().join("run");
    let out = nerval(&[
        "evaluate",
        "-c",
        "config.toml",
        "--predictions",
        predictions.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("evaluated 0 document(s)"));
    let raw = std::fs::read_to_string(
        out_dir.join("evaluation/with_regrounded/report.json"),
    )
    .unwrap();
    let report: serde_json::Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(report["counts"]["tp"], 0);
    assert_eq!(report["counts"]["fp"], 0);
}

#[test]
fn a_prediction_for_an_unknown_document_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let predictions = tmp.path().join("predictions");
    std::fs::create_dir_all(&predictions).unwrap();
    let set = PredictionSet {
        doc_id: "zz-99".to_string(),
        records: Records::Spans(Vec::new()),
        diagnostics: Diagnostics::default(),
        raw_text: String::new(),
        echoed: false,
        claimed_texts: Vec::new(),
        payload_records: 0,
        accepted_records: 0,
    };
    std::fs::write(
        predictions.join("zz-99.json"),
        serde_json::to_string(&set).unwrap(),
    )
    .unwrap();

    let out = nerval(&[
        "evaluate",
        "-c",
        "config.toml",
        "--predictions",
        predictions.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("zz-99"), "got: {}", stderr(&out));
}

#[test]
fn report_csv_has_the_exact_header_and_no_reference_rows() {
    let out = nerval(&[
        "report",
        "ours=expected/with_regrounded_report.json",
        "--format",
        "csv",
    ]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,precision,recall,f1"));
    let ours = lines.next().unwrap();
    assert!(ours.starts_with("ours,1,0.5,0.66666"), "got: {ours}");
    assert_eq!(lines.next(), None, "CSV must list only measured rows");
}

#[test]
fn report_table_appends_the_reference_rows() {
    let out = nerval(&["report", "ours=expected/with_regrounded_report.json"]);
    assert_exit(&out, 0);
    let table = stdout(&out);
    assert!(table.contains("ours"));
    assert!(table.contains("0.67"), "half-up rounding of 2/3");
    assert!(table.contains("GPT-4o"));
    assert!(table.contains("Fine-tuned BERT"));
    assert!(table.contains("(reference)"));
}

#[test]
fn report_errors_use_the_right_exit_codes() {
    // Missing file: environment error.
    let out = nerval(&["report", "ours=/no/such/report.json"]);
    assert_exit(&out, 2);
    // Malformed row spec: usage error.
    let out = nerval(&["report", "=x"]);
    assert_exit(&out, 1);
    // No rows at all: usage error from the parser.
    let out = nerval(&["report"]);
    assert_exit(&out, 1);
}

#[test]
fn record_stores_a_fixture_the_next_replay_run_uses() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let record = nerval(&[
        "record",
        "-c",
        "config.toml",
        "--fixtures",
        store.to_str().unwrap(),
        "--entry",
        "a-01=responses/a-01.txt",
    ]);
    assert_exit(&record, 0);
    assert!(stdout(&record).contains("recorded 1 fixture(s)"));

    let out_dir = tmp.path().join("run");
    let extract = nerval(&[
        "extract",
        "-c",
        "config.toml",
        "--fixtures",
        store.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&extract, 0);
    assert!(stdout(&extract).contains("1 ok, 4 failed"), "got: {}", stdout(&extract));
    let prediction = std::fs::read_to_string(out_dir.join("predictions/a-01.json")).unwrap();
    assert!(prediction.contains("Montesquieu"));
}

#[test]
fn record_rejects_unknown_documents_and_bad_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().to_str().unwrap().to_string();
    let out = nerval(&[
        "record", "-c", "config.toml", "--fixtures", &store,
        "--entry", "zz-99=responses/a-01.txt",
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("zz-99"));

    let out = nerval(&[
        "record", "-c", "config.toml", "--fixtures", &store,
        "--entry", "no-equals-sign",
    ]);
    assert_exit(&out, 1);
}

#[test]
fn build_prompt_renders_exemplar_and_target() {
    let out = nerval(&["build-prompt", "-c", "config.toml", "--doc-id", "a-01"]);
    assert_exit(&out, 0);
    let rendered: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let user = rendered["prompt"]["user_text"].as_str().unwrap();
    assert!(user.contains("\"Montesquieu\""), "target tokens present");
    assert!(user.contains("\"Diderot\""), "exemplar tokens present");
    assert!(
        user.contains("\"label\":\"Person\""),
        "exemplar annotations present"
    );
    let fingerprint = rendered["prompt"]["fingerprint"].as_str().unwrap();
    assert_eq!(fingerprint.len(), 64);
    assert!(rendered.get("budget").is_none(), "no budget configured");

    let out = nerval(&["build-prompt", "-c", "config.toml", "--doc-id", "zz-99"]);
    assert_exit(&out, 2);
}

#[test]
fn build_prompt_reports_the_context_budget() {
    let out = nerval(&[
        "build-prompt", "-c", "config.toml", "--doc-id", "a-01",
        "--context-budget", "10",
    ]);
    assert_exit(&out, 0);
    let rendered: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rendered["budget"]["fits"], false);
    assert_eq!(rendered["budget"]["max_units"], 10);
}

#[test]
fn an_exceeded_context_budget_fails_documents_before_any_request() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = nerval(&[
        "extract", "-c", "config.toml",
        "--context-budget", "10",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("0 ok, 5 failed"), "got: {}", stdout(&out));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("context budget exceeded"));
    assert!(!out_dir.join("predictions").read_dir().unwrap().next().is_some());
}
