//! Chat-completion transport: a live HTTP client with retry, backoff and
//! a rate budget, plus a fingerprint-keyed fixture store for recording
//! and replaying responses deterministically.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use nerval::prompt::Prompt;
use serde::{Deserialize, Serialize};

/// Everything needed to talk to one model endpoint. `credential_ref`
/// names an environment variable; the credential value itself is read at
/// client construction and never written to any file or log.
#[derive(Debug, Clone, Serialize)]
pub struct ModelConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_units: Option<u32>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub credential_ref: Option<String>,
    pub requests_per_minute: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Replay,
    Record,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportStatus {
    Ok,
    Retried(u32),
    Failed(String),
}

impl TransportStatus {
    pub fn is_failed(&self) -> bool {
        matches!(self, TransportStatus::Failed(_))
    }
}

/// One model answer, or the reason there is none. `text` is present
/// exactly when the transport did not fail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: Option<String>,
    pub latency_ms: u64,
    pub request_fingerprint: String,
    pub model_name: String,
    pub transport_status: TransportStatus,
}

impl RawResponse {
    fn failed(prompt: &Prompt, model_name: &str, latency_ms: u64, reason: String) -> Self {
        RawResponse {
            text: None,
            latency_ms,
            request_fingerprint: prompt.fingerprint.clone(),
            model_name: model_name.to_string(),
            transport_status: TransportStatus::Failed(reason),
        }
    }
}

/// Sliding-window admission gate: at most `max` requests per `window`.
struct RateGate {
    window: Duration,
    max: u32,
    recent: Mutex<VecDeque<Instant>>,
}

impl RateGate {
    fn new(max: u32, window: Duration) -> Self {
        RateGate { window, max, recent: Mutex::new(VecDeque::new()) }
    }

    fn admit(&self) {
        loop {
            let wait = {
                let mut recent = self.recent.lock().expect("rate gate lock");
                let now = Instant::now();
                while recent.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    recent.pop_front();
                }
                if (recent.len() as u32) < self.max {
                    recent.push_back(now);
                    return;
                }
                self.window - now.duration_since(*recent.front().expect("nonempty"))
            };
            std::thread::sleep(wait);
        }
    }
}

/// Blocking client for OpenAI-compatible chat-completion endpoints.
/// Shareable across batch workers; the rate gate is internal.
pub struct HttpProvider {
    config: ModelConfig,
    credential: Option<String>,
    client: reqwest::blocking::Client,
    gate: Option<RateGate>,
}

impl HttpProvider {
    /// Builds the client and resolves the credential. A named but unset
    /// credential variable is an error here, before any request is made.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let credential = match &config.credential_ref {
            Some(name) => Some(std::env::var(name).map_err(|_| {
                anyhow::anyhow!("credential variable {name} is not set in the environment")
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .context("cannot build HTTP client")?;
        let gate = config
            .requests_per_minute
            .map(|rpm| RateGate::new(rpm, Duration::from_secs(60)));
        Ok(HttpProvider { config, credential, client, gate })
    }

    /// Sends one prompt, retrying timeouts, rate limits, and server errors
    /// with exponential backoff. Failures are carried in the returned
    /// status, never raised: one document must not abort a batch.
    pub fn complete(&self, prompt: &Prompt) -> RawResponse {
        let url = format!(
            "{}/v1/chat/completions",
            self.config.endpoint_url.trim_end_matches('/')
        );
        let mut body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": self.config.temperature,
        });
        if let Some(max) = self.config.max_output_units {
            body["max_tokens"] = max.into();
        }

        let started = Instant::now();
        let elapsed = |s: Instant| s.elapsed().as_millis() as u64;
        let mut last_failure = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            if let Some(gate) = &self.gate {
                gate.admit();
            }

            let mut request = self.client.post(&url).json(&body);
            if let Some(credential) = &self.credential {
                request = request.bearer_auth(credential);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return match extract_message(response) {
                            Ok(text) => RawResponse {
                                text: Some(text),
                                latency_ms: elapsed(started),
                                request_fingerprint: prompt.fingerprint.clone(),
                                model_name: self.config.model_name.clone(),
                                transport_status: if attempt == 0 {
                                    TransportStatus::Ok
                                } else {
                                    TransportStatus::Retried(attempt)
                                },
                            },
                            Err(err) => RawResponse::failed(
                                prompt,
                                &self.config.model_name,
                                elapsed(started),
                                format!("malformed transport payload: {err}"),
                            ),
                        };
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    last_failure = format!("HTTP {status}");
                    if !retryable {
                        return RawResponse::failed(
                            prompt,
                            &self.config.model_name,
                            elapsed(started),
                            last_failure,
                        );
                    }
                }
                Err(err) => {
                    let retryable = err.is_timeout() || err.is_connect();
                    last_failure = err.to_string();
                    if !retryable {
                        return RawResponse::failed(
                            prompt,
                            &self.config.model_name,
                            elapsed(started),
                            last_failure,
                        );
                    }
                }
            }
        }
        RawResponse::failed(
            prompt,
            &self.config.model_name,
            elapsed(started),
            format!(
                "retries exhausted after {} attempt(s): {last_failure}",
                self.config.max_retries + 1
            ),
        )
    }
}

fn extract_message(response: reqwest::blocking::Response) -> Result<String> {
    let value: serde_json::Value = response.json().context("response is not JSON")?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .context("no choices[0].message.content string in response")
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FixtureIndex(BTreeMap<String, FixtureEntry>);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureEntry {
    model_name: String,
    recorded_at: String,
}

/// Directory of recorded responses: one file per prompt fingerprint
/// (filename is the bare fingerprint hex) plus `index.json` mapping
/// fingerprints to model name and recording time. Reads are shared;
/// writes are serialized through an internal lock.
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

const INDEX_FILE: &str = "index.json";

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into(), write_lock: Mutex::new(()) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Stores a successful response; re-recording a fingerprint overwrites.
    pub fn record(&self, response: &RawResponse) -> Result<()> {
        let Some(text) = &response.text else {
            bail!(
                "cannot record a failed response for fingerprint {}",
                response.request_fingerprint
            );
        };
        self.record_raw(&response.request_fingerprint, &response.model_name, text)
    }

    pub fn record_raw(&self, fingerprint: &str, model_name: &str, text: &str) -> Result<()> {
        let _guard = self.write_lock.lock().expect("fixture store lock");
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("cannot create fixture store {}", self.dir.display()))?;
        let path = self.dir.join(fingerprint);
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write fixture {}", path.display()))?;

        let index_path = self.dir.join(INDEX_FILE);
        let mut index: FixtureIndex = match std::fs::read_to_string(&index_path) {
            Ok(raw) => serde_json::from_str(&raw)
                .with_context(|| format!("corrupt fixture index {}", index_path.display()))?,
            Err(_) => FixtureIndex::default(),
        };
        index.0.insert(
            fingerprint.to_string(),
            FixtureEntry {
                model_name: model_name.to_string(),
                recorded_at: chrono::Utc::now().to_rfc3339(),
            },
        );
        let serialized = serde_json::to_string_pretty(&index).expect("index serialization");
        std::fs::write(&index_path, serialized + "\n")
            .with_context(|| format!("cannot write fixture index {}", index_path.display()))
    }

    /// Exact-fingerprint lookup; a miss is an error naming the fingerprint.
    pub fn replay(&self, fingerprint: &str) -> Result<RawResponse> {
        let path = self.dir.join(fingerprint);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            anyhow::anyhow!(
                "no fixture for fingerprint {fingerprint} in {}",
                self.dir.display()
            )
        })?;
        let model_name = self
            .index_entry(fingerprint)
            .map(|e| e.model_name)
            .unwrap_or_else(|| "replay".to_string());
        Ok(RawResponse {
            text: Some(text),
            latency_ms: 0,
            request_fingerprint: fingerprint.to_string(),
            model_name,
            transport_status: TransportStatus::Ok,
        })
    }

    fn index_entry(&self, fingerprint: &str) -> Option<FixtureEntry> {
        let raw = std::fs::read_to_string(self.dir.join(INDEX_FILE)).ok()?;
        let index: FixtureIndex = serde_json::from_str(&raw).ok()?;
        index.0.get(fingerprint).cloned()
    }
}

/// A model backend in one of the three run modes.
pub enum Provider {
    Live(HttpProvider),
    Replay(FixtureStore),
    /// Live requests whose successful responses are stored as fixtures.
    Record(HttpProvider, FixtureStore),
}

impl Provider {
    /// Answers one prompt. Every failure, including a replay miss or an
    /// unwritable store in record mode, is reported through the response
    /// status so a batch can continue past it.
    pub fn complete(&self, prompt: &Prompt) -> RawResponse {
        match self {
            Provider::Live(http) => http.complete(prompt),
            Provider::Replay(store) => store.replay(&prompt.fingerprint).unwrap_or_else(|err| {
                RawResponse::failed(prompt, "replay", 0, err.to_string())
            }),
            Provider::Record(http, store) => {
                let response = http.complete(prompt);
                if !response.transport_status.is_failed() {
                    if let Err(err) = store.record(&response) {
                        return RawResponse::failed(
                            prompt,
                            &response.model_name,
                            response.latency_ms,
                            format!("fixture store: {err}"),
                        );
                    }
                }
                response
            }
        }
    }
}
