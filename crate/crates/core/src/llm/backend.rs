//! Completion backends: live HTTP (with optional record file), replay, echo.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::parse::parse_dialog;
use super::prompt::{FORWARD_CUE, RESPONSE_CUE, REVERSE_CUE};
use crate::canonical::canonical_hash;
use crate::corpus::to_line;
use crate::error::{Error, Result};
use crate::http::{field, with_retries, JsonClient};

/// Environment variable holding the bearer token for the HTTP backend.
pub const LM_TOKEN_ENV: &str = "Q2D_LM_API_TOKEN";

pub const FORWARD_TEMPERATURE: f64 = 0.6;
pub const FORWARD_MAX_TOKENS: u32 = 512;
pub const REVERSE_MAX_TOKENS: u32 = 64;
pub const RESPONSE_MAX_TOKENS: u32 = 128;

const ECHO_GREETING: &str = "Hello, what would you like to know?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl LmRequest {
    pub fn forward(prompt: String, temperature: f64) -> Self {
        LmRequest {
            prompt,
            temperature,
            max_tokens: FORWARD_MAX_TOKENS,
            stop: Some(vec!["\nQuestion:".into()]),
        }
    }

    pub fn reverse(prompt: String) -> Self {
        LmRequest {
            prompt,
            temperature: 0.0,
            max_tokens: REVERSE_MAX_TOKENS,
            stop: Some(vec!["\n".into()]),
        }
    }

    pub fn response(prompt: String) -> Self {
        LmRequest {
            prompt,
            temperature: FORWARD_TEMPERATURE,
            max_tokens: RESPONSE_MAX_TOKENS,
            stop: Some(vec!["\nUser:".into()]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::Input("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 || self.max_tokens == 0 {
            return Err(Error::Input("temperature must be ≥ 0 and max_tokens > 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical request JSON.
    pub fn key(&self) -> String {
        canonical_hash(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Echo,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Replay => "replay",
            BackendKind::Echo => "echo",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            "echo" => Ok(BackendKind::Echo),
            other => Err(Error::Config(format!(
                "unknown backend kind {other:?} (expected http, replay or echo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmBackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_path: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_in_flight() -> usize {
    8
}

fn default_timeout_ms() -> u64 {
    120_000
}

impl LmBackendConfig {
    pub fn echo() -> Self {
        Self::of_kind(BackendKind::Echo)
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        LmBackendConfig {
            replay_path: Some(path.into()),
            ..Self::of_kind(BackendKind::Replay)
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        LmBackendConfig {
            endpoint: Some(endpoint.into()),
            ..Self::of_kind(BackendKind::Http)
        }
    }

    fn of_kind(kind: BackendKind) -> Self {
        LmBackendConfig {
            kind,
            endpoint: None,
            replay_path: None,
            record_path: None,
            max_in_flight: default_in_flight(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => {
                Err(Error::Config("http backend requires an endpoint".into()))
            }
            BackendKind::Replay if self.replay_path.is_none() => {
                Err(Error::Config("replay backend requires a replay file".into()))
            }
            _ if self.max_in_flight == 0 => Err(Error::Config("max_in_flight must be ≥ 1".into())),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn LmBackend>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Echo => Arc::new(EchoBackend),
            BackendKind::Replay => Arc::new(ReplayBackend::load(self.replay_path.as_ref().unwrap())?),
            BackendKind::Http => {
                let token = std::env::var(LM_TOKEN_ENV).ok().filter(|t| !t.is_empty());
                let mut b = HttpBackend::new(
                    self.endpoint.clone().unwrap(),
                    Duration::from_millis(self.timeout_ms),
                    token,
                    self.max_in_flight,
                );
                if let Some(p) = &self.record_path {
                    b = b.recording_to(p)?;
                }
                Arc::new(b)
            }
        })
    }
}

pub trait LmBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, req: &LmRequest) -> Result<String>;
}

/// One-shot convenience over [`LmBackendConfig::build`].
pub fn complete(cfg: &LmBackendConfig, req: &LmRequest) -> Result<String> {
    cfg.build()?.complete(req)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordLine {
    pub key: String,
    pub request: LmRequest,
    pub completion: String,
}

fn load_records(path: &Path) -> Result<HashMap<String, String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
            text: line.clone(),
        })?;
        map.insert(rec.key, rec.completion);
    }
    Ok(map)
}

/// Serves recorded completions by request hash.
pub struct ReplayBackend {
    records: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(ReplayBackend {
            records: load_records(path.as_ref())?,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl LmBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, req: &LmRequest) -> Result<String> {
        req.validate()?;
        let key = req.key();
        self.records.get(&key).cloned().ok_or(Error::ReplayMiss { key })
    }
}

/// Deterministic stand-in that turns every pipeline step into an identity.
///
/// * forward prompt → `Assistant: <greeting>\nUser: <question>`
/// * reverse prompt → the input dialog's final user turn
/// * response prompt → a fixed sentence quoting the last user turn
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl EchoBackend {
    fn last_block<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
        let start = prompt.rfind(&format!("\n{label}"))? + 1 + label.len();
        Some(&prompt[start..])
    }

    fn last_user_turn(block: &str) -> Option<String> {
        parse_dialog(block)
            .ok()
            .and_then(|d| d.last_user_turn().map(|t| t.text.clone()))
    }

    pub fn respond(prompt: &str) -> String {
        if let Some(body) = prompt.strip_suffix(FORWARD_CUE) {
            let question = Self::last_block(body, "Question: ")
                .map(str::to_string)
                .unwrap_or_else(|| body.lines().last().unwrap_or("").to_string());
            return format!("\nAssistant: {ECHO_GREETING}\nUser: {question}");
        }
        if let Some(body) = prompt.strip_suffix(REVERSE_CUE) {
            let block = Self::last_block(body, "Dialog:\n").unwrap_or(body);
            return format!(" {}", Self::last_user_turn(block).unwrap_or_default());
        }
        if let Some(body) = prompt.strip_suffix(RESPONSE_CUE) {
            let block = Self::last_block(body, "Dialog:\n").unwrap_or(body);
            let q = Self::last_user_turn(block).unwrap_or_default();
            return format!(" Here is what I found about \"{q}\".");
        }
        prompt.lines().last().unwrap_or("").to_string()
    }
}

impl LmBackend for EchoBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Echo
    }

    fn complete(&self, req: &LmRequest) -> Result<String> {
        req.validate()?;
        Ok(Self::respond(&req.prompt))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

struct Recorder {
    path: PathBuf,
    file: File,
    seen: HashMap<String, String>,
}

/// `POST endpoint {prompt, temperature, max_tokens, stop} → {text}`.
pub struct HttpBackend {
    endpoint: String,
    client: JsonClient,
    gate: Gate,
    retries: u32,
    recorder: Option<Mutex<Recorder>>,
}

impl HttpBackend {
    pub fn new(endpoint: String, timeout: Duration, bearer: Option<String>, max_in_flight: usize) -> Self {
        HttpBackend {
            endpoint,
            client: JsonClient::new(timeout, bearer),
            gate: Gate::new(max_in_flight.max(1)),
            retries: 2,
            recorder: None,
        }
    }

    /// Appends every completion to `path`; entries already there are served
    /// without a request.
    pub fn recording_to(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let seen = if path.exists() {
            load_records(&path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        self.recorder = Some(Mutex::new(Recorder { path, file, seen }));
        Ok(self)
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }
}

impl LmBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&self, req: &LmRequest) -> Result<String> {
        req.validate()?;
        let key = req.key();
        if let Some(rec) = &self.recorder {
            if let Some(hit) = rec.lock().expect("recorder lock").seen.get(&key) {
                return Ok(hit.clone());
            }
        }
        let body = json!({
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "stop": req.stop.clone().unwrap_or_default(),
        });
        let resp = {
            let _pass = self.gate.acquire();
            with_retries(self.retries, || self.client.post(&self.endpoint, &body))?
        };
        let text = field(&self.endpoint, &resp, "text")?
            .as_str()
            .ok_or_else(|| Error::Service {
                endpoint: self.endpoint.clone(),
                status: 200,
                message: "\"text\" is not a string".into(),
            })?
            .to_string();
        if let Some(rec) = &self.recorder {
            let mut rec = rec.lock().expect("recorder lock");
            if !rec.seen.contains_key(&key) {
                let line = to_line(&RecordLine {
                    key: key.clone(),
                    request: req.clone(),
                    completion: text.clone(),
                });
                let path = rec.path.clone();
                rec.file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
                rec.seen.insert(key, text.clone());
            }
        }
        Ok(text)
    }
}

/// Appends `(request, completion)` to a replay file; used to build fixtures.
pub fn append_record(path: impl AsRef<Path>, req: &LmRequest, completion: &str) -> Result<()> {
    let path = path.as_ref();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = to_line(&RecordLine {
        key: req.key(),
        request: req.clone(),
        completion: completion.to_string(),
    });
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}
