#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use q2d_core::scoring::{BuiltinEmbedder, Embedder};
use serde_json::{json, Value};

/// Logged request: method, path (with query string) and JSON body.
#[derive(Debug, Clone)]
pub struct Seen {
    pub method: String,
    pub url: String,
    pub body: Value,
}

type Handler = dyn Fn(&Seen) -> (u16, Value) + Send + Sync;

/// A local HTTP server answering every request with `handler`.
pub struct MockServer {
    pub url: String,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
    hits: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Seen) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock server"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip listener"));
        let hits = Arc::new(AtomicUsize::new(0));
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread = {
            let (server, hits, log) = (server.clone(), hits.clone(), log.clone());
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let mut body = String::new();
                    let _ = req.as_reader().read_to_string(&mut body);
                    let seen = Seen {
                        method: req.method().to_string(),
                        url: req.url().to_string(),
                        body: serde_json::from_str(&body).unwrap_or(Value::Null),
                    };
                    hits.fetch_add(1, Ordering::SeqCst);
                    log.lock().unwrap().push(seen.clone());
                    let handler = handler.clone();
                    // One thread per request so concurrency limits are observable.
                    std::thread::spawn(move || {
                        let (status, payload) = handler(&seen);
                        let resp = tiny_http::Response::from_string(payload.to_string())
                            .with_status_code(status)
                            .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
                        let _ = req.respond(resp);
                    });
                }
            })
        };
        MockServer {
            url,
            server,
            thread: Some(thread),
            hits,
            log,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.log.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Scoring service stand-in: `/embed` backed by the builtin embedder,
/// `/nli` returning `nli(premise, hypothesis)`.
pub fn scoring_handler(nli: impl Fn(&str, &str) -> f64 + Send + Sync + 'static) -> impl Fn(&Seen) -> (u16, Value) {
    move |req: &Seen| match req.url.as_str() {
        "/embed" => {
            let Some(texts) = req.body["texts"].as_array() else {
                return (400, json!({"error": "texts must be a list"}));
            };
            let texts: Vec<&str> = texts.iter().filter_map(Value::as_str).collect();
            if texts.is_empty() {
                return (400, json!({"error": "texts is empty"}));
            }
            let vecs = BuiltinEmbedder.embed(&texts).unwrap();
            let vectors: Vec<&[f64]> = vecs.iter().map(|v| v.values()).collect();
            (200, json!({"vectors": vectors, "dim": vecs[0].dimension()}))
        }
        "/nli" => {
            let (p, h) = (req.body["premise"].as_str(), req.body["hypothesis"].as_str());
            match (p, h) {
                (Some(p), Some(h)) if !p.is_empty() && !h.is_empty() => (200, json!({"entailment": nli(p, h)})),
                _ => (400, json!({"error": "premise and hypothesis are required"})),
            }
        }
        "/health" => (200, json!({"status": "ok"})),
        _ => (404, json!({"error": "not found"})),
    }
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(rel: &str) -> PathBuf {
    fixtures_dir().join(rel)
}

/// An address nothing listens on; any request fails at the transport level.
pub const DEAD_URL: &str = "http://127.0.0.1:9";
