//! Wire contracts of the scoring service and the HTTP completion backend,
//! exercised against local mock servers.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{scoring_handler, MockServer, DEAD_URL};
use q2d_core::llm::{HttpBackend, LmBackend, LmBackendConfig, LmRequest, ReplayBackend};
use q2d_core::scoring::{cosine, BuiltinEmbedder, Embedder, NliScorer, RemoteScorer, ScoreCache};
use q2d_core::Error;
use serde_json::json;

fn scorer(url: &str, cache: Option<ScoreCache>) -> RemoteScorer {
    RemoteScorer::new(url, Duration::from_secs(5), cache).with_retries(0)
}

#[test]
fn embed_returns_unit_vectors_in_request_order() {
    let server = MockServer::start(scoring_handler(|_, _| 0.5));
    let texts = ["who plays haley", "where is assam", "what is the capital"];
    let got = scorer(&server.url, None).embed(&texts).unwrap();
    let want = BuiltinEmbedder.embed(&texts).unwrap();
    assert_eq!(got, want);
    for v in &got {
        assert!((v.norm() - 1.0).abs() < 1e-6);
    }
    let req = &server.requests()[0];
    assert_eq!((req.method.as_str(), req.url.as_str()), ("POST", "/embed"));
    assert_eq!(req.body, json!({"texts": texts}));
}

#[test]
fn duplicate_texts_are_sent_once() {
    let server = MockServer::start(scoring_handler(|_, _| 0.5));
    let v = scorer(&server.url, None).embed(&["a b", "c", "a b"]).unwrap();
    assert_eq!(v[0], v[2]);
    assert_eq!(server.requests()[0].body, json!({"texts": ["a b", "c"]}));
}

#[test]
fn nli_contract() {
    let server = MockServer::start(scoring_handler(|p, h| if h.contains(p) { 0.9 } else { 0.1 }));
    let s = scorer(&server.url, None);
    assert_eq!(s.nli_score("paris", "the capital is paris").unwrap(), 0.9);
    assert_eq!(s.nli_score("rome", "the capital is paris").unwrap(), 0.1);
    assert_eq!(
        server.requests()[0].body,
        json!({"premise": "paris", "hypothesis": "the capital is paris"})
    );
}

#[test]
fn client_errors_map_to_service_errors_without_retry() {
    for status in [400u16, 413] {
        let server = MockServer::start(move |_| (status, json!({"error": "rejected"})));
        let err = RemoteScorer::new(&server.url, Duration::from_secs(5), None)
            .embed(&["x"])
            .unwrap_err();
        match err {
            Error::Service {
                status: s, ref message, ..
            } => {
                assert_eq!(s, status);
                assert!(message.contains("rejected"), "{message}");
            }
            e => panic!("{e:?}"),
        }
        assert_eq!(server.hits(), 1, "status {status} must not be retried");
    }
}

#[test]
fn server_errors_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let inner = scoring_handler(|_, _| 0.5);
    let server = MockServer::start(move |req| {
        if c.fetch_add(1, Ordering::SeqCst) == 0 {
            (503, json!({"error": "warming up"}))
        } else {
            inner(req)
        }
    });
    let v = RemoteScorer::new(&server.url, Duration::from_secs(5), None)
        .embed(&["x"])
        .unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(server.hits(), 2);
}

#[test]
fn unreachable_is_transport_error() {
    let err = scorer(DEAD_URL, None).embed(&["x"]).unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err:?}");
}

#[test]
fn malformed_responses_are_rejected() {
    let cases = [
        json!({"vectors": [[3.0, 4.0]], "dim": 2}),
        json!({"vectors": [[0.6, 0.8], [1.0, 0.0]], "dim": 2}),
        json!({"vectors": [[0.6, 0.8]], "dim": 3}),
        json!({"dim": 2}),
    ];
    for body in cases {
        let b = body.clone();
        let server = MockServer::start(move |_| (200, b.clone()));
        let err = scorer(&server.url, None).embed(&["x"]).unwrap_err();
        assert!(matches!(err, Error::Service { status: 200, .. }), "{body} → {err:?}");
    }
    let server = MockServer::start(|_| (200, json!({"entailment": 1.5})));
    assert!(scorer(&server.url, None).nli_score("p", "h").is_err());
}

#[test]
fn cached_scores_need_no_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.jsonl");
    let texts = ["who played ardra", "who played the character"];
    let (first, p) = {
        let server = MockServer::start(scoring_handler(|_, _| 0.75));
        let s = scorer(&server.url, Some(ScoreCache::open(&path).unwrap()));
        let v = s.embed(&texts).unwrap();
        let p = s.nli_score("doc", "hyp").unwrap();
        assert_eq!(server.hits(), 2);
        (v, p)
    };
    let s = scorer(DEAD_URL, Some(ScoreCache::open(&path).unwrap()));
    assert_eq!(s.embed(&texts).unwrap(), first);
    assert_eq!(s.nli_score("doc", "hyp").unwrap(), p);
    assert_eq!(cosine(&first[0], &first[0]).unwrap(), 1.0);
    // Unseen text still goes to the (dead) network.
    assert!(matches!(s.embed(&["new text"]), Err(Error::Transport { .. })));
}

fn completion_server(calls: Arc<AtomicUsize>) -> MockServer {
    MockServer::start(move |req| {
        calls.fetch_add(1, Ordering::SeqCst);
        let prompt = req.body["prompt"].as_str().unwrap_or_default();
        (200, json!({"text": format!(" completion for {} chars", prompt.len())}))
    })
}

#[test]
fn http_backend_wire_format() {
    let server = completion_server(Arc::new(AtomicUsize::new(0)));
    let b = HttpBackend::new(server.url.clone(), Duration::from_secs(5), Some("s3cret".into()), 2);
    let req = LmRequest::reverse("Dialog:\nUser: hi\nQuestion:".into());
    assert_eq!(b.complete(&req).unwrap(), " completion for 26 chars");
    let seen = &server.requests()[0];
    assert_eq!(
        seen.body,
        json!({"prompt": req.prompt, "temperature": 0.0, "max_tokens": 64, "stop": ["\n"]})
    );
}

#[test]
fn record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.jsonl");
    let calls = Arc::new(AtomicUsize::new(0));
    let server = completion_server(calls.clone());
    let reqs: Vec<LmRequest> = (0..5)
        .map(|i| LmRequest::forward(format!("Question: q{i}\nDialog:"), 0.6))
        .collect();

    let live = HttpBackend::new(server.url.clone(), Duration::from_secs(5), None, 4)
        .recording_to(&rec)
        .unwrap();
    let first: Vec<String> = reqs.iter().map(|r| live.complete(r).unwrap()).collect();
    let again: Vec<String> = reqs.iter().map(|r| live.complete(r).unwrap()).collect();
    assert_eq!(first, again);
    assert_eq!(
        calls.load(Ordering::SeqCst),
        5,
        "repeats are served from the record file"
    );

    let replay = ReplayBackend::load(&rec).unwrap();
    assert_eq!(replay.len(), 5);
    let replayed: Vec<String> = reqs.iter().map(|r| replay.complete(r).unwrap()).collect();
    assert_eq!(replayed, first);
    let miss = replay.complete(&LmRequest::forward("unseen".into(), 0.6)).unwrap_err();
    assert!(matches!(miss, Error::ReplayMiss { .. }));

    // A changed temperature is a different request.
    assert!(replay
        .complete(&LmRequest::forward(reqs[0].prompt.clone(), 0.7))
        .is_err());
}

#[test]
fn in_flight_requests_are_bounded() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (cur, pk) = (current.clone(), peak.clone());
    let server = MockServer::start(move |_| {
        let now = cur.fetch_add(1, Ordering::SeqCst) + 1;
        pk.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(40));
        cur.fetch_sub(1, Ordering::SeqCst);
        (200, json!({"text": "ok"}))
    });
    let mut cfg = LmBackendConfig::http(server.url.clone());
    cfg.max_in_flight = 2;
    let backend = cfg.build().unwrap();
    std::thread::scope(|s| {
        for i in 0..8 {
            let b = backend.clone();
            s.spawn(move || b.complete(&LmRequest::forward(format!("p{i}"), 0.6)).unwrap());
        }
    });
    assert_eq!(server.hits(), 8);
    assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
}
