//! The remote adapter against a local generation endpoint backed by the
//! deterministic stub.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use ticketgraph::adapter::{GenerationRequest, GenerationResponse};
use ticketgraph::{GraphTemplate, StubAdapter, TextGenerationAdapter};
use ticketgraph_cli::commands;
use ticketgraph_cli::settings::AdapterMode;

use common::*;

#[derive(Clone)]
struct Endpoint {
    stub: Arc<StubAdapter>,
    calls: Arc<AtomicUsize>,
    /// Answer 503 to this many calls first.
    fail_first: usize,
    delay: Duration,
}

async fn generate(State(ep): State<Endpoint>, Json(req): Json<GenerationRequest>) -> Result<Json<GenerationResponse>, StatusCode> {
    let n = ep.calls.fetch_add(1, Ordering::SeqCst);
    if n < ep.fail_first {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    tokio::time::sleep(ep.delay).await;
    let text = ep.stub.generate(&req).map_err(|_| StatusCode::BAD_REQUEST)?;
    Ok(Json(GenerationResponse { text }))
}

/// Starts the endpoint on its own runtime thread and returns its URL.
fn spawn_endpoint(ep: Endpoint) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/generate", post(generate)).with_state(ep);
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}/generate", rx.recv().unwrap())
}

fn endpoint(fail_first: usize, delay: Duration) -> (Endpoint, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let ep = Endpoint {
        stub: Arc::new(StubAdapter::new(GraphTemplate::standard())),
        calls: calls.clone(),
        fail_first,
        delay,
    };
    (ep, calls)
}

#[test]
fn remote_matches_stub() {
    let dir = tempfile::tempdir().unwrap();
    let stub_settings = built_fixture(dir.path());
    let stub_answer = commands::query(&commands::load_engine(&stub_settings).unwrap(), REPRODUCE_QUERY).unwrap();

    let (ep, calls) = endpoint(0, Duration::ZERO);
    let mut remote = stub_settings.clone();
    remote.adapter = AdapterMode::Remote;
    remote.adapter_url = Some(spawn_endpoint(ep));
    let remote_answer = commands::query(&commands::load_engine(&remote).unwrap(), REPRODUCE_QUERY).unwrap();
    assert!(calls.load(Ordering::SeqCst) >= 3, "parse, plan and compose go to the endpoint");
    assert_eq!(remote_answer, stub_answer);
}

#[test]
fn retries_transient_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = built_fixture(dir.path());
    let (ep, calls) = endpoint(2, Duration::ZERO);
    s.adapter = AdapterMode::Remote;
    s.adapter_url = Some(spawn_endpoint(ep));
    s.adapter_retries = 2;
    let answer = commands::query(&commands::load_engine(&s).unwrap(), REPRODUCE_QUERY).unwrap().answer;
    assert!(answer.warnings.is_empty(), "{:?}", answer.warnings);
    assert!(calls.load(Ordering::SeqCst) >= 5);
}

#[test]
fn late_endpoint_falls_back_to_deterministic_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = built_fixture(dir.path());
    let (ep, _) = endpoint(0, Duration::from_millis(400));
    s.adapter = AdapterMode::Remote;
    s.adapter_url = Some(spawn_endpoint(ep));
    s.adapter_deadline_ms = 100;
    let answer = commands::query(&commands::load_engine(&s).unwrap(), REPRODUCE_QUERY).unwrap().answer;
    assert_eq!(answer.mode, ticketgraph::AnswerMode::Graph);
    assert!(answer.text.contains(ticketgraph::synthetic::LOGIN_FIXTURE_STEPS));
    assert!(!answer.warnings.is_empty(), "timeouts should be reported");
}
