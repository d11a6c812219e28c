use std::path::PathBuf;
use std::sync::{mpsc, Arc};

use admitqa::config::AppConfig;
use admitqa::generate::{GroundedMockProvider, LlmProvider, ScriptStep, ScriptedProvider};
use admitqa::service::ChatService;
use admitqa::session::ManualClock;
use admitqa_server::{router, AppState, IngestSources};
use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use serde_json::{json, Value};
use tower::ServiceExt;

const TOKEN: &str = "s3cret";
const TUITION_Q: &str = "Học phí ngành Công nghệ thông tin là bao nhiêu?";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn state(provider: Arc<dyn LlmProvider>) -> AppState {
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2025, 7, 1, 8, 0, 0).unwrap()));
    let mut cfg = AppConfig::default();
    cfg.service.admin_token = Some(TOKEN.into());
    let svc = ChatService::in_memory(admitqa::fixture::engine(provider), cfg.prices.clone(), clock);
    let mut st = AppState::new(svc, cfg);
    st.sources = Some(IngestSources {
        corpus: fixtures().join("corpus.jsonl"),
        faq: fixtures().join("faq.jsonl"),
        snapshot_dir: None,
    });
    st
}

fn grounded() -> AppState {
    state(Arc::new(GroundedMockProvider::default()))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, String) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let body = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8(body.to_vec()).unwrap())
}

async fn send_json(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let (status, body) = send(app, req).await;
    (status, serde_json::from_str(&body).unwrap_or(Value::Null))
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

fn admin_post(uri: &str, body: Value) -> Request<Body> {
    let mut req = post(uri, body);
    req.headers_mut().insert(header::AUTHORIZATION, format!("Bearer {TOKEN}").parse().unwrap());
    req
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

async fn new_session(app: &Router) -> String {
    let (status, body) = send_json(app, post("/v1/sessions", json!({}))).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

/// `(event, data)` pairs from an SSE body.
fn sse_events(body: &str) -> Vec<(String, Value)> {
    body.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.strip_prefix(' ').unwrap_or(v));
                }
            }
            Some((name?, serde_json::from_str(&data).ok()?))
        })
        .collect()
}

#[tokio::test]
async fn streamed_answer_carries_tokens_citations_and_done() {
    let app = router(grounded());
    let id = new_session(&app).await;
    let res = app.clone().oneshot(post(&format!("/v1/sessions/{id}/messages"), json!({ "text": TUITION_Q }))).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert!(res.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let body = String::from_utf8(to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec()).unwrap();
    let events = sse_events(&body);

    let text: String = events.iter().filter(|(n, _)| n == "token").map(|(_, d)| d["text"].as_str().unwrap()).collect();
    assert!(!text.is_empty());
    let citations: Vec<_> = events.iter().filter(|(n, _)| n == "citation").collect();
    assert!(!citations.is_empty());
    let (last, done) = events.last().unwrap();
    assert_eq!(last, "done");
    assert_eq!(done["refused"], false);
    assert_eq!(done["record_id"], format!("{id}-0000"));

    // Every citation resolves through the units endpoint.
    for (_, c) in citations {
        let uid = c["id"].as_str().unwrap();
        let (status, unit) = send_json(&app, get(&format!("/v1/units/{uid}"))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(unit["text"], c["text"]);
    }
}

#[tokio::test]
async fn json_mode_returns_the_reply() {
    let app = router(grounded());
    let id = new_session(&app).await;
    let (status, reply) =
        send_json(&app, post(&format!("/v1/sessions/{id}/messages?stream=false"), json!({ "text": TUITION_Q }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["session_id"], id);
    assert_eq!(reply["turn_index"], 0);
    assert!(!reply["citations"].as_array().unwrap().is_empty());
    assert!(reply["answer"].as_str().unwrap().contains('['));
}

#[tokio::test]
async fn verdicts_drive_daily_accuracy_and_cost() {
    let app = router(grounded());
    let id = new_session(&app).await;
    let mut record_ids = Vec::new();
    for q in [TUITION_Q, "Điểm chuẩn ngành Kỹ thuật phần mềm năm 2024 là bao nhiêu?"] {
        let (status, reply) = send_json(&app, post(&format!("/v1/sessions/{id}/messages?stream=false"), json!({ "text": q }))).await;
        assert_eq!(status, StatusCode::OK, "{reply}");
        record_ids.push(reply["record_id"].as_str().unwrap().to_string());
    }

    let url = |r: &str| format!("/v1/records/{r}/verdict");
    let (status, _) = send_json(&app, post(&url(&record_ids[0]), json!({ "verdict": "correct" }))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    for (r, v) in record_ids.iter().zip(["correct", "incorrect"]) {
        let (status, rec) = send_json(&app, admin_post(&url(r), json!({ "verdict": v, "rater": "qa" }))).await;
        assert_eq!(status, StatusCode::OK, "{rec}");
        assert_eq!(rec["verdict"], v);
    }
    let (status, _) = send_json(&app, admin_post(&url("nope-0000"), json!({ "verdict": "correct" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send_json(&app, admin_post(&url(&record_ids[0]), json!({ "verdict": "maybe" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, daily) = send_json(&app, get("/v1/metrics/daily?from=2025-07-01&to=2025-07-01")).await;
    assert_eq!(status, StatusCode::OK);
    let day = &daily["days"][0];
    assert_eq!(day["date"], "2025-07-01");
    assert!((day["accuracy"].as_f64().unwrap() - 0.5).abs() < 1e-12, "{day}");

    let (status, _) = send_json(&app, get("/v1/metrics/daily?from=2025-07-02&to=2025-07-01")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send_json(&app, get("/v1/metrics/daily?from=yesterday&to=2025-07-01")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, cost) = send_json(&app, get("/v1/metrics/cost?model=gpt-4o-mini")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(cost["records"], 2);
    assert!(cost["input_tokens"].as_u64().unwrap() > 0);
    // Two short turns round to zero cents.
    assert_eq!(cost["usd"].as_f64().unwrap(), 0.0);
    let (status, _) = send_json(&app, get("/v1/metrics/cost?model=unpriced")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn client_errors() {
    let app = router(grounded());
    let (status, body) =
        send_json(&app, post("/v1/sessions/0123456789abcdef0123456789abcdef/messages", json!({ "text": "hi" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["retryable"], false);

    let id = new_session(&app).await;
    let uri = format!("/v1/sessions/{id}/messages");
    let malformed = Request::post(&uri).body(Body::from("{\"text\": ")).unwrap();
    let (status, body) = send_json(&app, malformed).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("malformed"));
    let (status, _) = send_json(&app, post(&uri, json!({ "text": "   " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send_json(&app, post(&uri, json!({ "text": "x".repeat(4001) }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = send_json(&app, get("/v1/units/not-a-unit")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn provider_outage_is_a_retryable_503() {
    let outage = vec![ScriptStep::Error { error: "connection refused".into() }; 8];
    let app = router(state(Arc::new(ScriptedProvider::new(outage))));
    let id = new_session(&app).await;
    let (status, body) = send_json(
        &app,
        post(&format!("/v1/sessions/{id}/messages"), json!({ "text": "Tell me about student clubs at the university." })),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["retryable"], true);
}

#[tokio::test]
async fn ingest_is_admin_only_and_exclusive() {
    let st = grounded();
    let app = router(st.clone());

    let (status, _) = send_json(&app, post("/v1/admin/ingest", json!({}))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    // Hold the ingest lock from another thread and try again over HTTP.
    let (started_tx, started_rx) = mpsc::channel();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let svc = st.service.clone();
    let cfg = st.config.clone();
    let holder = std::thread::spawn(move || {
        svc.reingest(|| {
            started_tx.send(()).unwrap();
            release_rx.recv().unwrap();
            let f = fixtures();
            admitqa::service::build_index(&cfg, &f.join("corpus.jsonl"), &f.join("faq.jsonl"))
        })
        .unwrap()
    });
    started_rx.recv().unwrap();
    let (status, body) = send_json(&app, admin_post("/v1/admin/ingest", json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    let (_, health) = send_json(&app, get("/v1/health")).await;
    assert_eq!(health["ingest_running"], true);
    release_tx.send(()).unwrap();
    holder.join().unwrap();

    let (status, summary) = send_json(&app, admin_post("/v1/admin/ingest", json!({}))).await;
    assert_eq!(status, StatusCode::OK, "{summary}");
    let units = summary["units"].as_u64().unwrap();
    let (_, health) = send_json(&app, get("/v1/health")).await;
    assert_eq!(health["units"].as_u64().unwrap(), units);
    assert_eq!(health["ingest_running"], false);
}

#[tokio::test]
async fn admin_routes_refused_without_a_configured_token() {
    let mut st = grounded();
    st.admin_token = None;
    let app = router(st);
    let (status, _) = send_json(&app, admin_post("/v1/admin/ingest", json!({}))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn health_reports_the_index() {
    let app = router(grounded());
    let (status, health) = send_json(&app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert!(health["units"].as_u64().unwrap() > 0);
    assert_eq!(health["model"], "grounded-mock");
}
