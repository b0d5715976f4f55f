use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use questwriter_core::model::{validate_corpus, Corpus, Origin};
use questwriter_core::seed::splitmix64;
use questwriter_core::synthetic::{demo_spec, demo_start};
use questwriter_core::writer::{BackendError, CompletionParams, LmBackend, MockBackend};
use questwriter_service::{router, AppState, ServiceConfig, Snapshot};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(backend: Arc<dyn LmBackend>) -> Router {
    router(AppState::new(ServiceConfig::new(backend)))
}

fn app() -> Router {
    app_with(Arc::new(MockBackend::Synthetic))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn create_body() -> Value {
    let start = demo_start();
    json!({
        "spec": demo_spec(),
        "start_utterance": {"speaker": start.speaker, "text": start.text, "support_facts": start.support_facts},
        "config": {"prompt": {"seed": 7}}
    })
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(create_body())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn round(app: &Router, id: &str, k: usize) -> (StatusCode, Value) {
    call(app, "POST", &format!("/sessions/{id}/rounds"), Some(json!({"k": k}))).await
}

async fn commit(app: &Router, id: &str, cid: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/sessions/{id}/commit"), Some(json!({"candidate_id": cid}))).await
}

fn assert_error(body: &Value, code: &str) {
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].is_string());
    assert!(body.get("detail").is_some());
}

#[tokio::test]
async fn create_gives_distinct_ids_and_one_node() {
    let app = app();
    let a = create(&app).await;
    let b = create(&app).await;
    assert_ne!(a, b);
    let (status, view) = call(&app, "GET", &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["tree"]["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(view["revision"], 0);
    assert_eq!(view["committed_path"], json!(["start"]));
}

#[tokio::test]
async fn create_rejects_bad_input() {
    let app = app();
    let mut ghost = create_body();
    ghost["start_utterance"]["speaker"] = json!("Ghost");
    let (status, body) = call(&app, "POST", "/sessions", Some(ghost)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&body, "invalid_request");

    let mut no_player = create_body();
    no_player["spec"]["participants"] = json!([{"name": "Agnes Needham"}]);
    let (status, body) = call(&app, "POST", "/sessions", Some(no_player)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["detail"]["findings"].as_array().unwrap().iter().any(|f| f["kind"] == "no_player"));

    let mut bad_fact = create_body();
    bad_fact["start_utterance"]["support_facts"] = json!([{"source": "Nowhere", "i": 0}]);
    assert_eq!(call(&app, "POST", "/sessions", Some(bad_fact)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let req = Request::builder().method("POST").uri("/sessions").body(Body::from("{not json")).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn round_returns_candidates_with_fact_texts() {
    let app = app();
    let id = create(&app).await;
    let (status, body) = round(&app, &id, 3).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let cands = body["candidates"].as_array().unwrap();
    assert_eq!(cands.len(), 3);
    assert_eq!(body["round"], 1);
    assert_eq!(body["revision"], 1);
    for c in cands {
        assert!(c["id"].as_str().unwrap().starts_with("r01c"));
        for f in c["facts"].as_array().unwrap() {
            assert!(!f["text"].as_str().unwrap().is_empty());
        }
    }
    let (status, body) = round(&app, &id, 3).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "round_open");
}

#[tokio::test]
async fn ks_round_shows_selected_fact_text() {
    let app = app();
    let mut req = create_body();
    req["config"]["prompt"]["mode"] = json!("ks");
    let (_, created) = call(&app, "POST", "/sessions", Some(req)).await;
    let id = created["session_id"].as_str().unwrap();
    let (status, body) = round(&app, id, 2).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let spec = demo_spec();
    let texts: Vec<String> = spec.knowledge().iter().flat_map(|k| k.statements.iter().map(|s| s.text.clone())).collect();
    for c in body["candidates"].as_array().unwrap() {
        let facts = c["facts"].as_array().unwrap();
        assert_eq!(facts.len(), 1, "{c}");
        assert!(texts.contains(&facts[0]["text"].as_str().unwrap().to_string()));
    }
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app();
    for (m, uri, body) in [
        ("GET", "/sessions/nope", None),
        ("POST", "/sessions/nope/rounds", Some(json!({"k": 3}))),
        ("POST", "/sessions/nope/commit", Some(json!({"candidate_id": "x"}))),
        ("PATCH", "/sessions/nope/nodes/start", Some(json!({"text": "x"}))),
        ("GET", "/sessions/nope/export", None),
    ] {
        let (status, body) = call(&app, m, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{m} {uri}");
        assert_error(&body, "not_found");
    }
}

#[tokio::test]
async fn ten_rounds_give_thirty_one_nodes_and_valid_export() {
    let app = app();
    let id = create(&app).await;
    for r in 1..=10 {
        let (status, body) = round(&app, &id, 3).await;
        assert_eq!(status, StatusCode::OK, "round {r}: {body}");
        let cid = body["candidates"][0]["id"].as_str().unwrap().to_string();
        let (status, view) = commit(&app, &id, &cid).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(view["committed_path"].as_array().unwrap().len(), r + 1);
    }
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["tree"]["nodes"].as_array().unwrap().len(), 31);
    assert_eq!(view["revision"], 20);

    let (status, doc) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let corpus = Corpus::from_json(&doc.to_string()).unwrap();
    let report = validate_corpus(&corpus);
    assert!(report.is_clean(), "{:?}", report.findings);
    let tree = &corpus.dialogues[0].tree;
    assert_eq!(tree.nodes.len(), 31);
    let uncommitted = tree.nodes.values().filter(|n| n.origin == Origin::GeneratedUncommitted).count();
    assert_eq!(uncommitted, 20);
    assert_eq!(corpus, Corpus::from_json(&corpus.to_canonical_json()).unwrap());
}

#[tokio::test]
async fn commit_rules() {
    let app = app();
    let id = create(&app).await;
    let (status, body) = commit(&app, &id, "r01c1").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "no_open_round");

    let (_, r1) = round(&app, &id, 3).await;
    let first = r1["candidates"][0]["id"].as_str().unwrap().to_string();
    let stale = r1["candidates"][1]["id"].as_str().unwrap().to_string();
    assert_eq!(commit(&app, &id, "start").await.0, StatusCode::CONFLICT);
    assert_eq!(commit(&app, &id, &first).await.0, StatusCode::OK);
    round(&app, &id, 3).await;
    let (status, body) = commit(&app, &id, &stale).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "not_a_candidate");
}

#[tokio::test]
async fn stale_revision_changes_nothing() {
    let app = app();
    let id = create(&app).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/rounds"), Some(json!({"k": 2, "revision": 5}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "stale_revision");
    assert_eq!(body["detail"]["current_revision"], 0);

    let (_, before) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(before["rounds"], 0);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/rounds"), Some(json!({"k": 2, "revision": 0}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(
        &app,
        "PATCH",
        &format!("/sessions/{id}/nodes/start"),
        Some(json!({"text": "Changed", "revision": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let start = after["tree"]["nodes"].as_array().unwrap().iter().find(|n| n["id"] == "start").unwrap().clone();
    assert_eq!(start["text"], demo_start().text);
    assert_eq!(after["revision"], 1);
}

#[tokio::test]
async fn edit_node() {
    let app = app();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/nodes/start");
    let (status, body) = call(
        &app,
        "PATCH",
        &uri,
        Some(json!({"text": "Please help.", "facts": [{"source": "Agnes Needham", "i": 1}]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["node"]["text"], "Please help.");
    assert_eq!(body["facts"][0]["text"], "She is an anxious and protective mother.");
    assert_eq!(body["revision"], 1);

    let (status, body) = call(&app, "PATCH", &uri, Some(json!({"speaker": "Ghost"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&body, "invalid_request");
    assert_eq!(call(&app, "PATCH", &uri, Some(json!({"text": "  "}))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        call(&app, "PATCH", &format!("/sessions/{id}/nodes/zzz"), Some(json!({"text": "x"}))).await.0,
        StatusCode::NOT_FOUND
    );
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["revision"], 1);
}

#[tokio::test]
async fn backend_failures_are_502() {
    let app = app_with(Arc::new(MockBackend::Fail));
    let id = create(&app).await;
    let (status, body) = round(&app, &id, 3).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_error(&body, "backend_failure");
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!((view["rounds"].clone(), view["revision"].clone()), (json!(0), json!(0)));

    let app = app_with(Arc::new(MockBackend::Garbage));
    let id = create(&app).await;
    let (status, body) = round(&app, &id, 2).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_error(&body, "no_candidates");
}

#[tokio::test]
async fn zero_k_is_422() {
    let app = app();
    let id = create(&app).await;
    assert_eq!(round(&app, &id, 0).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn snapshots_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(Arc::new(MockBackend::Synthetic));
    cfg.snapshot_dir = Some(dir.path().join("snaps"));
    let app = router(AppState::new(cfg));
    let id = create(&app).await;
    round(&app, &id, 3).await;
    let text = std::fs::read_to_string(dir.path().join("snaps").join(format!("{id}.json"))).unwrap();
    let snap: Snapshot = serde_json::from_str(&text).unwrap();
    assert_eq!(snap.session.revision, 1);
    assert_eq!(snap.corpus.dialogues[0].tree.nodes.len(), 4);
}

#[tokio::test]
async fn cors_headers_present() {
    let app = app();
    let req = Request::builder()
        .method("GET")
        .uri("/sessions/nope")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn validate_and_evaluate_endpoints() {
    let app = app();
    let corpus = questwriter_core::synthetic::corpus(3, 6, 1);
    let (status, report) = call(&app, "POST", "/validate", Some(serde_json::to_value(&corpus).unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["findings"], json!([]));

    let tasks = questwriter_core::synthetic::nup_tasks(&corpus, 3, 1);
    let items: Vec<Value> = tasks
        .iter()
        .map(|t| json!({"task": t, "candidate": t.gold_target.as_ref().unwrap().text}))
        .collect();
    let (status, report) = call(&app, "POST", "/evaluate", Some(json!({"items": items, "resamples": 50}))).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["items"], 3);
    assert!((report["gold"]["ci"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let (status, _) = call(&app, "POST", "/evaluate", Some(json!({"items": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

/// Delays every completion so that overlapping requests can be observed.
struct Slow(Duration);

impl LmBackend for Slow {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        std::thread::sleep(self.0);
        MockBackend::Synthetic.complete(prompt, params)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn mutations_serialize_and_reads_do_not_wait() {
    let app = app_with(Arc::new(Slow(Duration::from_millis(400))));
    let id = create(&app).await;
    let (a, b) = (app.clone(), app.clone());
    let (ia, ib) = (id.clone(), id.clone());
    let first = tokio::spawn(async move { round(&a, &ia, 2).await });
    tokio::time::sleep(Duration::from_millis(50)).await;
    let second = tokio::spawn(async move { round(&b, &ib, 2).await });

    let t = Instant::now();
    let (status, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(t.elapsed() < Duration::from_millis(300), "read waited {:?}", t.elapsed());
    assert_eq!(view["revision"], 0);

    let mut statuses = vec![first.await.unwrap().0, second.await.unwrap().0];
    statuses.sort();
    assert_eq!(statuses, vec![StatusCode::OK, StatusCode::CONFLICT]);
    let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(view["tree"]["nodes"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn random_operation_sequences_keep_tree_valid() {
    let app = app();
    let spec = demo_spec();
    for seed in 0..4u64 {
        let id = create(&app).await;
        let mut x = seed;
        for _ in 0..25 {
            x = splitmix64(x);
            let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
            let nodes: Vec<String> =
                view["tree"]["nodes"].as_array().unwrap().iter().map(|n| n["id"].as_str().unwrap().to_string()).collect();
            let pick = |v: &[String]| v[(x >> 8) as usize % v.len()].clone();
            match x % 4 {
                0 => {
                    round(&app, &id, 1 + (x >> 20) as usize % 3).await;
                }
                1 => {
                    commit(&app, &id, &pick(&nodes)).await;
                }
                2 => {
                    let speaker = if x & 1 == 0 { "Player" } else { "Ghost" };
                    call(
                        &app,
                        "PATCH",
                        &format!("/sessions/{id}/nodes/{}", pick(&nodes)),
                        Some(json!({"speaker": speaker, "text": "Edited."})),
                    )
                    .await;
                }
                _ => {
                    call(&app, "POST", &format!("/sessions/{id}/rounds"), Some(json!({"k": 2, "revision": 999}))).await;
                }
            }
            let (_, doc) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
            let corpus = Corpus::from_json(&doc.to_string()).unwrap();
            let report = validate_corpus(&corpus);
            assert!(!report.has_errors(), "{:?}", report.findings);
            assert_eq!(corpus.dialogues[0].spec, spec);
        }
    }
}
