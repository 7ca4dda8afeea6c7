use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use driftscope_core::layout::HeatGrid;
use driftscope_core::{generate_synthetic, write_hierarchy, write_patients, AggregationMethod, SyntheticSpec};
use driftscope_service::{router, DatasetSource, Session, SessionExport, SessionStore, ViewParams};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const HIERARCHY: &str = "system,code,parent,label\n\
    T,R,,Root\n\
    T,A,R,Branch A\n\
    T,B,R,Branch B\n\
    T,A1,A,Leaf A1\n\
    T,A2,A,Leaf A2\n\
    T,B1,B,Leaf B1\n";

fn patients() -> String {
    (0..10)
        .map(|i| {
            let code = match i {
                0..=4 => "B1",
                5 => "A1",
                _ => "A2",
            };
            let gender = if i % 3 == 0 { "F" } else { "M" };
            format!(
                "{{\"id\":\"p{i}\",\"attributes\":{{\"Gender\":\"{gender}\",\"Age\":{}}},\"events\":[\"T:{code}\"]}}\n",
                20 + 5 * i
            )
        })
        .collect()
}

fn inline_source() -> Value {
    json!({ "source": "inline", "hierarchy": HIERARCHY, "patients": patients() })
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body, None).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn call_raw(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn new_session(app: &Router, source: Value) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", Some(source)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

fn app() -> Router {
    router(Arc::new(SessionStore::in_memory()), None)
}

#[tokio::test]
async fn filter_yields_three_cohorts() {
    let app = app();
    let id = new_session(&app, inline_source()).await;
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/cohorts"),
        Some(json!({ "parent": 0, "kind": "event-present", "target": "T:A" })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["version"], 1);
    let (inc, exc) = (body["included"].as_u64().unwrap(), body["excluded"].as_u64().unwrap());

    let (_, tree) = call(&app, Method::GET, &format!("/sessions/{id}/tree"), None).await;
    let cohorts = tree["cohorts"].as_array().unwrap();
    assert_eq!(cohorts.len(), 3);
    let size = |c: u64| cohorts.iter().find(|x| x["id"] == c).unwrap()["size"].as_u64().unwrap();
    assert_eq!((size(0), size(inc), size(exc)), (10, 5, 5));
    assert_eq!(tree["focus"], inc);
    assert_eq!(tree["edges"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn identical_cohorts_have_zero_average_drift() {
    let app = app();
    let id = new_session(&app, inline_source()).await;
    let (status, body) = call(&app, Method::GET, &format!("/sessions/{id}/profile?baseline=0&focus=0"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["h_avg"].as_f64(), Some(0.0));
    assert!(body["per_dim"].as_object().unwrap().values().all(|v| v.as_f64() == Some(0.0)));
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app();
    let (status, _) = call(&app, Method::GET, "/sessions/nope/tree", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = new_session(&app, inline_source()).await;
    let base = format!("/sessions/{id}");
    let (status, _) = call(&app, Method::PUT, &format!("{base}/focus"), Some(json!({ "cohort": 42 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, &format!("{base}/dimension/T/ZZ"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, &format!("{base}/layout/icicle/groups/999"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad_filter = json!({ "parent": 0, "kind": "event-present", "target": "T:ZZ" });
    let (status, body) = call(&app, Method::POST, &format!("{base}/cohorts"), Some(bad_filter)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
    let range = json!({ "parent": 0, "kind": "attribute-range", "target": "Age", "value": [50, 10] });
    let (status, _) = call(&app, Method::POST, &format!("{base}/cohorts"), Some(range)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::PUT, &format!("{base}/settings"), Some(json!({ "t_s": 1.5 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::GET, &format!("{base}/profile?t_s=-1"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let filter = json!({ "parent": 0, "kind": "event-present", "target": "T:B", "expected_version": 0 });
    let (status, _) = call(&app, Method::POST, &format!("{base}/cohorts"), Some(filter.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, body) = call(&app, Method::POST, &format!("{base}/cohorts"), Some(filter)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "conflict");

    // The excluded cohort starts hidden and cannot be filtered until shown.
    let hidden = json!({ "parent": 2, "kind": "event-present", "target": "T:A" });
    let (status, _) = call(&app, Method::POST, &format!("{base}/cohorts"), Some(hidden.clone())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::PUT, &format!("{base}/edges/0/visible"), Some(json!({ "visible": true }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, Method::POST, &format!("{base}/cohorts"), Some(hidden)).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn token_is_enforced_when_configured() {
    let app = router(Arc::new(SessionStore::in_memory()), Some("secret".into()));
    let (status, _) = call_raw(&app, Method::GET, "/sessions", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_raw(&app, Method::GET, "/sessions", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_raw(&app, Method::GET, "/sessions", None, Some("secret")).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call_raw(&app, Method::GET, "/health", None, None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn layouts_render_as_json_and_svg() {
    let app = app();
    let id = new_session(&app, inline_source()).await;
    let base = format!("/sessions/{id}");
    call(
        &app,
        Method::POST,
        &format!("{base}/cohorts"),
        Some(json!({ "parent": 0, "kind": "attribute-equals", "target": "Gender", "value": "M" })),
    )
    .await;
    for view in ["layout/icicle", "layout/dotplot", "layout/list"] {
        let (status, body) = call_raw(&app, Method::GET, &format!("{base}/{view}?format=svg"), None, None).await;
        assert_eq!(status, StatusCode::OK);
        let text = String::from_utf8(body).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"), "{view}");
        let (status, _) = call(&app, Method::GET, &format!("{base}/{view}"), None).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = call(&app, Method::GET, &format!("{base}/layout/list?format=png"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, icicle) = call(&app, Method::GET, &format!("{base}/layout/icicle?method=depth&t_s=0.2"), None).await;
    assert_eq!(icicle["aggregation"], "depth");
    if !icicle["groups"].as_array().unwrap().is_empty() {
        let (status, expanded) = call(&app, Method::GET, &format!("{base}/layout/icicle/groups/0"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert!(expanded["rows"].as_u64().unwrap() >= 1);
    }

    let (_, dim) = call(&app, Method::GET, &format!("{base}/dimension/Attributes/Gender"), None).await;
    assert_eq!(dim["focus_distribution"]["probs"], json!([0.0, 1.0]));
    assert!(dim["constrained"].as_bool().unwrap());

    let (_, ov) = call(&app, Method::GET, &format!("{base}/overlap"), None).await;
    assert_eq!(ov["relationship"], "subset");
    assert_eq!(ov["size_a"], 10);
}

#[tokio::test]
async fn promotion_and_settings_are_logged() {
    let app = app();
    let id = new_session(&app, inline_source()).await;
    let base = format!("/sessions/{id}");
    let (status, _) = call(&app, Method::POST, &format!("{base}/salient"), Some(json!({ "dim": "T:R" }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, Method::POST, &format!("{base}/salient"), Some(json!({ "dim": "T:nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, body) = call(&app, Method::PUT, &format!("{base}/settings"), Some(json!({ "method": "depth" }))).await;
    assert_eq!(body["version"], 2);
    let (_, settings) = call(&app, Method::GET, &format!("{base}/settings"), None).await;
    assert_eq!(settings["method"], "depth");
    assert_eq!(settings["manual_salient"], json!(["T:R"]));
    let (_, export) = call(&app, Method::GET, &format!("{base}/export"), None).await;
    let ops: Vec<&str> = export["log"].as_array().unwrap().iter().map(|m| m["op"].as_str().unwrap()).collect();
    assert_eq!(ops, ["promote-salient", "set-settings"]);
}

const QUERIES: [&str; 6] = [
    "tree",
    "profile",
    "layout/icicle",
    "layout/dotplot",
    "layout/list?method=depth",
    "dimension/Attributes/Age",
];

async fn snapshot(app: &Router, id: &str) -> Vec<Value> {
    let mut out = Vec::new();
    for q in QUERIES {
        let (status, body) = call(app, Method::GET, &format!("/sessions/{id}/{q}"), None).await;
        assert_eq!(status, StatusCode::OK, "{q}: {body}");
        out.push(body);
    }
    out
}

async fn scripted_session(app: &Router, source: Value) -> String {
    let id = new_session(app, source).await;
    let base = format!("/sessions/{id}");
    let steps = [
        (Method::POST, "cohorts", json!({ "parent": 0, "kind": "attribute-range", "target": "Age", "value": [25, 60] })),
        (Method::POST, "cohorts", json!({ "kind": "event-absent", "target": "T:A1" })),
        (Method::PUT, "edges/0/visible", json!({ "visible": true })),
        (Method::PUT, "baseline", json!({ "cohort": 1 })),
        (Method::PUT, "settings", json!({ "t_s": 0.1 })),
        (Method::POST, "salient", json!({ "dim": "T:B" })),
    ];
    for (method, path, body) in steps {
        let (status, resp) = call(app, method, &format!("{base}/{path}"), Some(body)).await;
        assert!(status.is_success(), "{path}: {resp}");
    }
    id
}

fn engine_snapshot(s: &Session) -> Vec<Value> {
    let view = ViewParams::default();
    let depth = ViewParams {
        method: Some(AggregationMethod::Depth),
        ..Default::default()
    };
    vec![
        serde_json::to_value(s.tree_summary().unwrap()).unwrap(),
        serde_json::to_value(s.profile_document(&view).unwrap()).unwrap(),
        serde_json::to_value(s.icicle(&view).unwrap()).unwrap(),
        serde_json::to_value(s.dotplot(&view, HeatGrid::default()).unwrap()).unwrap(),
        serde_json::to_value(s.list(&depth).unwrap()).unwrap(),
        serde_json::to_value(s.dimension(&"Attributes:Age".parse().unwrap(), &view).unwrap()).unwrap(),
    ]
}

#[tokio::test]
async fn replaying_the_log_reproduces_every_response() {
    let app = app();
    let id = scripted_session(&app, inline_source()).await;
    let first = snapshot(&app, &id).await;

    let (_, export) = call(&app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    let export: SessionExport = serde_json::from_value(export).unwrap();
    assert_eq!(export.version, 6);
    let ds = Arc::new(export.meta.dataset.load().unwrap());
    let replayed = Session::replay(ds, export.log.clone()).unwrap();
    assert_eq!(engine_snapshot(&replayed), first);

    let again = scripted_session(&app, inline_source()).await;
    assert_eq!(snapshot(&app, &again).await, first);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::open(dir.path()).unwrap());
    let app = router(store, None);
    let id = scripted_session(&app, inline_source()).await;
    let before = snapshot(&app, &id).await;
    drop(app);

    let reopened = Arc::new(SessionStore::open(dir.path()).unwrap());
    assert_eq!(reopened.ids(), vec![id.clone()]);
    let app = router(reopened, None);
    assert_eq!(snapshot(&app, &id).await, before);
    let (_, info) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(info["version"], 6);
    let next = new_session(&app, inline_source()).await;
    assert_ne!(next, id);
}

#[tokio::test]
async fn planted_correlate_tops_the_unconstrained_list() {
    let spec = SyntheticSpec::planted_pair(0);
    let pair = spec.correlations[0].clone();
    let app = app();
    let id = new_session(&app, json!({ "source": "synthetic", "spec": spec })).await;
    let filter = json!({ "parent": 0, "kind": "event-present", "target": pair.dim_a.to_string() });
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/cohorts"), Some(filter)).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, list) = call(&app, Method::GET, &format!("/sessions/{id}/layout/list"), None).await;
    let top = list["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["constrained"] == false)
        .unwrap();
    assert_eq!(top["dim"], pair.dim_b.to_string());

    // Same numbers when the data arrives as uploaded files.
    let (h, table) = generate_synthetic(&spec).unwrap();
    let upload = json!({ "source": "inline", "hierarchy": write_hierarchy(&h), "patients": write_patients(&table.patients) });
    let uploaded = new_session(&app, upload).await;
    let filter = json!({ "parent": 0, "kind": "event-present", "target": pair.dim_a.to_string() });
    call(&app, Method::POST, &format!("/sessions/{uploaded}/cohorts"), Some(filter)).await;
    let (_, again) = call(&app, Method::GET, &format!("/sessions/{uploaded}/layout/list"), None).await;
    assert_eq!(again["rows"], list["rows"]);
}

#[test]
fn synthetic_source_round_trips_through_json() {
    let source = DatasetSource::Synthetic {
        spec: SyntheticSpec::planted_pair(3),
    };
    let text = serde_json::to_string(&source).unwrap();
    assert_eq!(serde_json::from_str::<DatasetSource>(&text).unwrap(), source);
}
