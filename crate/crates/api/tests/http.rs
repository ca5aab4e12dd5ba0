use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ideaforge_api::{router, ApiState, TOKEN_HEADER};

const ADMIN: &str = "admin-secret";

struct Reply {
    status: StatusCode,
    token: Option<String>,
    body: Value,
    raw: String,
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, admin: Option<&str>, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(TOKEN_HEADER, t);
    }
    if let Some(a) = admin {
        req = req.header("x-admin-token", a);
    }
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let token = resp.headers().get(TOKEN_HEADER).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let raw = String::from_utf8(bytes.to_vec()).unwrap();
    let body = serde_json::from_str(&raw).unwrap_or(Value::Null);
    Reply { status, token, body, raw }
}

fn app() -> (ApiState, Router) {
    let state = ApiState::with_stats_ttl(Some(ADMIN.into()), None, Duration::ZERO);
    (state.clone(), router(state))
}

fn config(id: &str) -> Value {
    json!({ "campaign_id": id, "trigger_new_evals": 3, "rng_seed": 4, "channel": { "immediate_mode": true } })
}

async fn started(app: &Router, id: &str) {
    assert_eq!(call(app, "POST", "/admin/campaigns", None, Some(ADMIN), Some(config(id))).await.status, StatusCode::CREATED);
    let r = call(app, "POST", &format!("/admin/campaigns/{id}/start"), None, Some(ADMIN), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.raw);
    assert_eq!(r.body["total_concepts"], 10);
}

async fn session(app: &Router, id: &str) -> String {
    call(app, "GET", &format!("/campaigns/{id}/concepts"), None, None, None).await.token.expect("token issued")
}

#[tokio::test]
async fn admin_requires_token_and_valid_transitions() {
    let (_, app) = app();
    let r = call(&app, "POST", "/admin/campaigns", None, None, Some(config("a"))).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.body["error"], "unauthorized");
    assert!(r.body["message"].is_string());
    assert_eq!(call(&app, "POST", "/admin/campaigns", None, Some("wrong"), Some(config("a"))).await.status, StatusCode::UNAUTHORIZED);

    started(&app, "a").await;
    let r = call(&app, "POST", "/admin/campaigns/a/start", None, Some(ADMIN), None).await;
    assert_eq!((r.status, r.body["error"].as_str()), (StatusCode::CONFLICT, Some("invalid_transition")));
    assert_eq!(call(&app, "POST", "/admin/campaigns", None, Some(ADMIN), Some(config("a"))).await.status, StatusCode::CONFLICT);

    let r = call(&app, "POST", "/admin/campaigns/a/stop", None, Some(ADMIN), None).await;
    assert_eq!((r.status, &r.body["running"]), (StatusCode::OK, &json!(false)));
    assert_eq!(call(&app, "POST", "/admin/campaigns/a/stop", None, Some(ADMIN), None).await.status, StatusCode::CONFLICT);
    assert_eq!(call(&app, "POST", "/admin/campaigns/zzz/start", None, Some(ADMIN), None).await.status, StatusCode::NOT_FOUND);

    let bad = json!({ "campaign_id": "b", "population_size": 1 });
    let r = call(&app, "POST", "/admin/campaigns", None, Some(ADMIN), Some(bad)).await;
    assert_eq!((r.status, r.body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_config")));
    let r = call(&app, "POST", "/admin/campaigns", None, Some(ADMIN), Some(json!({ "campaign_id": "../etc" }))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn admin_disabled_without_configured_token() {
    let app = router(ApiState::new(None, None));
    assert_eq!(call(&app, "POST", "/admin/campaigns", None, Some(""), Some(config("a"))).await.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn blinding_and_vote_outcomes() {
    let (_, app) = app();
    started(&app, "demo").await;
    let me = session(&app, "demo").await;

    let list = call(&app, "GET", "/campaigns/demo/concepts", Some(&me), None, None).await;
    assert!(list.token.is_none(), "known sessions are not reissued");
    let concepts = list.body.as_array().unwrap();
    assert_eq!(concepts.len(), 10);
    for c in concepts {
        assert!(c["my_vote"].is_null());
        assert!(c.get("aggregates").is_none());
        assert_eq!(c["status"], "active_published");
        assert!(!c["sections"].as_array().unwrap().is_empty());
    }
    let x = concepts[0]["concept_id"].as_str().unwrap().to_string();
    let uri = format!("/concepts/{x}/evaluations");

    let r = call(&app, "POST", &uri, Some(&me), None, Some(json!({ "value": 2 }))).await;
    assert_eq!((r.status, r.body["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_value")));
    assert_eq!(call(&app, "POST", &uri, Some(&me), None, Some(json!({}))).await.status, StatusCode::BAD_REQUEST);
    let r = call(&app, "POST", "/concepts/nope/evaluations", Some(&me), None, Some(json!({ "value": 1 }))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = call(&app, "POST", &uri, Some(&me), None, Some(json!({ "value": 1 }))).await;
    assert_eq!((r.status, &r.body), (StatusCode::OK, &json!({ "outcome": "accepted" })));
    let r = call(&app, "POST", &uri, Some(&me), None, Some(json!({ "value": 0 }))).await;
    assert_eq!(r.body, json!({ "outcome": "overwritten" }));

    let list = call(&app, "GET", "/campaigns/demo/concepts", Some(&me), None, None).await;
    for c in list.body.as_array().unwrap() {
        if c["concept_id"] == x.as_str() {
            assert_eq!(c["my_vote"], 0);
            assert_eq!(c["aggregates"], json!({ "positives": 0, "neutrals": 1, "negatives": 0, "total": 1 }));
        } else {
            assert!(c["my_vote"].is_null() && c.get("aggregates").is_none());
        }
    }
    // Another voter is still blinded on X.
    let other = session(&app, "demo").await;
    let list = call(&app, "GET", "/campaigns/demo/concepts", Some(&other), None, None).await;
    assert!(list.body.as_array().unwrap().iter().all(|c| c.get("aggregates").is_none()));

    assert_eq!(call(&app, "GET", "/campaigns/nope/concepts", Some(&me), None, None).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn activations_retire_concepts_and_stats_add_up() {
    let (_, app) = app();
    started(&app, "s").await;

    let stats = call(&app, "GET", "/campaigns/s/stats", None, None, None).await;
    assert_eq!((stats.body["total_concepts"].as_u64(), stats.body["total_evals"].as_u64()), (Some(10), Some(0)));

    let mut raws = Vec::new();
    for _ in 0..3 {
        let voter = session(&app, "s").await;
        let list = call(&app, "GET", "/campaigns/s/concepts", Some(&voter), None, None).await;
        for (i, c) in list.body.as_array().unwrap().iter().enumerate() {
            if c["status"] == "retired" {
                continue;
            }
            let uri = format!("/concepts/{}/evaluations", c["concept_id"].as_str().unwrap());
            let value = [1, 0, -1][i % 3];
            let r = call(&app, "POST", &uri, Some(&voter), None, Some(json!({ "value": value }))).await;
            raws.push(r.raw);
        }
    }

    let stats = call(&app, "GET", "/campaigns/s/stats", None, None, None).await;
    let iteration = stats.body["iteration"].as_u64().unwrap();
    assert!(iteration >= 1);
    assert_eq!(stats.body["total_concepts"].as_u64().unwrap(), 10 + iteration);
    let total = stats.body["total_evals"].as_u64().unwrap();
    let summed: u64 = stats.body["timeline"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(summed, total);
    assert_eq!(stats.body["avg_length"]["raw"].as_array().unwrap().len() as u64, iteration);

    let voter = session(&app, "s").await;
    let list = call(&app, "GET", "/campaigns/s/concepts", Some(&voter), None, None).await;
    let retired = list.body.as_array().unwrap().iter().find(|c| c["status"] == "retired").expect("a retired concept is listed");
    let uri = format!("/concepts/{}/evaluations", retired["concept_id"].as_str().unwrap());
    let r = call(&app, "POST", &uri, Some(&voter), None, Some(json!({ "value": 1 }))).await;
    assert_eq!((r.status, r.body["error"].as_str()), (StatusCode::CONFLICT, Some("concept_closed")));

    // Stopped campaigns refuse votes.
    call(&app, "POST", "/admin/campaigns/s/stop", None, Some(ADMIN), None).await;
    let open = list.body.as_array().unwrap().iter().find(|c| c["status"] == "active_published").unwrap();
    let uri = format!("/concepts/{}/evaluations", open["concept_id"].as_str().unwrap());
    let r = call(&app, "POST", &uri, Some(&voter), None, Some(json!({ "value": 1 }))).await;
    assert_eq!((r.status, r.body["error"].as_str()), (StatusCode::CONFLICT, Some("campaign_not_running")));

    for raw in raws {
        assert!(!raw.contains("voter_token"));
    }
}

#[tokio::test]
async fn campaigns_survive_a_restart_from_the_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let state = ApiState::with_stats_ttl(Some(ADMIN.into()), Some(dir.path().to_path_buf()), Duration::ZERO);
    let app = router(state);
    started(&app, "keep").await;
    let me = session(&app, "keep").await;
    let list = call(&app, "GET", "/campaigns/keep/concepts", Some(&me), None, None).await;
    let x = list.body[0]["concept_id"].as_str().unwrap().to_string();
    call(&app, "POST", &format!("/concepts/{x}/evaluations"), Some(&me), None, Some(json!({ "value": -1 }))).await;
    drop(app);

    let state = ApiState::with_stats_ttl(Some(ADMIN.into()), Some(dir.path().to_path_buf()), Duration::ZERO);
    assert_eq!(state.load_data_dir().unwrap(), ["keep"]);
    let app = router(state);
    let list = call(&app, "GET", "/campaigns/keep/concepts", Some(&me), None, None).await;
    assert_eq!(list.body.as_array().unwrap().len(), 10);
    assert_eq!(list.body[0]["my_vote"], -1);
    let r = call(&app, "POST", "/admin/campaigns", None, Some(ADMIN), Some(config("keep"))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}
