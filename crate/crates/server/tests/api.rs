//! HTTP contract of the router, driven in-process.

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use blindspot_core::synthetic::{generate, GroundTruth, PlantConfig};
use blindspot_core::Session;
use blindspot_server::{router, ErrorBody};
use serde_json::{json, Value};
use tower::ServiceExt;

const SEED: u64 = 3;

fn app() -> (Arc<Session>, GroundTruth) {
    let cfg = PlantConfig { n_train_per_class: 120, n_test_per_class: 60, ..PlantConfig::benchmark(SEED) };
    let (bundle, truth) = generate(&cfg).unwrap();
    (Arc::new(Session::with_seed(bundle, SEED).unwrap()), truth)
}

async fn call(s: &Arc<Session>, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = router(s.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn error(v: Value) -> ErrorBody {
    serde_json::from_value(v).unwrap()
}

#[tokio::test]
async fn overview_matches_session() {
    let (s, _) = app();
    let (status, body) = call(&s, Method::GET, "/api/overview", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_value(s.overview().unwrap()).unwrap());
    assert_eq!(body["seed"], SEED);
}

#[tokio::test]
async fn pair_selection_and_errors() {
    let (s, _) = app();
    let (status, body) = call(&s, Method::POST, "/api/pair", Some(json!({"negative": 1, "positive": 0}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["pair"], json!({"negative": 1, "positive": 0}));
    assert_eq!(s.snapshot().pair.positive, 0);

    let (status, body) = call(&s, Method::POST, "/api/pair", Some(json!({"negative": 1, "positive": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(body).error, "invalid_parameter");

    let (status, body) = call(&s, Method::POST, "/api/pair", Some(json!({"negative": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error(body).error, "bad_request");
}

#[tokio::test]
async fn instances_and_neighbors() {
    let (s, _) = app();
    let (status, body) = call(&s, Method::GET, "/api/instances", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = body.as_array().unwrap();
    assert_eq!(rows.len(), s.snapshot().analysis.bundle.instances.len());
    let id = rows[0]["id"].as_str().unwrap().to_string();

    let (status, body) = call(&s, Method::GET, &format!("/api/instances/{id}/neighbors?k=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_value(s.neighbors(&id, Some(3)).unwrap()).unwrap());

    let (status, body) = call(&s, Method::GET, "/api/instances/ghost/neighbors", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error(body).entity_id.as_deref(), Some("ghost"));

    let (status, _) = call(&s, Method::GET, &format!("/api/instances/{id}/neighbors?k=abc"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn workspace_filters_by_case() {
    let (s, _) = app();
    let (status, body) = call(&s, Method::POST, "/api/segments/workspace", Some(json!({"cases": ["FN", "FP"]}))).await;
    assert_eq!(status, StatusCode::OK);
    for seg in body["segments"].as_array().unwrap() {
        assert!(matches!(seg["case"].as_str().unwrap(), "FN" | "FP"));
    }
    let (status, body) = call(&s, Method::POST, "/api/segments/workspace", Some(json!({"instance_ids": []}))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["segments"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn concept_lifecycle() {
    let (s, truth) = app();
    let specs = truth.concept_specs();
    for spec in &specs {
        let (status, body) = call(
            &s,
            Method::POST,
            "/api/concepts",
            Some(json!({"name": spec.name, "segment_ids": spec.segment_ids})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED);
        assert_eq!(body["member_count"], spec.segment_ids.len());
    }
    let (status, body) = call(&s, Method::GET, "/api/concepts", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), specs.len());

    let (status, body) = call(&s, Method::GET, "/api/concepts/c1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_value(s.concept_detail("c1").unwrap()).unwrap());

    let (status, body) =
        call(&s, Method::POST, "/api/concepts", Some(json!({"name": "bad", "segment_ids": ["s999999"]}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error(body).entity_id.as_deref(), Some("s999999"));

    let (status, body) = call(&s, Method::POST, "/api/concepts", Some(json!({"name": "empty", "segment_ids": []}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error(body).error, "empty");

    let (status, body) = call(&s, Method::DELETE, "/api/concepts/c2", None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(body, Value::Null);
    let (status, _) = call(&s, Method::DELETE, "/api/concepts/c2", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(s.concepts().len(), specs.len() - 1);
}

#[tokio::test]
async fn curve_recommend_evaluate_and_apply() {
    let (s, truth) = app();
    let spec = &truth.concept_specs()[0];
    s.create_concept(&spec.name, &spec.segment_ids).unwrap();
    s.create_concept("other", &truth.concept_specs()[2].segment_ids).unwrap();
    s.select_pair(1, 0).unwrap();

    let (status, body) = call(&s, Method::GET, "/api/concepts/c1/curve", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_value(&*s.curve("c1", false).unwrap()).unwrap());
    assert_eq!(body["points"][0]["rbr"], 1.0);

    let (status, body) = call(&s, Method::GET, "/api/concepts/c1/recommend", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["t"], 0.5);
    let n = body["n"].as_u64().unwrap() as usize;
    let (_, zero) = call(&s, Method::GET, "/api/concepts/c1/recommend?t=0", None).await;
    assert_eq!(zero["n"], 0);

    let (status, body) = call(&s, Method::GET, &format!("/api/concepts/c1/evaluate?n={n}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let expected = serde_json::to_value(&*s.evaluate("c1", n).unwrap()).unwrap();
    assert_eq!(body, expected);
    let (status, ctrl) = call(&s, Method::GET, "/api/concepts/c1/evaluate?n=50&control=random", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctrl["control"]["kind"], "random");
    let (status, _) = call(&s, Method::GET, "/api/concepts/c1/evaluate?n=50&control=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(&s, Method::POST, "/api/debias", Some(json!({"concept_id": "c1", "n": n}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["accuracy_after"], expected["acc_after"]);
    let (_, overview) = call(&s, Method::GET, "/api/overview", None).await;
    assert_eq!(overview["debias_applied"].as_array().unwrap().len(), 1);

    let (status, _) = call(&s, Method::POST, "/api/debias", Some(json!({"concept_id": "c9", "n": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_route_uses_error_shape() {
    let (s, _) = app();
    let (status, body) = call(&s, Method::GET, "/api/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error(body).error, "not_found");
}
