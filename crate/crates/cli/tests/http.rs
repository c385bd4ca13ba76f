use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use cfx_cli::config::RunConfig;
use cfx_cli::server::{router, AppState, GenerateResponse};
use cfx_cli::session::{row_to_json, Session};
use cfx_core::engine::Constraints;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state() -> Arc<AppState> {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    STATE
        .get_or_init(|| {
            let config = RunConfig::default();
            let session = Session::open(&config).unwrap();
            let mut defaults = config.effective_hyperparameters();
            defaults.max_iterations = 300;
            defaults.max_perturbations = 1;
            defaults.n = 3;
            Arc::new(AppState {
                bench: session.bench,
                defaults,
                target: config.target,
            })
        })
        .clone()
}

fn query(state: &AppState, nth: usize) -> Value {
    let q = state.bench.test_queries(state.target, nth + 1)[nth];
    let schema = state.bench.preprocessor().schema();
    Value::Object(row_to_json(schema, &state.bench.data.raw.rows[q]))
}

async fn send(method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = router(state()).oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn generate(body: Value) -> (StatusCode, Value) {
    send(Method::POST, "/generate", Some(body.to_string())).await
}

#[tokio::test]
async fn health_and_schema() {
    let (status, body) = send(Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");

    let (status, body) = send(Method::GET, "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    let features = body["features"].as_array().unwrap();
    assert_eq!(features.len(), 6);
    assert_eq!(features[0]["name"], "x0");
    let (lo, hi) = (features[0]["min"].as_f64().unwrap(), features[0]["max"].as_f64().unwrap());
    assert!(lo < hi);
    assert!(features[4]["categories"].as_array().is_some());
    assert!(features[4].get("min").is_none());
    assert_eq!(body["limits"]["n"], 16);
    assert_eq!(body["hyperparameters"]["n"], 3);

    let (status, _) = send(Method::OPTIONS, "/generate", None).await;
    assert!(status.is_success());
}

#[tokio::test]
async fn generate_matches_in_process_explanation() {
    let st = state();
    let q = query(&st, 0);
    let (status, body) = generate(json!({"query": q, "seed": 11})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: GenerateResponse = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(resp.counterfactuals.len(), 3);
    assert_eq!(resp.changed.len(), 3);
    assert!(resp.changed.iter().all(|c| c.len() == 6));
    assert_eq!(resp.seed, 11);
    assert!(!resp.trace.is_empty());
    assert_eq!(resp.attribution.scores.len(), 6);

    let schema = st.bench.preprocessor().schema();
    let raw = cfx_cli::session::parse_query(schema, &q).unwrap();
    let mut hp = st.defaults.clone();
    hp.seed = 11;
    let e = st.bench.explain(&raw, None, st.target, &hp, &Constraints::default()).unwrap();
    assert_eq!(resp.metrics, e.metrics);
    for (got, row) in resp.counterfactuals.iter().zip(&e.result.set.rows) {
        assert_eq!(*got, row_to_json(schema, row));
    }

    // same request, same answer
    let (_, again) = generate(json!({"query": q, "seed": 11})).await;
    assert_eq!(again, body);
}

#[tokio::test]
async fn partial_hyperparameters_and_constraints_apply() {
    let st = state();
    let q = query(&st, 1);
    let body = json!({
        "query": q,
        "hyperparameters": {"n": 2, "weights": {"diversity": 0.0}},
        "constraints": {"fix": ["x1", "c0"]},
    });
    let (status, body) = generate(body).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: GenerateResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.counterfactuals.len(), 2);
    for (cf, changed) in resp.counterfactuals.iter().zip(&resp.changed) {
        assert_eq!(cf["x1"], q["x1"]);
        assert_eq!(cf["c0"], q["c0"]);
        assert!(!changed[1] && !changed[4]);
    }
}

#[tokio::test]
async fn limits_and_bad_requests() {
    let q = query(&state(), 0);
    let (status, body) = generate(json!({"query": q, "hyperparameters": {"n": 17}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("hyperparameters.n"));

    let (status, body) =
        generate(json!({"query": q, "hyperparameters": {"max_iterations": 2001}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("max_iterations"));

    let (status, body) = send(Method::POST, "/generate", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");

    let (status, body) = generate(json!({"query": {"x0": 1.0}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("`x1`"), "{body}");

    let (status, _) = generate(json!({"query": q, "surprise": 1})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = generate(json!({"query": q, "target": 7})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn infeasible_constraints_are_unprocessable() {
    let q = query(&state(), 0);
    let body = json!({"query": q, "constraints": {"fix": ["x0", "x1", "x2", "x3", "c0", "c1"]}});
    let (status, body) = generate(body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "infeasible_constraints");
    assert!(body["message"].as_str().unwrap().contains("infeasible constraints"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_do_not_interfere() {
    let st = state();
    let requests: Vec<Value> = (0..4)
        .map(|i| json!({"query": query(&st, i), "seed": i as u64}))
        .collect();
    let mut sequential = Vec::new();
    for r in &requests {
        sequential.push(generate(r.clone()).await.1);
    }
    let handles: Vec<_> = requests
        .iter()
        .cloned()
        .map(|r| tokio::spawn(generate(r)))
        .collect();
    for (h, expected) in handles.into_iter().zip(&sequential) {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&body, expected);
    }
}
