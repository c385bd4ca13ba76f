//! HTTP companion for the explorer UI: `POST /generate`, `GET /schema` and
//! `GET /health`. The model and data are shared read-only between requests.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cfx_core::attribution::AttributionReport;
use cfx_core::data::{Cell, FeatureKind, RawRow};
use cfx_core::engine::{Constraints, Hyperparameters, TraceRecord};
use cfx_core::eval::{MetricsReport, Workbench};
use cfx_core::loss::LossBreakdown;
use cfx_core::CfxError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::session::{parse_query, row_to_json};

pub const MAX_SET_SIZE: usize = 16;
pub const MAX_ITERATIONS: usize = 2000;

pub struct AppState {
    pub bench: Workbench,
    pub defaults: Hyperparameters,
    pub target: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub query: Value,
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default)]
    pub constraints: Constraints,
    /// Partial hyperparameters laid over the server defaults.
    #[serde(default)]
    pub hyperparameters: Option<Value>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub query: Map<String, Value>,
    pub target: usize,
    pub seed: u64,
    pub counterfactuals: Vec<Map<String, Value>>,
    /// `changed[i][j]`: feature `j` of counterfactual `i` differs from the query.
    pub changed: Vec<Vec<bool>>,
    pub metrics: MetricsReport,
    pub loss: LossBreakdown,
    pub threshold_met: bool,
    pub taus_met: bool,
    pub restarts: usize,
    pub attribution: AttributionReport,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message: message.into(),
        }
    }
}

impl From<CfxError> for ApiError {
    fn from(e: CfxError) -> Self {
        let (status, kind) = match e {
            CfxError::InfeasibleConstraints(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "infeasible_constraints")
            }
            CfxError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": self.kind, "message": self.message}));
        (self.status, body).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/generate", post(generate).options(preflight))
        .route("/schema", get(schema))
        .route("/health", get(health))
        .layer(axum::middleware::map_response(allow_any_origin))
        .with_state(state)
}

async fn allow_any_origin(mut response: Response) -> Response {
    let h = response.headers_mut();
    h.insert(
        header::ACCESS_CONTROL_ALLOW_ORIGIN,
        HeaderValue::from_static("*"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("content-type"),
    );
    h.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, OPTIONS"),
    );
    response
}

async fn preflight() -> StatusCode {
    StatusCode::NO_CONTENT
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

async fn schema(State(state): State<Arc<AppState>>) -> Json<Value> {
    let pre = state.bench.preprocessor();
    let features: Vec<Value> = pre
        .schema()
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut v = serde_json::to_value(f).expect("feature specs serialise");
            if let (FeatureKind::Continuous, Some(st)) = (f.kind, pre.stats(i)) {
                v["min"] = json!(st.min);
                v["max"] = json!(st.max);
                v["median"] = json!(st.median);
            }
            v
        })
        .collect();
    Json(json!({
        "features": features,
        "label": pre.schema().label,
        "classes": state.bench.data.raw.classes,
        "target": state.target,
        "hyperparameters": state.defaults,
        "limits": {"n": MAX_SET_SIZE, "max_iterations": MAX_ITERATIONS},
    }))
}

/// Lays `overrides` over the default hyperparameters key by key.
pub fn merge_hyperparameters(
    defaults: &Hyperparameters,
    overrides: Option<&Value>,
) -> Result<Hyperparameters, ApiError> {
    fn merge(base: &mut Value, patch: &Value) {
        match (base, patch) {
            (Value::Object(b), Value::Object(p)) => {
                for (k, v) in p {
                    merge(b.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
            (b, p) => *b = p.clone(),
        }
    }
    let mut value = serde_json::to_value(defaults).expect("hyperparameters serialise");
    if let Some(patch) = overrides {
        if !patch.is_object() {
            return Err(ApiError::bad_request("hyperparameters: expected an object"));
        }
        merge(&mut value, patch);
    }
    serde_json::from_value(value)
        .map_err(|e| ApiError::bad_request(format!("hyperparameters: {e}")))
}

fn changed_cells(query: &RawRow, rows: &[RawRow]) -> Vec<Vec<bool>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(query)
                .map(|(a, b)| match (a, b) {
                    (Cell::Num(x), Cell::Num(y)) => x.to_bits() != y.to_bits(),
                    _ => a != b,
                })
                .collect()
        })
        .collect()
}

pub fn run_generate(state: &AppState, req: &GenerateRequest) -> Result<GenerateResponse, ApiError> {
    let schema = state.bench.preprocessor().schema();
    let query =
        parse_query(schema, &req.query).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut hp = merge_hyperparameters(&state.defaults, req.hyperparameters.as_ref())?;
    if let Some(seed) = req.seed {
        hp.seed = seed;
    }
    if hp.n > MAX_SET_SIZE {
        return Err(ApiError::bad_request(format!(
            "hyperparameters.n: at most {MAX_SET_SIZE} counterfactuals per request, got {}",
            hp.n
        )));
    }
    if hp.max_iterations > MAX_ITERATIONS {
        return Err(ApiError::bad_request(format!(
            "hyperparameters.max_iterations: at most {MAX_ITERATIONS} per request, got {}",
            hp.max_iterations
        )));
    }
    let target = req.target.unwrap_or(state.target);
    let e = state
        .bench
        .explain(&query, None, target, &hp, &req.constraints)?;
    Ok(GenerateResponse {
        query: row_to_json(schema, &query),
        target,
        seed: hp.seed,
        counterfactuals: e
            .result
            .set
            .rows
            .iter()
            .map(|r| row_to_json(schema, r))
            .collect(),
        changed: changed_cells(&query, &e.result.set.rows),
        metrics: e.metrics,
        loss: e.result.loss,
        threshold_met: e.result.threshold_met,
        taus_met: e.taus_met,
        restarts: e.result.restarts,
        attribution: e.attribution,
        trace: e.result.trace,
    })
}

async fn generate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    // generation is CPU-bound; keep it off the async workers
    tokio::task::spawn_blocking(move || run_generate(&state, &req))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: e.to_string(),
        })?
        .map(Json)
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
