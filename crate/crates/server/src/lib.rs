//! JSON-over-HTTP front end for a single [`Session`].
//!
//! Every handler runs the session call on the blocking pool; the session
//! itself provides snapshot reads and serialized writes.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blindspot_core::session::WorkspaceRequest;
use blindspot_core::{Error, Session};
use serde::{Deserialize, Serialize};

pub type AppState = Arc<Session>;

/// Error body shared by every 4xx/5xx response.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(kind: &str, detail: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody { error: kind.into(), detail: detail.into(), entity_id: None },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            Error::InvalidParameter { .. } => (StatusCode::BAD_REQUEST, "invalid_parameter"),
            Error::Empty { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "empty"),
            Error::ZeroNorm { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "zero_norm"),
            Error::InvalidEntity { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_entity"),
            Error::DimensionMismatch { .. } => (StatusCode::BAD_REQUEST, "dimension_mismatch"),
            Error::Training(_) => (StatusCode::INTERNAL_SERVER_ERROR, "training"),
            Error::Io { .. } | Error::Manifest(_) | Error::Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let entity_id = e.entity_id().map(str::to_string);
        Self { status, body: ErrorBody { error: kind.into(), detail: e.to_string(), entity_id } }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request("bad_request", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request("bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(session: AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Session) -> blindspot_core::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&session))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody { error: "internal".into(), detail: e.to_string(), entity_id: None },
        })?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
pub struct PairRequest {
    pub negative: usize,
    pub positive: usize,
}

#[derive(Debug, Deserialize)]
pub struct ConceptRequest {
    pub name: String,
    pub segment_ids: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct DebiasRequest {
    pub concept_id: String,
    pub n: usize,
}

#[derive(Debug, Deserialize)]
struct KQuery {
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct CurveQuery {
    #[serde(default)]
    evaluate: bool,
}

#[derive(Debug, Deserialize)]
struct EvaluateQuery {
    n: usize,
    #[serde(default)]
    control: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RecommendQuery {
    t: Option<f64>,
}

const DEFAULT_TOLERANCE: f64 = 0.5;

async fn overview(State(s): State<AppState>) -> ApiResult<impl Serialize> {
    Ok(Json(blocking(s, |s| s.overview()).await?))
}

async fn select_pair(State(s): State<AppState>, body: Result<Json<PairRequest>, JsonRejection>) -> ApiResult<impl Serialize> {
    let Json(req) = body?;
    Ok(Json(blocking(s, move |s| s.select_pair(req.negative, req.positive)).await?))
}

async fn instances(State(s): State<AppState>) -> ApiResult<impl Serialize> {
    Ok(Json(blocking(s, |s| s.instances()).await?))
}

async fn neighbors(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<KQuery>, QueryRejection>,
) -> ApiResult<impl Serialize> {
    let Query(q) = q?;
    Ok(Json(blocking(s, move |s| s.neighbors(&id, q.k)).await?))
}

async fn workspace(
    State(s): State<AppState>,
    body: Result<Json<WorkspaceRequest>, JsonRejection>,
) -> ApiResult<impl Serialize> {
    let Json(req) = body?;
    Ok(Json(blocking(s, move |s| s.segment_workspace(&req)).await?))
}

async fn create_concept(
    State(s): State<AppState>,
    body: Result<Json<ConceptRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let info = blocking(s, move |s| s.create_concept(&req.name, &req.segment_ids)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn delete_concept(State(s): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    blocking(s, move |s| s.delete_concept(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_concepts(State(s): State<AppState>) -> ApiResult<impl Serialize> {
    Ok(Json(blocking(s, |s| s.concept_overview()).await?))
}

async fn concept_detail(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(blocking(s, move |s| s.concept_detail(&id)).await?))
}

async fn curve(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<CurveQuery>, QueryRejection>,
) -> ApiResult<impl Serialize> {
    let Query(q) = q?;
    let c = blocking(s, move |s| s.curve(&id, q.evaluate)).await?;
    Ok(Json((*c).clone()))
}

async fn recommend(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<RecommendQuery>, QueryRejection>,
) -> ApiResult<impl Serialize> {
    let Query(q) = q?;
    let t = q.t.unwrap_or(DEFAULT_TOLERANCE);
    Ok(Json(blocking(s, move |s| s.recommend(&id, t)).await?))
}

async fn evaluate(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<EvaluateQuery>, QueryRejection>,
) -> ApiResult<impl Serialize> {
    let Query(q) = q?;
    let n = q.n;
    let run = match q.control.as_deref() {
        None | Some("concept") => blocking(s, move |s| s.evaluate(&id, n).map(|r| (*r).clone())).await?,
        Some("random") => blocking(s, move |s| s.evaluate_control(&id, n)).await?,
        Some(other) => return Err(ApiError::bad_request("bad_request", format!("unknown control {other:?}"))),
    };
    Ok(Json(run))
}

async fn apply_debias(
    State(s): State<AppState>,
    body: Result<Json<DebiasRequest>, JsonRejection>,
) -> ApiResult<impl Serialize> {
    let Json(req) = body?;
    Ok(Json(blocking(s, move |s| s.apply_debias(&req.concept_id, req.n)).await?))
}

async fn fallback() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        body: ErrorBody { error: "not_found".into(), detail: "no such route".into(), entity_id: None },
    }
}

pub fn router(session: AppState) -> Router {
    Router::new()
        .route("/api/overview", get(overview))
        .route("/api/pair", post(select_pair))
        .route("/api/instances", get(instances))
        .route("/api/instances/{id}/neighbors", get(neighbors))
        .route("/api/segments/workspace", post(workspace))
        .route("/api/concepts", get(list_concepts).post(create_concept))
        .route("/api/concepts/{id}", get(concept_detail).delete(delete_concept))
        .route("/api/concepts/{id}/curve", get(curve))
        .route("/api/concepts/{id}/recommend", get(recommend))
        .route("/api/concepts/{id}/evaluate", get(evaluate))
        .route("/api/debias", post(apply_debias))
        .fallback(fallback)
        .with_state(session)
}

/// Serve until ctrl-c.
pub async fn serve(session: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, seed = session.seed(), "listening");
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
