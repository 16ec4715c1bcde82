//! HTTP+JSON review service. Every mutation goes through one engine behind a
//! mutex; reads see a consistent state.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use curagraph::engine::{Engine, EngineError, TaskId};
use curagraph::graph::{AnnotationId, DecisionLabel, ResolutionPlan};
use curagraph::metrics::{score_graph, ClusterScores, CurvePoint};

pub type Shared = Arc<Mutex<Engine>>;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownTask(_) => StatusCode::NOT_FOUND,
            EngineError::LeaseViolation { .. } | EngineError::NotLeased(_) | EngineError::BudgetExhausted(_) => {
                StatusCode::CONFLICT
            }
            EngineError::InvalidConfig(_) | EngineError::DuplicateQuery(_) | EngineError::MissingTruth(_) => {
                StatusCode::BAD_REQUEST
            }
            EngineError::Graph(_) | EngineError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lock(state: &Shared) -> MutexGuard<'_, Engine> {
    // a panicked handler leaves the engine consistent: every mutation is a
    // single record_decision call
    state.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{task_id}/decision", post(decide))
        .route("/api/clusters", get(clusters))
        .route("/api/annotations/{id}", get(annotation))
        .route("/api/metrics", get(metrics))
        .route("/api/conflicts", get(conflicts))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state)
}

#[derive(Deserialize)]
struct ReviewerQuery {
    reviewer: Option<String>,
}

fn reviewer(q: &ReviewerQuery, body: Option<&str>) -> ApiResult<String> {
    q.reviewer
        .as_deref()
        .or(body)
        .filter(|r| !r.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing reviewer"))
}

async fn next_task(State(state): State<Shared>, Query(q): Query<ReviewerQuery>) -> ApiResult<Response> {
    let who = reviewer(&q, None)?;
    let mut engine = lock(&state);
    Ok(match engine.next_human_task(&who, Instant::now()) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    label: DecisionLabel,
    #[serde(default)]
    reviewer: Option<String>,
}

async fn decide(
    State(state): State<Shared>,
    Path(task_id): Path<String>,
    Query(q): Query<ReviewerQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    let task: TaskId = task_id
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid task id `{task_id}`")))?;
    let body: DecisionBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))?;
    let who = reviewer(&q, body.reviewer.as_deref())?;
    let mut engine = lock(&state);
    let delta = engine.submit_human_decision(task, body.label, &who)?;
    engine.advance_live()?;
    Ok(Json(delta).into_response())
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    100
}

const MAX_LIMIT: usize = 1000;

async fn clusters(State(state): State<Shared>, Query(page): Query<Page>) -> ApiResult<Response> {
    if page.limit == 0 || page.limit > MAX_LIMIT {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("limit must be between 1 and {MAX_LIMIT}"),
        ));
    }
    let engine = lock(&state);
    let all = engine.graph().clusters();
    let total = all.len();
    let items: Vec<_> = all.into_iter().skip(page.offset).take(page.limit).collect();
    Ok(Json(json!({
        "total": total,
        "offset": page.offset,
        "limit": page.limit,
        "clusters": items,
    }))
    .into_response())
}

async fn annotation(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let engine = lock(&state);
    let graph = engine.graph();
    let id = AnnotationId::new(id);
    let ann = graph
        .annotation(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown annotation `{id}`")))?;
    let decisions: Vec<_> = graph
        .active_labels()
        .into_iter()
        .filter(|(p, _)| p.contains(&id))
        .map(|(pair, label)| json!({ "pair": pair, "active": label }))
        .collect();
    Ok(Json(json!({
        "annotation": ann,
        "cluster": graph.cluster_of(&id),
        "active_labels": decisions,
    }))
    .into_response())
}

#[derive(Serialize)]
struct MetricsView {
    human_decisions: u64,
    algorithmic_decisions: u64,
    open_tasks: usize,
    pending_batches: usize,
    conflicts: usize,
    cluster_count: usize,
    annotations: usize,
    scores: Option<ClusterScores>,
    curve: Vec<CurvePoint>,
}

async fn metrics(State(state): State<Shared>) -> ApiResult<Response> {
    let engine = lock(&state);
    let report = engine.report()?;
    let scores = score_graph(engine.graph(), engine.truth(), engine.config().include_unidentifiable).ok();
    Ok(Json(MetricsView {
        human_decisions: engine.human_decisions(),
        algorithmic_decisions: engine.algorithmic_decisions(),
        open_tasks: engine.queue().len(),
        pending_batches: engine.pending_batches(),
        conflicts: report.conflicts_outstanding,
        cluster_count: engine.graph().cluster_count(),
        annotations: engine.graph().len(),
        scores,
        curve: report.curve.points,
    })
    .into_response())
}

#[derive(Serialize)]
struct ConflictView {
    cluster: String,
    negative_edges_inside: Vec<curagraph::graph::Pair>,
    plan: ResolutionPlan,
}

async fn conflicts(State(state): State<Shared>) -> ApiResult<Response> {
    let engine = lock(&state);
    let graph = engine.graph();
    let mut out = Vec::new();
    for c in graph.find_conflicts() {
        let plan = graph.propose_resolution(&c).map_err(EngineError::from)?;
        out.push(ConflictView {
            cluster: c.cluster.to_string(),
            negative_edges_inside: c.negative_edges_inside,
            plan,
        });
    }
    Ok(Json(out).into_response())
}
