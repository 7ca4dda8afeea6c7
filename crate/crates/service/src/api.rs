//! HTTP routes.
//!
//! All bodies are JSON. Mutating routes accept an optional
//! `expected_version`; a stale value yields 409 and the client should
//! re-read and retry. Layout routes accept `format=svg` for a static
//! rendering instead of JSON.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use driftscope_core::layout::HeatGrid;
use driftscope_core::render::{dotplot_svg, icicle_svg, list_svg};
use driftscope_core::{AggregationMethod, CohortId, DimensionId, EdgeId, FilterOperator};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ErrorClass, ServiceError};
use crate::session::{Mutation, ViewParams};
use crate::source::DatasetSource;
use crate::store::SessionStore;

#[derive(Clone)]
struct AppState {
    store: Arc<SessionStore>,
    token: Option<Arc<str>>,
}

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        Self(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match self.0.class() {
            ErrorClass::NotFound => (StatusCode::NOT_FOUND, "not-found"),
            ErrorClass::Invalid => (StatusCode::BAD_REQUEST, "invalid"),
            ErrorClass::Conflict => (StatusCode::CONFLICT, "conflict"),
            ErrorClass::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ErrorClass::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

/// Runs CPU-bound session work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(ServiceError::Storage(std::io::Error::other(e.to_string())))),
    }
}

#[derive(Debug, Deserialize)]
struct FilterRequest {
    /// Defaults to the current focus.
    parent: Option<CohortId>,
    #[serde(flatten)]
    operator: FilterOperator,
    expected_version: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct CohortRequest {
    cohort: CohortId,
    expected_version: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct SettingsRequest {
    t_s: Option<f64>,
    method: Option<AggregationMethod>,
    manual_salient: Option<std::collections::BTreeSet<DimensionId>>,
    expected_version: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct SalientRequest {
    dim: DimensionId,
    expected_version: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct VisibleRequest {
    visible: bool,
    expected_version: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
struct FormatParam {
    format: Option<String>,
}

impl FormatParam {
    fn svg(&self) -> Result<bool, ServiceError> {
        match self.format.as_deref() {
            None | Some("json") => Ok(false),
            Some("svg") => Ok(true),
            Some(other) => Err(ServiceError::BadRequest(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct GridParams {
    depth_bins: Option<usize>,
    drift_bins: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct OverlapParams {
    a: Option<CohortId>,
    b: Option<CohortId>,
}

#[derive(Serialize)]
struct MutationResponse<T: Serialize> {
    #[serde(flatten)]
    applied: crate::session::Applied,
    tree: T,
}

fn svg_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "image/svg+xml")], body).into_response()
}

pub fn router(store: Arc<SessionStore>, token: Option<String>) -> Router {
    let state = AppState {
        store,
        token: token.map(Arc::from),
    };
    let sessions = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/cohorts", post(apply_filter))
        .route("/sessions/{id}/baseline", put(set_baseline))
        .route("/sessions/{id}/focus", put(set_focus))
        .route("/sessions/{id}/settings", put(set_settings).get(get_settings))
        .route("/sessions/{id}/salient", post(promote_salient))
        .route("/sessions/{id}/edges/{edge}/visible", put(set_visible))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/profile", get(get_profile))
        .route("/sessions/{id}/layout/icicle", get(get_icicle))
        .route("/sessions/{id}/layout/icicle/groups/{group}", get(get_group))
        .route("/sessions/{id}/layout/dotplot", get(get_dotplot))
        .route("/sessions/{id}/layout/list", get(get_list))
        .route("/sessions/{id}/overlap", get(get_overlap))
        .route("/sessions/{id}/dimension/{system}/{code}", get(get_dimension))
        .route("/sessions/{id}/export", get(export_session))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .merge(sessions)
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_ref()) {
            return ApiError(ServiceError::Unauthorized).into_response();
        }
    }
    next.run(req).await
}

/// Serves `router` on `addr` until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let source: DatasetSource = parse(&body)?;
    let info = blocking(move || st.store.create(source)).await?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn list_sessions(State(st): State<AppState>) -> Json<Vec<String>> {
    Json(st.store.ids())
}

async fn session_info(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.store.info(&id)?).into_response())
}

async fn mutate(st: AppState, id: String, expected: Option<u64>, m: Mutation) -> ApiResult<Response> {
    blocking(move || {
        let applied = st.store.mutate(&id, expected, m)?;
        let tree = st.store.read(&id, |s| s.tree_summary())?;
        Ok(Json(MutationResponse { applied, tree }).into_response())
    })
    .await
}

async fn apply_filter(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: FilterRequest = parse(&body)?;
    let parent = match req.parent {
        Some(p) => p,
        None => st.store.read(&id, |s| Ok(s.tree().focus()))?,
    };
    let m = Mutation::ApplyFilter {
        parent,
        operator: req.operator,
    };
    let mut resp = mutate(st, id, req.expected_version, m).await?;
    *resp.status_mut() = StatusCode::CREATED;
    Ok(resp)
}

async fn set_baseline(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CohortRequest = parse(&body)?;
    mutate(st, id, req.expected_version, Mutation::SetBaseline { cohort: req.cohort }).await
}

async fn set_focus(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CohortRequest = parse(&body)?;
    mutate(st, id, req.expected_version, Mutation::SetFocus { cohort: req.cohort }).await
}

async fn get_settings(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.store.read(&id, |s| Ok(s.settings().clone()))?).into_response())
}

async fn set_settings(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: SettingsRequest = parse(&body)?;
    let mut settings = st.store.read(&id, |s| Ok(s.settings().clone()))?;
    if let Some(t) = req.t_s {
        settings.t_s = t;
    }
    if let Some(m) = req.method {
        settings.method = m;
    }
    if let Some(d) = req.manual_salient {
        settings.manual_salient = d;
    }
    mutate(st, id, req.expected_version, Mutation::SetSettings { settings }).await
}

async fn promote_salient(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: SalientRequest = parse(&body)?;
    mutate(st, id, req.expected_version, Mutation::PromoteSalient { dim: req.dim }).await
}

async fn set_visible(
    State(st): State<AppState>,
    Path((id, edge)): Path<(String, u64)>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: VisibleRequest = parse(&body)?;
    let m = Mutation::SetExcludedVisible {
        edge: EdgeId(edge),
        visible: req.visible,
    };
    mutate(st, id, req.expected_version, m).await
}

async fn get_tree(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || Ok(Json(st.store.read(&id, |s| s.tree_summary())?).into_response())).await
}

async fn get_profile(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
) -> ApiResult<Response> {
    blocking(move || Ok(Json(st.store.read(&id, |s| s.profile_document(&view))?).into_response())).await
}

async fn get_icicle(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
    Query(fmt): Query<FormatParam>,
) -> ApiResult<Response> {
    let svg = fmt.svg()?;
    blocking(move || {
        let layout = st.store.read(&id, |s| s.icicle(&view))?;
        Ok(if svg {
            svg_response(icicle_svg(&layout))
        } else {
            Json(layout).into_response()
        })
    })
    .await
}

async fn get_group(
    State(st): State<AppState>,
    Path((id, group)): Path<(String, usize)>,
    Query(view): Query<ViewParams>,
) -> ApiResult<Response> {
    blocking(move || Ok(Json(st.store.read(&id, |s| s.expand(&view, group))?).into_response())).await
}

async fn get_dotplot(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
    Query(grid): Query<GridParams>,
    Query(fmt): Query<FormatParam>,
) -> ApiResult<Response> {
    let svg = fmt.svg()?;
    let default = HeatGrid::default();
    let grid = HeatGrid {
        depth_bins: grid.depth_bins.unwrap_or(default.depth_bins),
        drift_bins: grid.drift_bins.unwrap_or(default.drift_bins),
    };
    blocking(move || {
        let layout = st.store.read(&id, |s| s.dotplot(&view, grid))?;
        Ok(if svg {
            svg_response(dotplot_svg(&layout))
        } else {
            Json(layout).into_response()
        })
    })
    .await
}

async fn get_list(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(view): Query<ViewParams>,
    Query(fmt): Query<FormatParam>,
) -> ApiResult<Response> {
    let svg = fmt.svg()?;
    blocking(move || {
        let list = st.store.read(&id, |s| s.list(&view))?;
        Ok(if svg {
            svg_response(list_svg(&list.rows, list.color_max))
        } else {
            Json(list).into_response()
        })
    })
    .await
}

async fn get_overlap(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<OverlapParams>,
) -> ApiResult<Response> {
    let summary = st.store.read(&id, |s| {
        s.overlap(q.a.unwrap_or(s.tree().baseline()), q.b.unwrap_or(s.tree().focus()))
    })?;
    Ok(Json(summary).into_response())
}

async fn get_dimension(
    State(st): State<AppState>,
    Path((id, system, code)): Path<(String, String, String)>,
    Query(view): Query<ViewParams>,
) -> ApiResult<Response> {
    let dim = DimensionId::new(system, code);
    blocking(move || Ok(Json(st.store.read(&id, |s| s.dimension(&dim, &view))?).into_response())).await
}

async fn export_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.store.export(&id)?).into_response())
}
