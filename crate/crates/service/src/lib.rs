//! HTTP service for live annotation: serves the next patch as a planar
//! raster, accepts line or correction annotations, retrains, and reports the
//! learning curve. Sessions live in memory.
//!
//! Routes (all JSON, under `/v1`):
//! - `POST /v1/sessions` creates a session and prepares its first query.
//! - `GET /v1/sessions/{id}/query` returns the outstanding query.
//! - `POST /v1/sessions/{id}/annotate` answers it.
//! - `GET /v1/sessions/{id}/metrics` returns the learning curve.

pub mod api;
pub mod raster;

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use geoal_core::engine::{ALSession, PreparedDataset, Query, Selection};
use geoal_core::io::load_dataset;
use geoal_core::synth::build_dataset;
use tokio::sync::{Mutex as SessionLock, OwnedMutexGuard};

use crate::api::{
    Annotation, AnnotateRequest, AnnotateResponse, CircleInfo, CreateSession, CreatedSession, DatasetRef,
    MemberInfo, MetricsResponse, PlaneInfo, QueryResponse, RasterInfo, Status,
};
use crate::raster::{on_side_a, render, Frame, PatchRaster};

/// A line annotation costs two clicks; a correction pass costs three inputs.
pub const LINE_COST: usize = 2;
pub const CORRECTION_COST: usize = 3;

#[derive(Debug)]
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<geoal_core::Error> for ApiError {
    fn from(e: geoal_core::Error) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Outstanding {
    id: u64,
    query: Query,
    frame: Frame,
    raster: PatchRaster,
}

struct LiveSession {
    al: ALSession,
    radius: f64,
    status: Status,
    outstanding: Option<Outstanding>,
    issued: u64,
}

impl LiveSession {
    /// Retrains and prepares the next query, or marks the session done when
    /// the pool or the budget cannot take another line.
    fn advance(&mut self) -> geoal_core::Result<()> {
        self.status = Status::Training;
        self.outstanding = None;
        self.al.retrain()?;
        let next = if self.al.remaining() >= LINE_COST {
            self.al.next_query()?
        } else {
            None
        };
        match next {
            Some(query) => {
                let dataset = self.al.prepared().dataset();
                let frame = Frame::for_query(&query, dataset);
                let raster = render(dataset, &frame, self.radius, &query);
                self.issued += 1;
                self.outstanding = Some(Outstanding {
                    id: self.issued,
                    query,
                    frame,
                    raster,
                });
                self.status = Status::AwaitingAnnotation;
            }
            None => self.status = Status::Done,
        }
        Ok(())
    }

    fn query_response(&self, session_id: u64) -> QueryResponse {
        let mut response = QueryResponse {
            session_id,
            status: self.status,
            query_id: None,
            center: None,
            plane: None,
            radius: self.radius,
            raster: None,
            circle: None,
            members: Vec::new(),
            inputs_spent: self.al.inputs_spent(),
            budget: self.al.budget(),
            metric: self.al.curve().last().map(|p| p.value),
        };
        let Some(out) = &self.outstanding else {
            return response;
        };
        let dataset = self.al.prepared().dataset();
        let half = out.raster.size / 2;
        response.query_id = Some(out.id);
        response.center = Some(out.query.center());
        if let Query::Patch { plane: Some(p), .. } = &out.query {
            response.plane = Some(PlaneInfo {
                phi: p.phi,
                gamma: p.gamma,
                normal: p.normal(),
            });
        }
        response.raster = Some(RasterInfo {
            size: out.raster.size,
            intensities: base64::engine::general_purpose::STANDARD.encode(&out.raster.intensities),
            ids: out.raster.ids.clone(),
        });
        response.circle = Some(CircleInfo {
            center: [half, half],
            radius: self.radius,
        });
        response.members = out
            .query
            .members()
            .iter()
            .map(|&id| {
                let [u, v] = out.frame.project(dataset.supervoxels[id].center);
                MemberInfo {
                    id,
                    u,
                    v,
                    predicted: self.al.predicted_class(id),
                }
            })
            .collect();
        response
    }

    /// Turns an annotation of the outstanding query into labels and a cost.
    fn resolve(&self, out: &Outstanding, annotation: &Annotation) -> ApiResult<(Vec<(usize, usize)>, usize)> {
        let classes = self.al.prepared().dataset().num_classes();
        let check_class = |c: usize| {
            if c < classes {
                Ok(c)
            } else {
                Err(ApiError::bad_request(format!("class {c} out of range for {classes} classes")))
            }
        };
        let members = out.query.members();
        match annotation {
            Annotation::Line(line) => {
                check_class(line.side_a)?;
                check_class(line.side_b)?;
                let inside = |p: [f64; 2]| p.iter().all(|x| x.is_finite()) && p[0].hypot(p[1]) <= self.radius + 1e-9;
                if !inside(line.a) || !inside(line.b) {
                    return Err(ApiError::bad_request("line endpoints must lie inside the patch circle"));
                }
                if line.a == line.b {
                    return Err(ApiError::bad_request("line endpoints must differ"));
                }
                let dataset = self.al.prepared().dataset();
                let labels = members
                    .iter()
                    .map(|&id| {
                        let p = out.frame.project(dataset.supervoxels[id].center);
                        let class = if on_side_a(line.a, line.b, p) {
                            line.side_a
                        } else {
                            line.side_b
                        };
                        (id, class)
                    })
                    .collect();
                Ok((labels, LINE_COST))
            }
            Annotation::Corrections(list) => {
                let mut labels: HashMap<usize, usize> = HashMap::new();
                for c in list {
                    if members.binary_search(&c.id).is_err() {
                        return Err(ApiError::bad_request(format!("supervoxel {} is not in the patch", c.id)));
                    }
                    labels.insert(c.id, check_class(c.class)?);
                }
                let resolved = members
                    .iter()
                    .map(|&id| {
                        let class = labels
                            .get(&id)
                            .copied()
                            .or_else(|| self.al.predicted_class(id))
                            .ok_or_else(|| ApiError::internal("no prediction for a patch member"))?;
                        Ok((id, class))
                    })
                    .collect::<ApiResult<Vec<_>>>()?;
                Ok((resolved, CORRECTION_COST))
            }
        }
    }
}

/// Shared service state: dataset root and the live sessions.
pub struct AppState {
    data_root: PathBuf,
    sessions: Mutex<HashMap<u64, Arc<SessionLock<LiveSession>>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Dataset paths in requests are resolved relative to `data_root`.
    pub fn new(data_root: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            data_root: data_root.into(),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn session(&self, id: u64) -> ApiResult<Arc<SessionLock<LiveSession>>> {
        self.sessions
            .lock()
            .expect("session map lock poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn resolve_path(&self, relative: &Path) -> ApiResult<PathBuf> {
        let safe = relative
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
        if !safe {
            return Err(ApiError::bad_request("dataset path must be relative and stay inside the data root"));
        }
        Ok(self.data_root.join(relative))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/query", get(get_query))
        .route("/v1/sessions/{id}/annotate", post(annotate))
        .route("/v1/sessions/{id}/metrics", get(get_metrics))
        .with_state(state)
}

/// Serves the API on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let Json(req) = body?;
    if req.strategy.selection == Selection::Single {
        return Err(ApiError::bad_request(format!(
            "strategy {} asks single samples; live annotation needs a patch strategy",
            req.strategy
        )));
    }
    let path = match &req.dataset {
        DatasetRef::Path(p) => Some(state.resolve_path(p)?),
        DatasetRef::Synth(_) => None,
    };
    let session = blocking(move || {
        let dataset = match (&req.dataset, path) {
            (DatasetRef::Synth(spec), _) => build_dataset(spec)?.0,
            (_, Some(path)) => load_dataset(&path)?,
            _ => unreachable!("paths are resolved above"),
        };
        let prepared = Arc::new(PreparedDataset::new(dataset, req.config.neighbors, req.seed)?);
        let radius = req.config.radius;
        let mut al = ALSession::new(prepared, req.strategy, req.config, req.seed, 0)?;
        match &req.seed_labels {
            Some(labels) => al.seed_with(labels)?,
            None => al.seed_from_ground_truth()?,
        }
        let mut live = LiveSession {
            al,
            radius,
            status: Status::Training,
            outstanding: None,
            issued: 0,
        };
        live.advance()?;
        Ok(live)
    })
    .await?;
    let id = state.next_id.fetch_add(1, Ordering::SeqCst);
    let status = session.status;
    state
        .sessions
        .lock()
        .expect("session map lock poisoned")
        .insert(id, Arc::new(SessionLock::new(session)));
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id: id, status })))
}

async fn get_query(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Response> {
    let lock = state.session(id)?;
    // a session busy retraining reports so instead of blocking the client
    let Ok(session) = lock.try_lock() else {
        let body = serde_json::json!({ "session_id": id, "status": Status::Training });
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    };
    Ok(Json(session.query_response(id)).into_response())
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
    body: Result<Json<AnnotateRequest>, JsonRejection>,
) -> ApiResult<Json<AnnotateResponse>> {
    let lock = state.session(id)?;
    let Json(req) = body?;
    let mut session: OwnedMutexGuard<LiveSession> = lock.lock_owned().await;
    let out = match session.outstanding.take() {
        Some(out) if out.id == req.query_id => out,
        other => {
            session.outstanding = other;
            return Err(ApiError::conflict(format!("query {} is not outstanding", req.query_id)));
        }
    };
    let resolved = session.resolve(&out, &req.annotation);
    let (labels, cost) = match resolved {
        Ok(r) => r,
        Err(e) => {
            session.outstanding = Some(out);
            return Err(e);
        }
    };
    if cost > session.al.remaining() {
        session.outstanding = Some(out);
        return Err(ApiError::bad_request(format!(
            "annotation costs {cost} inputs but only {} remain",
            session.al.remaining()
        )));
    }
    let newly_labeled = session.al.apply(&labels, cost)?;
    let response = blocking(move || {
        session.advance().map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(AnnotateResponse {
            accepted: true,
            newly_labeled,
            inputs_spent: session.al.inputs_spent(),
            status: session.status,
        })
    })
    .await?;
    Ok(Json(response))
}

async fn get_metrics(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<MetricsResponse>> {
    let lock = state.session(id)?;
    let session = lock.lock().await;
    Ok(Json(MetricsResponse {
        session_id: id,
        status: session.status,
        metric: session.al.metric_kind().to_string(),
        curve: session.al.curve().to_vec(),
        inputs_spent: session.al.inputs_spent(),
        budget: session.al.budget(),
        labeled: session.al.labeled_count(),
    }))
}
