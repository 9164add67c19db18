//! Routes:
//!
//! ```text
//! GET  /tasks?state=S              task summaries
//! POST /tasks                      {image_id}
//! GET  /tasks/{id}                 task payload
//! POST /tasks/{id}/edits           {base_version, edits}
//! POST /tasks/{id}/instance-edits  {base_version, edits}
//! POST /tasks/{id}/finalize        {base_version}
//! GET  /tasks/{id}/export          finalized raster references
//! GET  /images/{id}                source image
//! GET  /rasters/{ref}              stored PNG
//! ```
//!
//! Mutations accept an `x-annotator-id` header used for session timing.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use segfuse_core::fusion::EditOp;
use segfuse_core::instance::InstanceEdit;

use crate::error::{ErrorCode, ServiceError};
use crate::service::TaskService;
use crate::task::TaskState;

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

type Shared = Arc<TaskService>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    image_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditsBody {
    base_version: u64,
    edits: Vec<EditOp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceEditsBody {
    base_version: u64,
    edits: Vec<InstanceEdit>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinalizeBody {
    base_version: u64,
}

#[derive(Deserialize)]
struct ListQuery {
    state: Option<String>,
}

#[derive(Serialize)]
struct FinalizeResponse<'a> {
    task: &'a crate::task::TaskRecord,
    semantic: String,
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::validation(format!("request body: {e}")))
}

fn annotator(headers: &HeaderMap) -> Result<Option<String>, ServiceError> {
    match headers.get(ANNOTATOR_HEADER) {
        None => Ok(None),
        Some(v) => v
            .to_str()
            .map(|s| Some(s.to_string()))
            .map_err(|_| ServiceError::validation("annotator id must be visible ASCII")),
    }
}

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(svc: Shared, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&TaskService) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(ServiceError::internal)?
}

async fn list_tasks(State(svc): State<Shared>, Query(q): Query<ListQuery>) -> Response {
    let state = match q.state.as_deref().map(str::parse::<TaskState>).transpose() {
        Ok(s) => s,
        Err(e) => return ServiceError::validation(e).into_response(),
    };
    match blocking(svc, move |s| s.list_tasks(state)).await {
        Ok(list) => Json(list).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn create_task(State(svc): State<Shared>, body: Bytes) -> Response {
    let r = async {
        let b: CreateBody = parse(&body)?;
        blocking(svc, move |s| s.create_task(&b.image_id)).await
    };
    match r.await {
        Ok(t) => (StatusCode::CREATED, Json(t)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_task(State(svc): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(svc, move |s| s.task_payload(&id)).await {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit_edits(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let r = async {
        let who = annotator(&headers)?;
        let b: EditsBody = parse(&body)?;
        blocking(svc, move |s| {
            s.submit_edits(&id, b.base_version, b.edits, who.as_deref())
        })
        .await
    };
    match r.await {
        Ok(t) => Json(t).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit_instance_edits(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let r = async {
        let who = annotator(&headers)?;
        let b: InstanceEditsBody = parse(&body)?;
        blocking(svc, move |s| {
            s.submit_instance_edits(&id, b.base_version, b.edits, who.as_deref())
        })
        .await
    };
    match r.await {
        Ok(t) => Json(t).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn finalize(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let r = async {
        let who = annotator(&headers)?;
        let b: FinalizeBody = parse(&body)?;
        blocking(svc, move |s| s.finalize_task(&id, b.base_version, who.as_deref())).await
    };
    match r.await {
        Ok((task, _)) => {
            let semantic = task
                .finalized
                .as_ref()
                .map(|f| crate::task::raster_url(&f.semantic))
                .unwrap_or_default();
            Json(FinalizeResponse {
                task: &task,
                semantic,
            })
            .into_response()
        }
        Err(e) => e.into_response(),
    }
}

async fn export(State(svc): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(svc, move |s| s.export(&id)).await {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn image(State(svc): State<Shared>, Path(id): Path<String>) -> Response {
    match blocking(svc, move |s| s.image(&id)).await {
        Ok((bytes, ct)) => ([(header::CONTENT_TYPE, ct)], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn raster(State(svc): State<Shared>, Path(r): Path<String>) -> Response {
    match blocking(svc, move |s| s.raster(&r)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn fallback() -> ServiceError {
    ServiceError::new(ErrorCode::NotFound, "no such route")
}

pub fn router(svc: Arc<TaskService>) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks).post(create_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/edits", post(submit_edits))
        .route("/tasks/{id}/instance-edits", post(submit_instance_edits))
        .route("/tasks/{id}/finalize", post(finalize))
        .route("/tasks/{id}/export", get(export))
        .route("/images/{id}", get(image))
        .route("/rasters/{ref}", get(raster))
        .fallback(fallback)
        .with_state(svc)
}

/// Binds `addr` and returns the listener with its resolved local address.
pub async fn bind(addr: SocketAddr) -> std::io::Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind(addr).await?;
    let local = l.local_addr()?;
    Ok((l, local))
}

pub async fn serve(listener: TcpListener, svc: Arc<TaskService>) -> std::io::Result<()> {
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
