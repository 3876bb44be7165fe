//! HTTP/JSON API over a [`Store`].
//!
//! | route | |
//! |---|---|
//! | `GET /api/health` | status and version |
//! | `GET /api/images` | image list |
//! | `GET /api/images/{id}/file` | original image bytes |
//! | `GET /api/images/{id}/vp-candidates` | detected VPs |
//! | `GET, PUT /api/images/{id}/annotation` | annotation record; `PUT` honours `If-Match` |
//! | `GET /api/images/{id}/mask.png` | between-outline mask |
//! | `GET /api/images/{id}/condition.png` | rendered desired outlines |
//! | `POST /api/export` | `{name, image_ids}` to a dataset export |
//!
//! Errors are `{"error": {"code", "message", "details"}}`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::error::{AppError, AppResult, ErrorKind};
use crate::store::{AnnotationRecord, Store};

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Conflict | ErrorKind::IncompleteAnnotation => StatusCode::CONFLICT,
            ErrorKind::StoreUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::Io | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.to_json())).into_response()
    }
}

type AppState = Arc<Store>;

/// Runs blocking store work off the async executor.
async fn blocking<T: Send + 'static>(store: AppState, f: impl FnOnce(&Store) -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(move || f(&store)).await.map_err(|e| AppError::internal(e.to_string()))?
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/images", get(list_images))
        .route("/api/images/{id}/file", get(image_file))
        .route("/api/images/{id}/vp-candidates", get(vp_candidates))
        .route("/api/images/{id}/annotation", get(get_annotation).put(put_annotation))
        .route("/api/images/{id}/mask.png", get(mask_png))
        .route("/api/images/{id}/condition.png", get(condition_png))
        .route("/api/export", post(export))
        .fallback(|| async { AppError::not_found("no such route") })
        .with_state(store)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn list_images(State(s): State<AppState>) -> AppResult<Response> {
    Ok(Json(blocking(s, |s| s.list_images()).await?).into_response())
}

async fn image_file(State(s): State<AppState>, Path(id): Path<String>) -> AppResult<Response> {
    let (bytes, mime) = blocking(s, move |s| s.image_bytes(&id)).await?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn vp_candidates(State(s): State<AppState>, Path(id): Path<String>) -> AppResult<Response> {
    let payload = blocking(s, move |s| s.vp_candidates(&id)).await?;
    Ok(Json(&*payload).into_response())
}

fn with_etag(record: &AnnotationRecord) -> Response {
    let mut resp = Json(record).into_response();
    if let Some(v) = record.updated_at.as_deref().and_then(|t| HeaderValue::from_str(&format!("\"{t}\"")).ok()) {
        resp.headers_mut().insert(header::ETAG, v);
    }
    resp
}

async fn get_annotation(State(s): State<AppState>, Path(id): Path<String>) -> AppResult<Response> {
    Ok(with_etag(&blocking(s, move |s| s.get_annotation(&id)).await?))
}

async fn put_annotation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> AppResult<Response> {
    let if_match = match headers.get(header::IF_MATCH) {
        Some(v) => Some(v.to_str().map_err(|_| AppError::validation("If-Match must be ASCII"))?.to_string()),
        None => None,
    };
    let record = AnnotationRecord::parse(&body)?;
    let stored = blocking(s, move |s| s.put_annotation(&id, record, if_match.as_deref())).await?;
    Ok(with_etag(&stored))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn mask_png(State(s): State<AppState>, Path(id): Path<String>) -> AppResult<Response> {
    Ok(png(blocking(s, move |s| s.mask_png(&id)).await?))
}

async fn condition_png(State(s): State<AppState>, Path(id): Path<String>) -> AppResult<Response> {
    Ok(png(blocking(s, move |s| s.condition_png(&id)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    name: String,
    image_ids: Vec<String>,
}

async fn export(State(s): State<AppState>, body: Bytes) -> AppResult<Response> {
    let req: ExportRequest =
        serde_json::from_slice(&body).map_err(|e| AppError::validation(format!("invalid export request: {e}")))?;
    let (manifest, dir) = blocking(s, move |s| s.export_dataset(&req.name, &req.image_ids)).await?;
    Ok(Json(json!({ "export_dir": dir, "manifest": manifest })).into_response())
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn termination_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
