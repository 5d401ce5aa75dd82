//! JSON-over-HTTP routes and static hosting of the labeling UI.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::board::{Ack, LabelSubmission, PendingQuery, QueryBoard, Status};
use crate::ServiceError;

/// Body of `GET /queries/next`: `query` is null when nothing is waiting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub query: Option<PendingQuery>,
    pub status: Status,
}

#[derive(Debug, Deserialize)]
struct NextParams {
    labeler: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let code = match &self {
            ServiceError::UnknownQuery(_) => StatusCode::NOT_FOUND,
            ServiceError::NotLeased(_)
            | ServiceError::LeaseExpired(_)
            | ServiceError::AlreadyLabeled(_)
            | ServiceError::Withdrawn(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

async fn next_query(State(board): State<Arc<QueryBoard>>, Query(params): Query<NextParams>) -> Json<NextResponse> {
    let query = board.next_query(&params.labeler);
    Json(NextResponse { query, status: board.status() })
}

async fn submit_label(
    State(board): State<Arc<QueryBoard>>,
    Path(id): Path<u64>,
    Json(body): Json<LabelSubmission>,
) -> Result<Json<Ack>, ServiceError> {
    // Submissions may call a remote LLM with blocking I/O.
    let ack = tokio::task::spawn_blocking(move || board.submit(id, &body))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(ack))
}

async fn status(State(board): State<Arc<QueryBoard>>) -> Json<Status> {
    Json(board.status())
}

/// API routes, plus the UI bundle from `static_dir` at `/` when given.
pub fn router(board: Arc<QueryBoard>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/queries/next", get(next_query))
        .route("/queries/{id}/label", post(submit_label))
        .route("/status", get(status))
        .with_state(board);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, board: Arc<QueryBoard>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, board, static_dir).await
}

/// Like [`serve`] on a listener the caller already bound.
pub async fn serve_on(listener: TcpListener, board: Arc<QueryBoard>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "labeling service listening");
    axum::serve(listener, router(board, static_dir)).await
}
