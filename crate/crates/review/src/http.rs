//! JSON HTTP API.
//!
//! - `GET /api/health` → `{"status":"ok","cases":N,"ratings":n}`
//! - `GET /api/raters/{id}/next` → `BlindedCase`; 404 UnknownRater, 410 StudyComplete
//! - `POST /api/raters/{id}/ratings` with `RatingSubmission` → `Ack`;
//!   409 DuplicateRating or WrongCase, 422 IncompleteScores or InvalidBody
//! - `GET /api/summary` with `Authorization: Bearer <admin token>` → `StudySummary`;
//!   403 Forbidden without the token, 409 EmptyStudy before the first rating
//!
//! Errors are `{"error": <name>, "message": <text>}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::service::{RatingSubmission, ReviewService, ServiceError};

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<ReviewService>,
    /// Token required by the summary endpoint, which names the models.
    pub admin_token: Arc<str>,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ErrorBody {
                error: error.to_string(),
                message: message.into(),
            },
        )
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownRater => StatusCode::NOT_FOUND,
            ServiceError::StudyComplete => StatusCode::GONE,
            ServiceError::DuplicateRating(_) | ServiceError::WrongCase { .. } | ServiceError::EmptyStudy => {
                StatusCode::CONFLICT
            }
            ServiceError::IncompleteScores(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Study(_) | ServiceError::Store(_) | ServiceError::Stats(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let message = match status {
            StatusCode::INTERNAL_SERVER_ERROR => "internal error".to_string(),
            _ => e.to_string(),
        };
        Self::new(status, e.name(), message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/raters/{id}/next", get(next_case))
        .route("/api/raters/{id}/ratings", post(submit))
        .route("/api/summary", get(summary))
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "cases": s.service.study.cases.len(),
        "ratings": s.service.store.len(),
    }))
}

async fn next_case(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.service.next_case(&id)?).into_response())
}

async fn submit(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<RatingSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(sub) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidBody", e.body_text()))?;
    let service = s.service.clone();
    let ack = tokio::task::spawn_blocking(move || service.submit(&id, &sub))
        .await
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", "internal error"))??;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn summary(State(s): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if token != Some(&*s.admin_token) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "Forbidden", "summary requires the admin token"));
    }
    Ok(Json(s.service.summary()?).into_response())
}

/// Serves `service` on `addr` until the process ends.
pub async fn serve(service: ReviewService, admin_token: String, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let state = AppState {
        service: Arc::new(service),
        admin_token: admin_token.into(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
