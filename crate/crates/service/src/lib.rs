//! JSON-over-HTTP front end for the design engine.
//!
//! Every handler parses its body, hands it to one of the pure functions in
//! [`api`] on the blocking pool and serializes the result. The service holds
//! no state of its own.

pub mod api;

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::ApiError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8750";

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "error": self }))).into_response()
    }
}

async fn run<Req, Resp>(
    body: Bytes,
    f: fn(&Req) -> trial_forge::Result<Resp>,
) -> Result<Json<Resp>, ApiError>
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = serde_json::from_slice(&body)?;
    tokio::task::spawn_blocking(move || f(&req))
        .await
        .map_err(|e| ApiError {
            status: 500,
            kind: "internal".into(),
            field: None,
            message: e.to_string(),
        })?
        .map(Json)
        .map_err(ApiError::from)
}

async fn design(body: Bytes) -> Result<Json<api::DesignResponse>, ApiError> {
    run(body, api::compute_design).await
}

async fn curve(body: Bytes) -> Result<Json<api::PowerCurveResponse>, ApiError> {
    run(body, api::compute_power_curve).await
}

async fn feasibility(body: Bytes) -> Result<Json<api::FeasibilityResponse>, ApiError> {
    run(body, api::compute_feasibility).await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

pub fn router() -> Router {
    Router::new()
        .route("/api/v1/design", post(design))
        .route("/api/v1/power-curve", post(curve))
        .route("/api/v1/feasibility", post(feasibility))
        .route("/api/v1/health", get(health))
}

/// Serves [`router`] on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router()).await
}
