use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures while building the service state.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Startup(String),

    #[error(transparent)]
    Core(#[from] floodviz_core::Error),

    #[error(transparent)]
    Experiments(#[from] floodviz_experiments::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<floodviz_core::Error> for ApiError {
    fn from(e: floodviz_core::Error) -> Self {
        match e {
            floodviz_core::Error::InvalidPolygon(m) => ApiError::bad_request("invalid_polygon", m),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<floodviz_experiments::Error> for ApiError {
    fn from(e: floodviz_experiments::Error) -> Self {
        match e {
            floodviz_experiments::Error::Core(c) => c.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}
