use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use droidharness_core::api::{ErrorBody, ErrorDetail};
use droidharness_core::bench::BenchError;
use droidharness_core::recorder::{RecorderError, Review};
use serde::de::DeserializeOwned;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub review: Option<Review>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), review: None }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = ErrorBody { error: ErrorDetail { code: self.code.into(), message: self.message, review: self.review } };
        (self.status, Json(body)).into_response()
    }
}

impl From<RecorderError> for ApiError {
    fn from(e: RecorderError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            RecorderError::State { .. } => (StatusCode::CONFLICT, "state"),
            RecorderError::Conflict(review) => {
                return Self { status: StatusCode::CONFLICT, code: "conflict", message, review: Some(review.clone()) }
            }
            RecorderError::Rejected(_) => (StatusCode::CONFLICT, "rejected"),
            RecorderError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            RecorderError::Gesture(_) => (StatusCode::UNPROCESSABLE_ENTITY, "gesture"),
            RecorderError::Ground(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ground"),
            RecorderError::EmptySeeds | RecorderError::InvalidArgument(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument")
            }
            RecorderError::Device(_) => (StatusCode::BAD_GATEWAY, "device"),
            RecorderError::Endpoint(_) => (StatusCode::BAD_GATEWAY, "endpoint"),
            RecorderError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            RecorderError::CorruptTrace { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_trace"),
        };
        Self::new(status, code, message)
    }
}

impl From<BenchError> for ApiError {
    fn from(e: BenchError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            BenchError::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "config"),
            BenchError::InvalidSuite(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_suite"),
            BenchError::NoResults(_) => (StatusCode::NOT_FOUND, "no_results"),
            BenchError::Device(_) => (StatusCode::BAD_GATEWAY, "device"),
            BenchError::Endpoint(_) => (StatusCode::BAD_GATEWAY, "endpoint"),
            BenchError::Evaluation { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "evaluation"),
            BenchError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        Self::new(status, code, message)
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::internal(format!("worker task failed: {e}"))
    }
}

/// `Json` whose rejections use the service's error body.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(rejection) => Err(bad_body(rejection)),
        }
    }
}

fn bad_body(rejection: JsonRejection) -> ApiError {
    ApiError::new(rejection.status(), "bad_request", rejection.body_text())
}
