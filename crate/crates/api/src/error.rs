use axum::extract::multipart::MultipartError;
use axum::extract::rejection::{BytesRejection, JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use comodeler_core::CoreError;

use crate::wire::{ErrorBody, ErrorDetail};

/// An error rendered as `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

pub fn status_for(e: &CoreError) -> StatusCode {
    use CoreError::*;
    match e {
        ProjectNotFound(_) | LabelNotFound(_) | SampleNotFound(_) | TestSampleNotFound(_) | BlobNotFound(_)
        | GameNotFound(_) => StatusCode::NOT_FOUND,
        DuplicateProjectName(_) | DuplicateProjectId(_) | LabelNameConflict(_) | LabelDeleted(_)
        | TestSampleDeleted(_) | TrainingPrerequisite { .. } | TrainingInProgress | NoModel | CursorAhead { .. }
        | GameInProgress | StaleRound { .. } | SessionFinished | SessionRunning => StatusCode::CONFLICT,
        InvalidName(_) | InvalidEvent(_) | DimensionMismatch { .. } | NotSimulatedClock | InvalidGameConfig(_) => {
            StatusCode::BAD_REQUEST
        }
        ImageDecode(_) | EmptyImage | Archive(_) => StatusCode::UNPROCESSABLE_ENTITY,
        BlobCorrupt { .. } | EventGap { .. } | Io(_) | Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ApiError { status: status_for(&e), code: e.code(), message: e.to_string() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "PayloadTooLarge" } else { "BadRequest" };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> Self {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "PayloadTooLarge" } else { "BadRequest" };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<MultipartError> for ApiError {
    fn from(e: MultipartError) -> Self {
        let status = e.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "PayloadTooLarge" } else { "BadRequest" };
        ApiError::new(status, code, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        let body = ErrorBody { error: ErrorDetail { code: self.code.to_string(), message: self.message } };
        (self.status, Json(body)).into_response()
    }
}
