use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

use coimagine_core::audio::AudioError;
use coimagine_core::domain::{DomainError, MemoryTaskError};
use coimagine_core::grammar::GrammarError;
use coimagine_core::images::ImageError;
use coimagine_core::CoordinatorError;

/// An error as returned to HTTP clients: a status and a JSON body with at
/// least `error` and `message`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": error, "message": message.into() }),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.body[key] = value.into();
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn domain_status(e: &DomainError) -> StatusCode {
    use DomainError as D;
    match e {
        D::EmptyName
        | D::EmptyKeyword
        | D::InvalidDuration { .. }
        | D::MissingThemeTitle { .. } => StatusCode::BAD_REQUEST,
        D::UnknownParticipant { .. } | D::UnknownTheme { .. } => StatusCode::NOT_FOUND,
        D::WrongPhase { .. }
        | D::DuplicateActiveName { .. }
        | D::NothingToConfirm
        | D::SessionInProgress
        | D::InactiveTheme { .. }
        | D::OutOfTurn { .. }
        | D::NoPendingTopic { .. }
        | D::NoActiveParticipants
        | D::ClockWentBackwards { .. } => StatusCode::CONFLICT,
    }
}

fn tagged<T: serde::Serialize>(status: StatusCode, e: &T, message: String) -> ApiError {
    let mut body = serde_json::to_value(e).unwrap_or_else(|_| json!({}));
    body["message"] = message.into();
    ApiError { status, body }
}

fn image_error(e: &ImageError) -> ApiError {
    let status = if e.is_provider_failure() {
        StatusCode::BAD_GATEWAY
    } else {
        match e {
            ImageError::Storage { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    };
    let error = if e.is_provider_failure() {
        "provider_failure"
    } else {
        e.kind()
    };
    ApiError::new(status, error, e.to_string()).with("kind", e.kind())
}

fn audio_error(e: &AudioError) -> ApiError {
    use AudioError as A;
    let (status, error) = match e {
        A::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
        A::UnknownHandle(_) => (StatusCode::NOT_FOUND, "unknown_handle"),
        A::SlotNotActive { .. } => (StatusCode::CONFLICT, "slot_not_active"),
        A::DuplicateRecording { .. } => (StatusCode::CONFLICT, "duplicate_recording"),
        A::RecordingClosed(_) => (StatusCode::CONFLICT, "recording_closed"),
        A::ZeroLengthChunk => (StatusCode::BAD_REQUEST, "zero_length_chunk"),
        A::ChunkTooLarge { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "chunk_too_large"),
        A::EmptyRecording => (StatusCode::CONFLICT, "empty_recording"),
        A::ClockSkew { .. } => (StatusCode::CONFLICT, "clock_skew"),
        A::UnsupportedMediaType(_) => (StatusCode::BAD_REQUEST, "unsupported_media_type"),
        A::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
    };
    ApiError::new(status, error, e.to_string())
}

fn memory_status(e: &MemoryTaskError) -> StatusCode {
    match e {
        MemoryTaskError::UnknownItem { .. } => StatusCode::NOT_FOUND,
        MemoryTaskError::NoSourceImages | MemoryTaskError::IncompleteGuesses { .. } => {
            StatusCode::CONFLICT
        }
    }
}

impl From<CoordinatorError> for ApiError {
    fn from(e: CoordinatorError) -> Self {
        use CoordinatorError as C;
        let message = e.to_string();
        match &e {
            C::Domain(d) => tagged(domain_status(d), d, message),
            C::Image(i) => image_error(i),
            C::Audio(a) => audio_error(a),
            C::Grammar(GrammarError::EmptyUtterance) => {
                ApiError::new(StatusCode::BAD_REQUEST, "empty_utterance", message)
            }
            C::Log(_) => {
                tracing::error!(error = %e, "event log failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "event_log", message)
            }
            C::Memory(m) => tagged(memory_status(m), m, message),
            C::ImageUnavailable { source, seq } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "provider_failure", message)
                    .with("kind", source.kind())
                    .with("seq", *seq)
            }
            C::Unrecognized { utterance } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unrecognized", message)
                    .with("utterance", utterance.as_str())
            }
            C::UnknownSession(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_session", message)
            }
            C::SeqAhead { requested, next } => {
                ApiError::new(StatusCode::CONFLICT, "seq_ahead", message)
                    .with("requested", *requested)
                    .with("next", *next)
            }
            C::NoMemoryTask => ApiError::new(StatusCode::NOT_FOUND, "no_memory_task", message),
            C::SessionNotFinished => {
                ApiError::new(StatusCode::CONFLICT, "session_not_finished", message)
            }
        }
    }
}
