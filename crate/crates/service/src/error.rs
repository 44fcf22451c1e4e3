use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::Value;

/// Wire error: `{code, message, detail}` with an HTTP status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(400, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(500, "Internal", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

macro_rules! from_core {
    ($($t:ty => $code:literal),* $(,)?) => {
        $(impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::new(500, $code, e.to_string())
            }
        })*
    };
}

from_core! {
    tumor_retrieval::dataset::DatasetError => "Dataset",
    tumor_retrieval::train::TrainError => "Train",
    tumor_retrieval::index::IndexError => "Index",
    tumor_retrieval::eval::EvalError => "Eval",
    tumor_retrieval::model::ModelError => "Model",
    tumor_retrieval::phantom::PhantomError => "Phantom",
    tumor_retrieval::volume::VolumeError => "Volume",
    std::io::Error => "Io",
    serde_json::Error => "Json",
}
