use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use dualsim::error::Stage;

/// Wire form of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug)]
pub enum ApiError {
    Core(dualsim::Error),
    UnknownMerchant(String),
    UnknownSession(String),
    /// Ranking requested before every strategy has a result.
    IncompleteSession(String),
    /// The strategy list changed while a simulation was running.
    StaleSession(String),
    Validation(String),
    MalformedBody(String),
    Unauthorized,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        use dualsim::Error as E;
        match self {
            ApiError::Core(e) => match root(e) {
                E::UnknownFieldPath(_) | E::InvariantViolation(_) | E::Precondition(_) | E::TooFewPairs { .. } => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                E::RemoteUnreachable { .. } | E::EmptyCompletion | E::UnparseableDecision(_) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::UnknownMerchant(_) | ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::IncompleteSession(_) | ApiError::StaleSession(_) => StatusCode::CONFLICT,
            ApiError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::MalformedBody(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (code, stage, message) = match self {
            ApiError::Core(e) => (e.code(), e.stage(), root(e).to_string()),
            ApiError::UnknownMerchant(id) => ("unknown_merchant", None, format!("no merchant `{id}`")),
            ApiError::UnknownSession(id) => ("unknown_session", None, format!("no session `{id}`")),
            ApiError::IncompleteSession(m) => ("incomplete_session", None, m.clone()),
            ApiError::StaleSession(m) => ("stale_session", None, m.clone()),
            ApiError::Validation(m) => ("validation", None, m.clone()),
            ApiError::MalformedBody(m) => ("malformed_body", None, m.clone()),
            ApiError::Unauthorized => ("unauthorized", None, "missing or wrong bearer token".to_owned()),
        };
        ErrorBody {
            code: code.to_owned(),
            stage,
            message,
        }
    }
}

fn root(e: &dualsim::Error) -> &dualsim::Error {
    match e {
        dualsim::Error::Stage { source, .. } => root(source),
        other => other,
    }
}

impl From<dualsim::Error> for ApiError {
    fn from(e: dualsim::Error) -> Self {
        ApiError::Core(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
