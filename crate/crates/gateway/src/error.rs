use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use xapp_store_core::conformance::PlanError;
use xapp_store_core::pseudo_ric::RicError;
use xapp_store_core::registry::{PersistError, RegistryError};
use xapp_store_core::scenario::ScenarioError;
use xapp_store_core::store::StoreError;

/// The JSON error body every failing request returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{status} {code}: {detail}")]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_owned(),
            detail: detail.into(),
        }
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", detail)
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", detail)
    }

    pub fn no_scenario() -> Self {
        Self::new(StatusCode::CONFLICT, "NO_SCENARIO", "no scenario is loaded")
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", detail)
    }
}

/// The `(status, code)` pair for each error variant. No wildcard arms, so a
/// new variant does not compile until it is mapped.
pub fn registry_code(e: &RegistryError) -> (StatusCode, &'static str) {
    match e {
        RegistryError::DuplicateVersion { .. } => (StatusCode::CONFLICT, "DUPLICATE_VERSION"),
        RegistryError::UnknownId(_) => (StatusCode::NOT_FOUND, "UNKNOWN_ID"),
        RegistryError::InvalidTransition { .. } => (StatusCode::CONFLICT, "INVALID_TRANSITION"),
        RegistryError::GateNotSatisfied { .. } => (StatusCode::CONFLICT, "GATE_NOT_SATISFIED"),
        RegistryError::MalformedArchive(_) => (StatusCode::BAD_REQUEST, "MALFORMED_ARCHIVE"),
        RegistryError::WrongState { .. } => (StatusCode::CONFLICT, "WRONG_STATE"),
    }
}

pub fn runtime_code(e: &RicError) -> (StatusCode, &'static str) {
    match e {
        RicError::AlreadyRunning(_) => (StatusCode::CONFLICT, "ALREADY_RUNNING"),
        RicError::RouterRegistrationFailed(_) => {
            (StatusCode::CONFLICT, "ROUTER_REGISTRATION_FAILED")
        }
        RicError::NotRunning(_) => (StatusCode::NOT_FOUND, "NOT_RUNNING"),
    }
}

pub fn scenario_code(e: &ScenarioError) -> (StatusCode, &'static str) {
    match e {
        ScenarioError::Parse(_) => (StatusCode::BAD_REQUEST, "SCENARIO_PARSE"),
        ScenarioError::Invalid(_) => (StatusCode::BAD_REQUEST, "SCENARIO_INVALID"),
    }
}

pub fn plan_code(e: &PlanError) -> (StatusCode, &'static str) {
    match e {
        PlanError::ZeroDuration => (StatusCode::BAD_REQUEST, "PLAN_ZERO_DURATION"),
        PlanError::TooShort { .. } => (StatusCode::BAD_REQUEST, "PLAN_TOO_SHORT"),
        PlanError::Scenario(_) => (StatusCode::BAD_REQUEST, "PLAN_SCENARIO"),
    }
}

pub fn persist_code(e: &PersistError) -> (StatusCode, &'static str) {
    match e {
        PersistError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "IO_FAILURE"),
        PersistError::CorruptStore { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "CORRUPT_STORE"),
    }
}

pub fn store_code(e: &StoreError) -> (StatusCode, &'static str) {
    match e {
        StoreError::Registry(e) => registry_code(e),
        StoreError::Runtime(e) => runtime_code(e),
        StoreError::Scenario(e) => scenario_code(e),
        StoreError::Plan(e) => plan_code(e),
        StoreError::Persist(e) => persist_code(e),
        StoreError::NoReport(_) => (StatusCode::NOT_FOUND, "NO_REPORT"),
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = store_code(&e);
        ApiError::new(status, code, e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        StoreError::from(e).into()
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        StoreError::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
