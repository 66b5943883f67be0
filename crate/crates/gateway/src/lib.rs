//! HTTP/JSON gateway and CLI client for the xApp store.

pub mod client;
pub mod error;
pub mod server;

pub use error::ApiError;
pub use server::{router, serve, AppState, ScenarioDefaults, Shared, StreamEvent};
