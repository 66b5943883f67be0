//! Thin HTTP client used by the CLI subcommands.

use reqwest::header::CONTENT_TYPE;
use reqwest::{Client, Response};
use serde::de::DeserializeOwned;

use xapp_store_core::conformance::ConformanceReport;
use xapp_store_core::registry::RecordSummary;

use crate::error::ApiError;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with an error body.
    #[error("{0}")]
    Api(ApiError),
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
}

pub struct StoreClient {
    base: String,
    http: Client,
}

impl StoreClient {
    pub fn new(server: &str) -> Self {
        Self {
            base: server.trim_end_matches('/').to_owned(),
            http: Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(
        &self,
        url: String,
        resp: Response,
    ) -> Result<T, ClientError> {
        let status = resp.status();
        let body = resp
            .bytes()
            .await
            .map_err(|source| ClientError::Transport {
                url: url.clone(),
                source,
            })?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| {
                ClientError::Api(ApiError::new(status, "BAD_RESPONSE", format!("{url}: {e}")))
            });
        }
        let err = serde_json::from_slice::<ApiError>(&body).unwrap_or_else(|_| ApiError {
            status: status.as_u16(),
            code: status
                .canonical_reason()
                .unwrap_or("HTTP_ERROR")
                .to_uppercase()
                .replace(' ', "_"),
            detail: String::from_utf8_lossy(&body).into_owned(),
        });
        Err(ClientError::Api(err))
    }

    pub async fn submit(&self, archive: Vec<u8>) -> Result<RecordSummary, ClientError> {
        let url = self.url("/xapps");
        let resp = self
            .http
            .post(&url)
            .header(CONTENT_TYPE, "application/x-tar")
            .body(archive)
            .send()
            .await
            .map_err(|source| ClientError::Transport {
                url: url.clone(),
                source,
            })?;
        self.decode(url, resp).await
    }

    pub async fn report(&self, id: &str) -> Result<ConformanceReport, ClientError> {
        let url = self.url(&format!("/xapps/{id}/report"));
        let resp = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|source| ClientError::Transport {
                url: url.clone(),
                source,
            })?;
        self.decode(url, resp).await
    }
}
