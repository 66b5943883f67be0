#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde_json::Value;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use xapp_store_core::archive::PackageArchive;
use xapp_store_core::store::{Store, StoreConfig};
use xapp_store_gateway::{router, serve, ApiError, AppState, ScenarioDefaults, Shared};

pub const DEFAULTS: ScenarioDefaults = ScenarioDefaults {
    seed: 7,
    tick_ms: 1000,
};
pub const PIPELINE_DEADLINE: Duration = Duration::from_secs(60);

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn package(name: &str) -> PackageArchive {
    PackageArchive::from_dir(&repo_root().join("packages").join(name)).unwrap()
}

pub fn scenario_json(name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(repo_root().join("scenarios").join(name)).unwrap())
        .unwrap()
}

/// The same package with one manifest field changed, so its digest differs.
pub fn variant(pkg: &PackageArchive, field: &str, value: Value) -> PackageArchive {
    let mut m: Value = serde_json::from_slice(&pkg.manifest_bytes).unwrap();
    m[field] = value;
    PackageArchive::new(
        m.to_string().into_bytes(),
        &pkg.behavior_script.to_json(),
        pkg.assets.clone(),
    )
    .unwrap()
}

pub struct Server {
    pub base: String,
    pub state: Shared,
    pub http: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<Result<(), ApiError>>>,
}

impl Server {
    pub async fn start(store: Store) -> Self {
        Self::start_with(store, None).await
    }

    pub async fn start_with(store: Store, dashboard: Option<PathBuf>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let state = AppState::new(store, DEFAULTS);
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(serve(listener, state.clone(), dashboard, async {
            let _ = rx.await;
        }));
        Self {
            base,
            state,
            http: reqwest::Client::new(),
            stop: Some(tx),
            task: Some(task),
        }
    }

    /// A server that does not resume unfinished onboarding, so records stay
    /// where the test put them.
    pub async fn without_resume(store: Store) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let state = AppState::new(store, DEFAULTS);
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(state.clone(), None);
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .map_err(|e| ApiError::internal(e.to_string()))
        });
        Self {
            base,
            state,
            http: reqwest::Client::new(),
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub async fn in_memory() -> Self {
        Self::start(Store::in_memory(StoreConfig::default())).await
    }

    /// Graceful shutdown; returns what `serve` returned.
    pub async fn stop(mut self) -> Result<(), ApiError> {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap()
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(self.url(path)).send().await.unwrap();
        decode(r).await
    }

    pub async fn post(&self, path: &str, body: Vec<u8>) -> (u16, Value) {
        let r = self
            .http
            .post(self.url(path))
            .body(body)
            .send()
            .await
            .unwrap();
        decode(r).await
    }

    pub async fn delete(&self, path: &str) -> (u16, Value) {
        let r = self.http.delete(self.url(path)).send().await.unwrap();
        decode(r).await
    }

    pub async fn submit(&self, pkg: &PackageArchive) -> (u16, Value) {
        self.post("/xapps", pkg.pack()).await
    }

    /// Polls the record until it leaves the onboarding states.
    pub async fn settle(&self, id: &str) -> String {
        let start = Instant::now();
        loop {
            let (status, body) = self.get(&format!("/xapps/{id}")).await;
            assert_eq!(status, 200, "{body}");
            let state = body["state"].as_str().unwrap().to_owned();
            if !matches!(state.as_str(), "SUBMITTED" | "VALIDATING" | "TESTING") {
                return state;
            }
            assert!(start.elapsed() < PIPELINE_DEADLINE, "{id} stuck in {state}");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }
}

async fn decode(r: reqwest::Response) -> (u16, Value) {
    let status = r.status().as_u16();
    let bytes = r.bytes().await.unwrap();
    let body = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, body)
}
