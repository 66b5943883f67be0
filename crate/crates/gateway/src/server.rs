use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::Serialize;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::services::ServeDir;

use xapp_store_core::archive::MAX_ARCHIVE_BYTES;
use xapp_store_core::registry::{AuditEntry, LifecycleState, RecordSummary, SearchQuery};
use xapp_store_core::scenario::{ScenarioConfig, ScenarioError, ScenarioEvent};
use xapp_store_core::store::{Onboarding, Store, StoreError};

use crate::error::ApiError;

pub const DEFAULT_LOG_PAGE: usize = 500;
pub const MAX_LOG_PAGE: usize = 5000;
pub const MAX_STEP_TICKS: u32 = 10_000;
const STREAM_BUFFER: usize = 1024;

/// One line of the event stream.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Scenario(ScenarioEvent),
    Lifecycle(AuditEntry),
}

impl StreamEvent {
    fn name(&self) -> &'static str {
        match self {
            StreamEvent::Scenario(_) => "scenario",
            StreamEvent::Lifecycle(_) => "lifecycle",
        }
    }
}

/// Defaults applied to scenario configs that leave them out.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioDefaults {
    pub seed: u64,
    pub tick_ms: u64,
}

struct Inner {
    store: Store,
    /// Audit entries already published on the stream.
    audit_sent: usize,
}

pub struct AppState {
    inner: Mutex<Inner>,
    events: broadcast::Sender<StreamEvent>,
    ticker: Mutex<Option<JoinHandle<()>>>,
    defaults: ScenarioDefaults,
    closing: watch::Sender<bool>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(store: Store, defaults: ScenarioDefaults) -> Shared {
        let audit_sent = store.registry().audit().len();
        let (events, _) = broadcast::channel(STREAM_BUFFER);
        Arc::new(Self {
            inner: Mutex::new(Inner { store, audit_sent }),
            events,
            ticker: Mutex::new(None),
            defaults,
            closing: watch::channel(false).0,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panicked handler leaves the store as consistent as its last save
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` against the store, then publishes any new audit entries.
    pub fn with_store<T>(&self, f: impl FnOnce(&mut Store) -> T) -> T {
        let mut inner = self.lock();
        let out = f(&mut inner.store);
        let total = inner.store.registry().audit().len();
        for entry in &inner.store.registry().audit()[inner.audit_sent..] {
            let _ = self.events.send(StreamEvent::Lifecycle(entry.clone()));
        }
        inner.audit_sent = total;
        out
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    fn publish(&self, events: Vec<ScenarioEvent>) {
        for e in events {
            let _ = self.events.send(StreamEvent::Scenario(e));
        }
    }

    /// Steps the live runtime and publishes what happened.
    pub fn step(&self, ticks: u32) -> Vec<ScenarioEvent> {
        let events = self.with_store(|s| s.step(ticks));
        self.publish(events.clone());
        events
    }

    pub fn running(&self) -> bool {
        let t = self.ticker.lock().unwrap_or_else(|p| p.into_inner());
        t.as_ref().is_some_and(|h| !h.is_finished())
    }

    pub fn stop_ticker(&self) -> bool {
        let mut t = self.ticker.lock().unwrap_or_else(|p| p.into_inner());
        match t.take() {
            Some(h) if !h.is_finished() => {
                h.abort();
                true
            }
            _ => false,
        }
    }

    /// Ends open event streams so graceful shutdown can finish.
    pub fn close_streams(&self) {
        self.closing.send_replace(true);
    }

    /// Persists the store; called on shutdown.
    pub fn save(&self) -> Result<(), StoreError> {
        self.stop_ticker();
        self.with_store(|s| s.save())
    }
}

/// Validates and acceptance-tests `id` without holding the lock during the
/// test run.
pub async fn onboard(state: Shared, id: String) {
    let begun = state.with_store(|s| s.begin_onboarding(&id));
    let job = match begun {
        Ok(Onboarding::Test(job)) => job,
        Ok(Onboarding::Rejected(_)) => {
            tracing::info!(%id, "validation failed");
            return;
        }
        Err(e) => {
            tracing::error!(%id, error = %e, "onboarding could not start");
            return;
        }
    };
    let report = match tokio::task::spawn_blocking(move || job.run()).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => {
            tracing::error!(%id, error = %e, "acceptance plan rejected");
            return;
        }
        Err(e) => {
            tracing::error!(%id, error = %e, "acceptance run panicked");
            return;
        }
    };
    match state.with_store(|s| s.finish_testing(&id, report)) {
        Ok(to) => tracing::info!(%id, state = %to, "onboarding finished"),
        Err(e) => tracing::error!(%id, error = %e, "report could not be filed"),
    }
}

/// Restarts onboarding for records a previous run left unfinished.
pub fn resume_unfinished(state: &Shared) -> Vec<JoinHandle<()>> {
    let ids = state.with_store(|s| s.unfinished());
    ids.into_iter()
        .map(|id| {
            tracing::info!(%id, "resuming onboarding");
            tokio::spawn(onboard(state.clone(), id))
        })
        .collect()
}

type ApiResult<T> = Result<T, ApiError>;

fn query(
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
) -> ApiResult<BTreeMap<String, String>> {
    q.map(|Query(m)| m)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn parse_param<T: std::str::FromStr>(
    params: &BTreeMap<String, String>,
    key: &str,
) -> ApiResult<Option<T>> {
    match params.get(key).filter(|v| !v.is_empty()) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("`{key}` has an invalid value `{v}`"))),
    }
}

async fn submit(
    State(state): State<Shared>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<impl IntoResponse> {
    let body = body.map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "MALFORMED_ARCHIVE",
            format!("archive body: {}", e.body_text()),
        )
    })?;
    let (outcome, summary) = state.with_store(|s| -> Result<_, StoreError> {
        let outcome = s.submit_bytes(&body)?;
        let summary = s.registry().get(&outcome.id)?.summary();
        Ok((outcome, summary))
    })?;
    if outcome.created {
        tokio::spawn(onboard(state.clone(), outcome.id));
        Ok((StatusCode::CREATED, Json(summary)))
    } else {
        Ok((StatusCode::OK, Json(summary)))
    }
}

async fn list(
    State(state): State<Shared>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
) -> ApiResult<Json<Vec<RecordSummary>>> {
    let params = query(q)?;
    let lifecycle = match params.get("state").filter(|v| !v.is_empty()) {
        None => None,
        Some(v) => Some(
            LifecycleState::parse(v)
                .ok_or_else(|| ApiError::bad_request(format!("unknown state `{v}`")))?,
        ),
    };
    let search = SearchQuery {
        name_substring: params.get("q").filter(|v| !v.is_empty()).cloned(),
        state: lifecycle,
        mtype: parse_param(&params, "mtype")?,
    };
    Ok(Json(state.with_store(|s| s.registry().search(&search))))
}

async fn detail(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let d = state.with_store(|s| s.registry().get(&id).map(|r| r.detail()))?;
    Ok(Json(d))
}

async fn report(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let r = state.with_store(|s| s.latest_report(&id).cloned())?;
    Ok(Json(r))
}

#[derive(Serialize)]
struct StateChange {
    id: String,
    state: LifecycleState,
}

async fn deploy(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let to = state.with_store(|s| s.deploy(&id))?;
    Ok(Json(StateChange { id, state: to }))
}

async fn undeploy(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let to = state.with_store(|s| s.undeploy(&id))?;
    Ok(Json(StateChange { id, state: to }))
}

async fn ric_status(State(state): State<Shared>) -> impl IntoResponse {
    Json(state.with_store(|s| s.ric_status()))
}

async fn ric_logs(
    State(state): State<Shared>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let params = query(q)?;
    let since = parse_param::<u64>(&params, "since_seq")?;
    let limit = parse_param::<usize>(&params, "limit")?
        .unwrap_or(DEFAULT_LOG_PAGE)
        .min(MAX_LOG_PAGE);
    Ok(Json(state.with_store(|s| s.ric_logs(since, limit))))
}

/// Parses a scenario body, filling `seed` and `tick_ms` from the server
/// defaults when absent.
pub fn scenario_from_body(
    body: &[u8],
    defaults: ScenarioDefaults,
) -> Result<ScenarioConfig, ScenarioError> {
    let mut doc: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| ScenarioError::Parse("scenario config must be a JSON object".into()))?;
    obj.entry("seed").or_insert(defaults.seed.into());
    obj.entry("tick_ms").or_insert(defaults.tick_ms.into());
    let raw = serde_json::to_vec(&doc).expect("re-serializing a parsed value");
    ScenarioConfig::from_json(&raw)
}

async fn load_scenario(State(state): State<Shared>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let cfg = scenario_from_body(&body, state.defaults)?;
    let view = state.with_store(|s| s.load_scenario(cfg))?;
    Ok(Json(view))
}

#[derive(Serialize)]
struct RunState {
    running: bool,
    sim_time_ms: u64,
}

fn run_state(state: &Shared) -> RunState {
    RunState {
        running: state.running(),
        sim_time_ms: state.with_store(|s| s.ric().sim_time_ms()),
    }
}

async fn start(State(state): State<Shared>) -> ApiResult<impl IntoResponse> {
    if state.with_store(|s| s.world().is_none()) {
        return Err(ApiError::no_scenario());
    }
    let mut ticker = state.ticker.lock().unwrap_or_else(|p| p.into_inner());
    if !ticker.as_ref().is_some_and(|h| !h.is_finished()) {
        let st = state.clone();
        *ticker = Some(tokio::spawn(async move {
            loop {
                let ms = st.with_store(|s| s.ric().tick_ms()).max(1);
                tokio::time::sleep(Duration::from_millis(ms)).await;
                st.step(1);
            }
        }));
    }
    drop(ticker);
    Ok(Json(run_state(&state)))
}

async fn stop(State(state): State<Shared>) -> impl IntoResponse {
    state.stop_ticker();
    Json(run_state(&state))
}

async fn step(
    State(state): State<Shared>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let params = query(q)?;
    let ticks = parse_param::<u32>(&params, "ticks")?.unwrap_or(1);
    if ticks > MAX_STEP_TICKS {
        return Err(ApiError::bad_request(format!(
            "at most {MAX_STEP_TICKS} ticks per step"
        )));
    }
    if state.with_store(|s| s.world().is_none()) {
        return Err(ApiError::no_scenario());
    }
    Ok(Json(state.step(ticks)))
}

async fn world(State(state): State<Shared>) -> ApiResult<impl IntoResponse> {
    let view = state.with_store(|s| s.world());
    view.map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "NO_SCENARIO",
            "no scenario is loaded",
        )
    })
}

async fn stream(State(state): State<Shared>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let mut closing = state.closing.subscribe();
    let events = BroadcastStream::new(state.subscribe())
        .filter_map(|msg| async move {
            // a lagging client skips what it missed
            let e = msg.ok()?;
            let data = serde_json::to_string(&e).ok()?;
            Some(Ok(Event::default().event(e.name()).data(data)))
        })
        .take_until(async move {
            let _ = closing.wait_for(|c| *c).await;
        });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: Shared, dashboard: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/xapps", post(submit).get(list))
        .route("/xapps/{id}", get(detail))
        .route("/xapps/{id}/report", get(report))
        .route("/xapps/{id}/deploy", post(deploy).delete(undeploy))
        .route("/ric/status", get(ric_status))
        .route("/ric/logs", get(ric_logs))
        .route("/scenario", post(load_scenario))
        .route("/scenario/start", post(start))
        .route("/scenario/stop", post(stop))
        .route("/scenario/step", post(step))
        .route("/scenario/state", get(world))
        .route("/events/stream", get(stream))
        .layer(DefaultBodyLimit::max(MAX_ARCHIVE_BYTES + 1))
        .with_state(state);
    match dashboard {
        Some(dir) => {
            api.fallback_service(ServeDir::new(dir).fallback(axum::routing::any(not_found)))
        }
        None => api.fallback(not_found),
    }
}

/// Serves until `shutdown` resolves, then persists the store.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Shared,
    dashboard: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ApiError> {
    resume_unfinished(&state);
    let app = router(state.clone(), dashboard);
    let st = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            st.stop_ticker();
            st.close_streams();
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    state.save().map_err(ApiError::from)
}
