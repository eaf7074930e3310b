use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use agentc_core::blueprint::{structural_fingerprint, Blueprint, SelectorPatch};
use agentc_core::engine::{BrowserBackend, Engine, HaltReport, Record, RunEvent, RunOutcome, RunPolicy, StepEvent};
use agentc_core::review::Decision;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Notify;

use super::gate::{GateCore, GateError, RunPatch};
use crate::dom::SanitizerConfig;

/// Header naming who made a request.
pub const ACTOR_HEADER: &str = "x-actor";

/// Opens a fresh browser session for one run. Sessions live on the run's
/// own thread, so the backend itself need not be `Send`.
pub type BackendFactory = Arc<dyn Fn() -> Result<Box<dyn BrowserBackend>, String> + Send + Sync>;

#[derive(Clone)]
pub struct GateConfig {
    pub run_policy: RunPolicy,
    pub sanitizer: SanitizerConfig,
    pub backend: BackendFactory,
}

/// What the event stream of a run carries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Step { step: StepEvent },
    Halted { halt: HaltReport },
    Resumed { fingerprint: String },
    Completed { datasets: BTreeMap<String, Vec<Record>> },
    Failed { message: String },
}

impl StreamEvent {
    fn name(&self) -> &'static str {
        match self {
            StreamEvent::Step { .. } => "step",
            StreamEvent::Halted { .. } => "halted",
            StreamEvent::Resumed { .. } => "resumed",
            StreamEvent::Completed { .. } => "completed",
            StreamEvent::Failed { .. } => "failed",
        }
    }

    fn is_final(&self) -> bool {
        matches!(self, StreamEvent::Completed { .. } | StreamEvent::Failed { .. })
    }
}

/// Append-only event history of one run; subscribers replay it from any
/// index, then follow new events.
#[derive(Default)]
struct RunStream {
    history: Mutex<Vec<StreamEvent>>,
    notify: Notify,
}

impl RunStream {
    fn push(&self, event: StreamEvent) {
        self.history.lock().expect("stream lock").push(event);
        self.notify.notify_waiters();
    }

    fn get(&self, i: usize) -> Option<StreamEvent> {
        self.history.lock().expect("stream lock").get(i).cloned()
    }
}

struct RunHandle {
    stream: Arc<RunStream>,
    resume: mpsc::Sender<Blueprint>,
}

pub struct GateState {
    core: Mutex<GateCore>,
    runs: Mutex<HashMap<String, RunHandle>>,
    config: GateConfig,
}

impl GateState {
    pub fn new(core: GateCore, config: GateConfig) -> Arc<Self> {
        Arc::new(GateState {
            core: Mutex::new(core),
            runs: Mutex::new(HashMap::new()),
            config,
        })
    }

    /// Read access to the review and run records.
    pub fn with_core<T>(&self, f: impl FnOnce(&GateCore) -> T) -> T {
        f(&self.core.lock().expect("gate lock"))
    }
}

pub fn router(state: Arc<GateState>) -> Router {
    Router::new()
        .route("/blueprints", post(submit))
        .route("/blueprints/{id}", get(get_blueprint))
        .route("/blueprints/{id}/decision", post(decide))
        .route("/blueprints/{id}/runs", post(start_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(run_events))
        .route("/runs/{id}/patch", post(patch_run))
        .route("/audit", get(audit))
        .with_state(state)
}

fn actor(headers: &HeaderMap) -> String {
    headers
        .get(ACTOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.trim().is_empty())
        .unwrap_or("anonymous")
        .to_string()
}

struct ApiError(GateError);

impl From<GateError> for ApiError {
    fn from(e: GateError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            GateError::Invalid(_) | GateError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            GateError::NotFound { .. } => StatusCode::NOT_FOUND,
            GateError::Conflict(_) => StatusCode::CONFLICT,
            GateError::Forbidden(_) => StatusCode::FORBIDDEN,
            GateError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = match &self.0 {
            GateError::Invalid(errors) => json!({ "error": self.0.to_string(), "errors": errors }),
            other => json!({ "error": other.to_string() }),
        };
        (status, Json(body)).into_response()
    }
}

fn bad_body(e: serde_json::Error) -> ApiError {
    ApiError(GateError::Unprocessable(format!("request body: {e}")))
}

async fn submit(State(s): State<Arc<GateState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let mut core = s.core.lock().expect("gate lock");
    let id = core.submit(&actor(&headers), &body)?;
    let record = core.review(&id).expect("just submitted");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "blueprint_id": id, "state": record.state })),
    )
        .into_response())
}

async fn get_blueprint(State(s): State<Arc<GateState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let core = s.core.lock().expect("gate lock");
    let record = core.review(&id).ok_or_else(|| GateError::NotFound {
        kind: "blueprint",
        id: id.clone(),
    })?;
    Ok(Json(record).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    action: Decision,
    #[serde(default)]
    patch: Option<SelectorPatch>,
    #[serde(default)]
    origin: Option<String>,
}

async fn decide(
    State(s): State<Arc<GateState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: DecisionBody = serde_json::from_slice(&body).map_err(bad_body)?;
    let mut core = s.core.lock().expect("gate lock");
    let record = core.decide(&actor(&headers), &id, body.action, body.patch, body.origin)?;
    Ok(Json(record).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct StartBody {
    #[serde(default)]
    payload: BTreeMap<String, String>,
}

async fn start_run(
    State(s): State<Arc<GateState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let start: StartBody = if body.iter().all(u8::is_ascii_whitespace) {
        StartBody::default()
    } else {
        serde_json::from_slice(&body).map_err(bad_body)?
    };
    let who = actor(&headers);
    let (run_id, bp) = s.core.lock().expect("gate lock").start_run(&who, &id)?;
    let stream = Arc::new(RunStream::default());
    let (tx, rx) = mpsc::channel();
    s.runs.lock().expect("runs lock").insert(
        run_id.clone(),
        RunHandle {
            stream: Arc::clone(&stream),
            resume: tx,
        },
    );
    let state = Arc::clone(&s);
    let rid = run_id.clone();
    std::thread::spawn(move || drive_run(state, rid, bp, start.payload, rx, stream));
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": run_id, "state": "running" })),
    )
        .into_response())
}

/// Owns one run's session: executes, records each segment, and waits for
/// patches while halted.
fn drive_run(
    state: Arc<GateState>,
    run_id: String,
    bp: Blueprint,
    payload: BTreeMap<String, String>,
    patches: mpsc::Receiver<Blueprint>,
    stream: Arc<RunStream>,
) {
    let fail = |message: String| {
        let _ = state
            .core
            .lock()
            .expect("gate lock")
            .fail_run("engine", &run_id, message.clone());
        stream.push(StreamEvent::Failed { message });
    };
    let mut backend = match (state.config.backend)() {
        Ok(b) => b,
        Err(message) => return fail(message),
    };
    let observed = Arc::clone(&stream);
    let mut engine = Engine::new(state.config.run_policy.clone())
        .with_sanitizer(&state.config.sanitizer)
        .with_payload(payload)
        .with_observer(move |event| {
            if let RunEvent::Step(step) = event {
                observed.push(StreamEvent::Step { step: step.clone() });
            }
        });
    let mut outcome: RunOutcome = engine.run(&bp, &mut backend);
    loop {
        let recorded = state
            .core
            .lock()
            .expect("gate lock")
            .finish_segment("engine", &run_id, outcome.clone())
            .map(|_| ());
        if let Err(e) = recorded {
            return fail(e.to_string());
        }
        let Some(halt) = outcome.halt.clone() else {
            stream.push(StreamEvent::Completed {
                datasets: outcome.datasets,
            });
            return;
        };
        stream.push(StreamEvent::Halted { halt });
        // A dropped sender means the gate shut down.
        let Ok(patched) = patches.recv() else { return };
        stream.push(StreamEvent::Resumed {
            fingerprint: structural_fingerprint(&patched).to_hex(),
        });
        outcome = match engine.resume(&patched, &outcome, &mut backend) {
            Ok(o) => o,
            Err(e) => return fail(e.to_string()),
        };
    }
}

async fn get_run(State(s): State<Arc<GateState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let core = s.core.lock().expect("gate lock");
    let run = core.run(&id).ok_or_else(|| GateError::NotFound {
        kind: "run",
        id: id.clone(),
    })?;
    Ok(Json(run).into_response())
}

#[derive(Deserialize)]
struct SinceQuery {
    since: Option<u64>,
}

async fn run_events(
    State(s): State<Arc<GateState>>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let stream = s
        .runs
        .lock()
        .expect("runs lock")
        .get(&id)
        .map(|h| Arc::clone(&h.stream))
        .ok_or_else(|| GateError::NotFound {
            kind: "run",
            id: id.clone(),
        })?;
    // Resume after the last event the client saw.
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|n| n + 1);
    let start = last_seen.or(q.since).unwrap_or(0) as usize;
    let events = futures::stream::unfold((stream, start, false), |(stream, i, done)| async move {
        if done {
            return None;
        }
        loop {
            let watch = Arc::clone(&stream);
            let notified = watch.notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if let Some(ev) = stream.get(i) {
                let sse = Event::default()
                    .id(i.to_string())
                    .event(ev.name())
                    .json_data(&ev)
                    .expect("stream events serialize");
                let fin = ev.is_final();
                return Some((Ok(sse), (stream, i + 1, fin)));
            }
            notified.await;
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn patch_run(
    State(s): State<Arc<GateState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let patch: RunPatch = serde_json::from_slice(&body).map_err(bad_body)?;
    let mut core = s.core.lock().expect("gate lock");
    let record = core.patch_run(&actor(&headers), &id, patch)?.clone();
    drop(core);
    let mut runs = s.runs.lock().expect("runs lock");
    let delivered = runs
        .get(&id)
        .is_some_and(|h| h.resume.send(record.blueprint.clone()).is_ok());
    if !delivered {
        // The halted session is gone (for example after a restart): run
        // the patched blueprint again on a fresh session.
        let stream = runs.get(&id).map(|h| Arc::clone(&h.stream)).unwrap_or_default();
        stream.push(StreamEvent::Resumed {
            fingerprint: structural_fingerprint(&record.blueprint).to_hex(),
        });
        let (tx, rx) = mpsc::channel();
        runs.insert(
            id.clone(),
            RunHandle {
                stream: Arc::clone(&stream),
                resume: tx,
            },
        );
        let state = Arc::clone(&s);
        let bp = record.blueprint.clone();
        std::thread::spawn(move || drive_run(state, id, bp, BTreeMap::new(), rx, stream));
    }
    Ok(Json(record).into_response())
}

async fn audit(State(s): State<Arc<GateState>>, Query(q): Query<SinceQuery>) -> Response {
    let core = s.core.lock().expect("gate lock");
    Json(core.audit_since(q.since.unwrap_or(0))).into_response()
}
