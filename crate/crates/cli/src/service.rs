//! The operator service. Each hosted run lives on its own simulation
//! thread; handlers talk to it through a command queue and read the
//! snapshots it publishes after every step.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use riskdesk_core::fabric::{AuditEntry, CanonicalTimestamp};
use riskdesk_core::governance::{EscalationRequest, EscalationStatus};
use riskdesk_core::scenario::{Command, RunEvent, RunSnapshot, RunStatus, ScenarioRunner, StepStatus};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8080";
const IDLE_POLL: Duration = Duration::from_millis(50);

/// Simulated seconds per wall-clock second. Zero runs unpaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speed(pub f64);

enum DriverMessage {
    Command(Command, oneshot::Sender<Result<(), String>>),
    SetSpeed(Speed),
}

/// Everything a handler may read; written only by the run's thread.
#[derive(Debug, Clone)]
struct Published {
    snapshot: RunSnapshot,
    escalations: Vec<EscalationRequest>,
    decision_log: String,
    audit: Vec<AuditEntry>,
    speed: Speed,
}

pub struct RunHandle {
    id: String,
    published: RwLock<Published>,
    inbox: mpsc::Sender<DriverMessage>,
    events: broadcast::Sender<RunEvent>,
}

impl RunHandle {
    fn read(&self) -> std::sync::RwLockReadGuard<'_, Published> {
        self.published.read().expect("publisher never panics while holding the lock")
    }

    pub fn snapshot(&self) -> RunSnapshot {
        self.read().snapshot.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<RunEvent> {
        self.events.subscribe()
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<RwLock<BTreeMap<String, Arc<RunHandle>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves `runner` onto its own thread and starts driving it.
    pub fn host(&self, id: &str, runner: ScenarioRunner, speed: Speed) -> Arc<RunHandle> {
        let (inbox, rx) = mpsc::channel();
        let (events, _) = broadcast::channel(4096);
        let handle = Arc::new(RunHandle {
            id: id.to_string(),
            published: RwLock::new(publish(&runner, speed, Vec::new())),
            inbox,
            events,
        });
        self.runs.write().expect("lock").insert(id.to_string(), handle.clone());
        let driver = handle.clone();
        thread::Builder::new()
            .name(format!("run-{id}"))
            .spawn(move || drive(runner, speed, rx, &driver))
            .expect("spawn simulation thread");
        handle
    }

    pub fn run(&self, id: &str) -> Option<Arc<RunHandle>> {
        self.runs.read().expect("lock").get(id).cloned()
    }

    fn all(&self) -> Vec<Arc<RunHandle>> {
        self.runs.read().expect("lock").values().cloned().collect()
    }
}

fn publish(runner: &ScenarioRunner, speed: Speed, mut audit: Vec<AuditEntry>) -> Published {
    audit.extend_from_slice(&runner.audit_entries()[audit.len()..]);
    Published {
        snapshot: runner.snapshot(),
        escalations: runner.escalations(),
        decision_log: runner.decision_log_csv(),
        audit,
        speed,
    }
}

fn drive(mut runner: ScenarioRunner, mut speed: Speed, rx: mpsc::Receiver<DriverMessage>, handle: &RunHandle) {
    let refresh = |runner: &mut ScenarioRunner, speed: Speed| {
        for event in runner.drain_events() {
            let _ = handle.events.send(event);
        }
        let mut guard = handle.published.write().expect("lock");
        let audit = std::mem::take(&mut guard.audit);
        *guard = publish(runner, speed, audit);
    };
    // Wall-clock moment of the last simulated instant, for pacing.
    let mut paced_from: Option<(CanonicalTimestamp, Instant)> = None;
    loop {
        let deadline = match runner.status() {
            RunStatus::Running => match (runner.next_instant(), paced_from) {
                (Some(next), Some((sim, wall))) if speed.0 > 0.0 => {
                    Some(wall + Duration::from_secs_f64(next.since(sim) as f64 / speed.0))
                }
                _ => None,
            },
            RunStatus::Blocked | RunStatus::Finished => Some(Instant::now() + IDLE_POLL),
        };
        let message = match deadline {
            Some(d) => match rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return,
            },
            None => match rx.try_recv() {
                Ok(m) => Some(m),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => return,
            },
        };
        match message {
            Some(DriverMessage::Command(command, reply)) => {
                let result = runner.submit_command(command).map_err(|e| e.to_string());
                refresh(&mut runner, speed);
                let _ = reply.send(result);
                continue;
            }
            Some(DriverMessage::SetSpeed(s)) => {
                speed = s;
                paced_from = None;
                refresh(&mut runner, speed);
                continue;
            }
            None if runner.status() == RunStatus::Finished => continue,
            None => {}
        }
        match runner.step() {
            Ok(StepStatus::Advanced(t)) => paced_from = Some((t, Instant::now())),
            Ok(StepStatus::Blocked | StepStatus::Finished) => {}
            Err(e) => {
                eprintln!("run {} stopped: {e}", handle.id);
                refresh(&mut runner, speed);
                return;
            }
        }
        refresh(&mut runner, speed);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}/state", get(run_state))
        .route("/runs/{id}/decision-log", get(decision_log))
        .route("/runs/{id}/speed", post(set_speed))
        .route("/runs/{id}/events", get(run_events))
        .route("/escalations", get(list_escalations))
        .route("/escalations/{id}/approve", post(approve))
        .route("/escalations/{id}/deny", post(deny))
        .route("/audit", get(audit))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(what: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("{what} not found"))
}

fn find_run(state: &AppState, id: &str) -> Result<Arc<RunHandle>, ApiError> {
    state.run(id).ok_or_else(|| not_found(&format!("run {id}")))
}

#[derive(Serialize)]
struct RunSummary {
    id: String,
    name: String,
    mode: riskdesk_core::scenario::RunMode,
    status: RunStatus,
    now: CanonicalTimestamp,
    speed: Speed,
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<RunSummary>> {
    Json(
        state
            .all()
            .iter()
            .map(|h| {
                let p = h.read();
                RunSummary {
                    id: h.id.clone(),
                    name: p.snapshot.name.clone(),
                    mode: p.snapshot.mode,
                    status: p.snapshot.status,
                    now: p.snapshot.now,
                    speed: p.speed,
                }
            })
            .collect(),
    )
}

async fn run_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RunSnapshot>, ApiError> {
    Ok(Json(find_run(&state, &id)?.snapshot()))
}

async fn decision_log(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let csv = find_run(&state, &id)?.read().decision_log.clone();
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

#[derive(Deserialize)]
struct SpeedBody {
    speed: f64,
}

async fn set_speed(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SpeedBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    if !(body.speed >= 0.0 && body.speed.is_finite()) {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "speed must be a non-negative number".into()));
    }
    let run = find_run(&state, &id)?;
    run.inbox
        .send(DriverMessage::SetSpeed(Speed(body.speed)))
        .map_err(|_| ApiError(StatusCode::GONE, "run has stopped".into()))?;
    run.published.write().expect("lock").speed = Speed(body.speed);
    Ok(Json(json!({ "run": id, "speed": body.speed })))
}

#[derive(Deserialize)]
struct EscalationQuery {
    status: Option<String>,
    run: Option<String>,
}

#[derive(Serialize)]
struct EscalationView {
    run: String,
    #[serde(flatten)]
    request: EscalationRequest,
}

async fn list_escalations(
    State(state): State<AppState>,
    Query(q): Query<EscalationQuery>,
) -> Result<Json<Vec<EscalationView>>, ApiError> {
    let wanted = match q.status.as_deref().map(str::to_ascii_uppercase).as_deref() {
        None => None,
        Some("PENDING") => Some(EscalationStatus::Pending),
        Some("APPROVED") => Some(EscalationStatus::Approved),
        Some("DENIED") => Some(EscalationStatus::Denied),
        Some(other) => return Err(ApiError(StatusCode::BAD_REQUEST, format!("unknown status {other}"))),
    };
    let mut out = Vec::new();
    for run in state.all().iter().filter(|r| q.run.as_deref().is_none_or(|id| id == r.id)) {
        for request in &run.read().escalations {
            if wanted.is_none_or(|w| w == request.status) {
                out.push(EscalationView { run: run.id.clone(), request: request.clone() });
            }
        }
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
struct DecisionBody {
    approver: String,
    rationale: String,
    run: Option<String>,
    at: Option<CanonicalTimestamp>,
}

/// Picks the run holding escalation `id`; ambiguous ids need `run`.
fn run_for_escalation(state: &AppState, id: &str, run: Option<&str>) -> Result<Arc<RunHandle>, ApiError> {
    if let Some(run) = run {
        return find_run(state, run);
    }
    let holders: Vec<_> = state
        .all()
        .into_iter()
        .filter(|r| r.read().escalations.iter().any(|e| e.id == id))
        .collect();
    match holders.len() {
        0 => Err(not_found(&format!("escalation {id}"))),
        1 => Ok(holders.into_iter().next().expect("one")),
        _ => Err(ApiError(StatusCode::CONFLICT, format!("escalation {id} exists in several runs; pass run"))),
    }
}

async fn decide(state: AppState, id: String, body: DecisionBody, approve: bool) -> Result<Json<serde_json::Value>, ApiError> {
    let run = run_for_escalation(&state, &id, body.run.as_deref())?;
    let command = if approve {
        Command::Approve { escalation_id: id.clone(), approver: body.approver, rationale: body.rationale, at: body.at }
    } else {
        Command::Deny { escalation_id: id.clone(), approver: body.approver, rationale: body.rationale, at: body.at }
    };
    let (reply, answer) = oneshot::channel();
    run.inbox
        .send(DriverMessage::Command(command, reply))
        .map_err(|_| ApiError(StatusCode::GONE, "run has stopped".into()))?;
    match answer.await {
        Ok(Ok(())) => {
            let status = run.read().escalations.iter().find(|e| e.id == id).map(|e| e.status);
            Ok(Json(json!({ "run": run.id, "escalation_id": id, "status": status })))
        }
        Ok(Err(reason)) => Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, reason)),
        Err(_) => Err(ApiError(StatusCode::GONE, "run has stopped".into())),
    }
}

async fn approve(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    decide(state, id, body, true).await
}

async fn deny(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    decide(state, id, body, false).await
}

#[derive(Deserialize)]
struct AuditQuery {
    since: Option<u64>,
    run: Option<String>,
}

async fn audit(State(state): State<AppState>, Query(q): Query<AuditQuery>) -> Result<Json<Vec<AuditEntry>>, ApiError> {
    let run = match q.run {
        Some(id) => find_run(&state, &id)?,
        None => {
            let all = state.all();
            match all.len() {
                1 => all.into_iter().next().expect("one"),
                0 => return Err(not_found("run")),
                _ => return Err(ApiError(StatusCode::BAD_REQUEST, "several runs are hosted; pass run".into())),
            }
        }
    };
    let since = q.since.unwrap_or(0) as usize;
    let entries = run.read().audit.iter().skip(since).cloned().collect();
    Ok(Json(entries))
}

async fn run_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = find_run(&state, &id)?.subscribe();
    let stream = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(event) => {
                    let kind = serde_json::to_value(&event.kind)
                        .ok()
                        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_ascii_lowercase))
                        .unwrap_or_else(|| "event".into());
                    let sse = Event::default().event(kind).json_data(&event).expect("event serialises");
                    return Some((Ok(sse), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
    .boxed();
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
