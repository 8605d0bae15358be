//! HTTP session service.
//!
//! Each session runs its pipeline on a dedicated worker thread. Handlers
//! talk to the worker through a feedback channel and read shared status;
//! rollout records are fanned out to stream subscribers over a broadcast
//! channel.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, StreamExt};
use lmp_core::scene::{Pose, Scene};
use lmp_core::sim::{ExecutionReport, Outcome, SimState};
use lmp_llm::{build_backend, ChatBackend, ChatMessage, FixtureEntry, ScriptedBackend};
use lmp_pipeline::{
    AlwaysAccept, AttemptRecord, Exchange, Judge, Observer, ScriptedJudge, Session, SessionPhase, Subtask,
    TaskReport,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceJudgeMode {
    #[default]
    Interactive,
    Scripted,
    Accept,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub scene: Scene,
    pub task: String,
    #[serde(default)]
    pub judge: ServiceJudgeMode,
    /// Inline fixtures; when present the session replays them instead of
    /// using the configured backend.
    #[serde(default)]
    pub fixtures: Option<Vec<FixtureEntry>>,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackBody {
    #[serde(default)]
    pub text: String,
}

/// What handlers can see of a running session.
#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub id: String,
    pub state: SessionPhase,
    pub task: String,
    pub plan: Vec<String>,
    pub current_subtask: Option<String>,
    pub attempt: usize,
    pub last_outcome: Option<Outcome>,
    #[serde(skip)]
    scene: Scene,
    #[serde(skip)]
    ee_pose: Pose,
    #[serde(skip)]
    stream_log: Vec<String>,
    #[serde(skip)]
    prompts: Vec<Exchange>,
    #[serde(skip)]
    report: Option<TaskReport>,
    #[serde(skip)]
    finished: bool,
}

enum JudgeMsg {
    Feedback(String),
    Cancel,
}

struct Run {
    status: Arc<Mutex<Status>>,
    feedback: mpsc::Sender<JudgeMsg>,
    cancel: Arc<AtomicBool>,
    stream: broadcast::Sender<String>,
}

struct Slot {
    id: String,
    scene: Scene,
    task: String,
    judge: ServiceJudgeMode,
    fixtures: Option<Vec<FixtureEntry>>,
    run: Mutex<Run>,
}

struct Inner {
    config: Config,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: Config) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }))
    }
}

struct ServiceObserver {
    status: Arc<Mutex<Status>>,
    stream: broadcast::Sender<String>,
    every: usize,
}

impl ServiceObserver {
    fn emit(&self, status: &mut Status, record: Value) {
        let line = record.to_string();
        status.stream_log.push(line.clone());
        let _ = self.stream.send(line);
    }

    fn set_state(&self, state: &SimState) {
        let mut st = self.status.lock().expect("status lock");
        st.scene = state.scene.clone();
        st.ee_pose = state.ee_pose;
    }
}

impl Observer for ServiceObserver {
    fn phase(&mut self, phase: SessionPhase) {
        let mut st = self.status.lock().expect("status lock");
        st.state = phase;
        self.emit(&mut st, json!({"type": "state", "state": phase}));
    }

    fn subtask(&mut self, subtask: &Subtask, attempt: usize) {
        let mut st = self.status.lock().expect("status lock");
        st.current_subtask = Some(subtask.raw.clone());
        st.attempt = attempt;
    }

    fn prompt(&mut self, messages: &[ChatMessage], response: &str) {
        let mut st = self.status.lock().expect("status lock");
        st.prompts.push(Exchange {
            messages: messages.to_vec(),
            response: response.to_string(),
        });
    }

    fn executed(&mut self, report: &ExecutionReport) {
        let mut st = self.status.lock().expect("status lock");
        let samples = &report.executed.samples;
        for (i, s) in samples.iter().enumerate() {
            if i % self.every == 0 || i + 1 == samples.len() {
                self.emit(
                    &mut st,
                    json!({"type": "sample", "t": s.time, "pose5": s.pose, "z": s.decay}),
                );
            }
            for e in report.events.iter().filter(|e| e.sample == i) {
                self.emit(
                    &mut st,
                    json!({"type": "event", "t": s.time, "pose5": s.pose, "z": s.decay, "event": e}),
                );
            }
        }
        st.scene = report.final_state.scene.clone();
        st.ee_pose = report.final_state.ee_pose;
    }

    fn accepted(&mut self, subtask: &Subtask) {
        self.status.lock().expect("status lock").plan.push(subtask.raw.clone());
    }

    fn restored(&mut self, state: &SimState) {
        self.set_state(state);
    }
}

struct ServiceJudge {
    mode: ServiceJudgeMode,
    rx: mpsc::Receiver<JudgeMsg>,
    status: Arc<Mutex<Status>>,
}

impl Judge for ServiceJudge {
    fn judge(&mut self, subtask: &Subtask, attempt: &AttemptRecord) -> Option<String> {
        self.status.lock().expect("status lock").last_outcome = Some(attempt.outcome.clone());
        match self.mode {
            ServiceJudgeMode::Accept => AlwaysAccept.judge(subtask, attempt),
            ServiceJudgeMode::Scripted => ScriptedJudge::default().judge(subtask, attempt),
            ServiceJudgeMode::Interactive => match self.rx.recv() {
                Ok(JudgeMsg::Feedback(text)) => Some(text).filter(|t| !t.trim().is_empty()),
                Ok(JudgeMsg::Cancel) | Err(_) => None,
            },
        }
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

fn start_run(slot_id: &str, scene: &Scene, task: &str, mode: ServiceJudgeMode, backend: Arc<dyn ChatBackend>, config: &Config) -> Run {
    let state = SimState::new(scene.clone());
    let status = Arc::new(Mutex::new(Status {
        id: slot_id.to_string(),
        state: SessionPhase::Idle,
        task: task.to_string(),
        plan: Vec::new(),
        current_subtask: None,
        attempt: 0,
        last_outcome: None,
        scene: state.scene.clone(),
        ee_pose: state.ee_pose,
        stream_log: Vec::new(),
        prompts: Vec::new(),
        report: None,
        finished: false,
    }));
    let (tx, rx) = mpsc::channel();
    let (stream, _) = broadcast::channel(4096);
    let cancel = Arc::new(AtomicBool::new(false));
    let sample_rate = 1.0 / config.pipeline.rollout_config(config.pipeline.dmp.duration).dt;
    let every = ((sample_rate / config.stream_rate_hz).ceil() as usize).max(1);
    let observer = ServiceObserver {
        status: status.clone(),
        stream: stream.clone(),
        every,
    };
    let mut judge = ServiceJudge {
        mode,
        rx,
        status: status.clone(),
    };
    let mut session = Session::new(config.pipeline.clone(), scene.clone(), task, backend)
        .with_observer(Box::new(observer))
        .with_cancel(cancel.clone());
    let shared = status.clone();
    let out = stream.clone();
    std::thread::spawn(move || {
        let report = session.run_task(&mut judge);
        let mut st = shared.lock().expect("status lock");
        let end = json!({"type": "end", "status": report.status}).to_string();
        st.stream_log.push(end.clone());
        let _ = out.send(end);
        st.report = Some(report);
        st.finished = true;
    });
    Run {
        status,
        feedback: tx,
        cancel,
        stream,
    }
}

impl Inner {
    fn backend(&self, fixtures: &Option<Vec<FixtureEntry>>) -> Result<Arc<dyn ChatBackend>, String> {
        match fixtures {
            Some(f) => Ok(Arc::new(ScriptedBackend::new(f.clone()))),
            None => build_backend(&self.config.backend).map(Arc::from).map_err(|e| e.to_string()),
        }
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.sessions.lock().expect("sessions lock").get(id).cloned()
    }
}

async fn create(State(app): State<AppState>, Json(body): Json<CreateSession>) -> Response {
    if body.task.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "task must not be empty");
    }
    if let Err(e) = body.scene.validate() {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    let backend = match app.0.backend(&body.fixtures) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let id = format!("s{}", app.0.next_id.fetch_add(1, Ordering::SeqCst));
    let run = start_run(&id, &body.scene, body.task.trim(), body.judge, backend, &app.0.config);
    let status = run.status.lock().expect("status lock").clone();
    let slot = Arc::new(Slot {
        id: id.clone(),
        scene: body.scene,
        task: body.task.trim().to_string(),
        judge: body.judge,
        fixtures: body.fixtures,
        run: Mutex::new(run),
    });
    app.0.sessions.lock().expect("sessions lock").insert(id, slot);
    (StatusCode::CREATED, Json(status)).into_response()
}

fn with_status<F: FnOnce(&Status) -> Response>(app: &AppState, id: &str, f: F) -> Response {
    let Some(slot) = app.0.slot(id) else {
        return error(StatusCode::NOT_FOUND, format!("no session {id}"));
    };
    let run = slot.run.lock().expect("run lock");
    let st = run.status.lock().expect("status lock");
    f(&st)
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    with_status(&app, &id, |st| Json(st.clone()).into_response())
}

async fn get_scene(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    with_status(&app, &id, |st| Json(json!({"scene": st.scene, "ee_pose": st.ee_pose})).into_response())
}

async fn get_prompts(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    with_status(&app, &id, |st| Json(&st.prompts).into_response())
}

async fn get_report(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    with_status(&app, &id, |st| match &st.report {
        Some(r) => Json(r).into_response(),
        None => error(StatusCode::CONFLICT, "session has not finished"),
    })
}

async fn feedback(State(app): State<AppState>, Path(id): Path<String>, Json(body): Json<FeedbackBody>) -> Response {
    let Some(slot) = app.0.slot(&id) else {
        return error(StatusCode::NOT_FOUND, format!("no session {id}"));
    };
    let run = slot.run.lock().expect("run lock");
    let mut st = run.status.lock().expect("status lock");
    if st.state != SessionPhase::AwaitingFeedback || st.finished || slot.judge != ServiceJudgeMode::Interactive {
        return error(
            StatusCode::CONFLICT,
            format!("session is {:?}, feedback is only accepted while awaiting_feedback", st.state),
        );
    }
    let text = body.text.trim().to_string();
    st.state = if text.is_empty() {
        SessionPhase::Planning
    } else {
        SessionPhase::AwaitingGeneration
    };
    if run.feedback.send(JudgeMsg::Feedback(text)).is_err() {
        return error(StatusCode::GONE, "session worker has stopped");
    }
    (StatusCode::ACCEPTED, Json(st.clone())).into_response()
}

async fn reset(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(slot) = app.0.slot(&id) else {
        return error(StatusCode::NOT_FOUND, format!("no session {id}"));
    };
    let backend = match app.0.backend(&slot.fixtures) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let mut run = slot.run.lock().expect("run lock");
    run.cancel.store(true, Ordering::SeqCst);
    let _ = run.feedback.send(JudgeMsg::Cancel);
    *run = start_run(&slot.id, &slot.scene, &slot.task, slot.judge, backend, &app.0.config);
    let st = run.status.lock().expect("status lock").clone();
    Json(st).into_response()
}

async fn rollout_stream(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(slot) = app.0.slot(&id) else {
        return error(StatusCode::NOT_FOUND, format!("no session {id}"));
    };
    let (backlog, rx, finished) = {
        let run = slot.run.lock().expect("run lock");
        let st = run.status.lock().expect("status lock");
        (st.stream_log.clone(), run.stream.subscribe(), st.finished)
    };
    let backlog = stream::iter(backlog);
    let live = stream::unfold((rx, finished), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(line) => {
                    let end = line.contains(r#""type":"end""#);
                    return Some((line, (rx, end)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let body = backlog
        .chain(live)
        .map(|line| Ok::<_, std::convert::Infallible>(format!("{line}\n")));
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(body))
        .expect("valid response")
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/scene", get(get_scene))
        .route("/sessions/{id}/rollout", get(rollout_stream))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/debug/prompts", get(get_prompts))
        .with_state(state)
}

pub fn serve(bind: &str, config: Config) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        tracing::info!(address = %listener.local_addr()?, "listening");
        axum::serve(listener, router(AppState::new(config)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
