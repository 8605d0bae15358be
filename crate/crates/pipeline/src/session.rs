//! One task run: the decompose, generate, execute, judge loop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use lmp_core::dmp::{build_specs, rollout, DmpParams, Integrator, RolloutConfig};
use lmp_core::geometry::normalize_angle;
use lmp_core::perception::{object_list_text, perceive, DetectedObject, PerceptionConfig};
use lmp_core::scene::{compose_goal, Scene, SceneObject};
use lmp_core::sim::{
    evaluate_subtask, execute_trajectory, restore, snapshot, ExecutionReport, Outcome, SimConfig, SimState,
};
use lmp_llm::{ChatBackend, ChatMessage};
use serde::{Deserialize, Serialize};

use crate::judge::Judge;
use crate::parse::{parse_generator_output, parse_subtask, GeneratorOutput, Subtask, Template};
use crate::prompts::{render_decomposer_prompt, render_generator_prompts, reprompt_messages, FeedbackContext, SceneFields};
use crate::report::{summarize_attempt, AttemptRecord, Exchange, StepRecord, TaskReport, TaskStatus};
use crate::PipelineError;

pub const DIMENSIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dmp: DmpParams,
    pub integrator: Integrator,
    pub sim: SimConfig,
    pub perception: PerceptionConfig,
    /// Corrections allowed per subtask before it is given up.
    pub max_retries: usize,
    pub max_subtasks: usize,
    /// Release motions last this fraction of the primitive duration.
    pub release_duration_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dmp: DmpParams::default(),
            integrator: Integrator::Rk4,
            sim: SimConfig::default(),
            perception: PerceptionConfig::default(),
            max_retries: 3,
            max_subtasks: 10,
            release_duration_factor: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn rollout_config(&self, duration: f64) -> RolloutConfig {
        RolloutConfig {
            integrator: self.integrator,
            ..RolloutConfig::for_duration(duration)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Idle,
    Planning,
    AwaitingGeneration,
    Executing,
    AwaitingFeedback,
    Done,
    Failed,
}

/// Progress hooks, called on the thread running the session.
pub trait Observer: Send {
    fn phase(&mut self, _phase: SessionPhase) {}
    fn subtask(&mut self, _subtask: &Subtask, _attempt: usize) {}
    fn prompt(&mut self, _messages: &[ChatMessage], _response: &str) {}
    fn executed(&mut self, _report: &ExecutionReport) {}
    fn accepted(&mut self, _subtask: &Subtask) {}
    /// Simulator state after it was restored for a retry.
    fn restored(&mut self, _state: &SimState) {}
}

pub struct NullObserver;

impl Observer for NullObserver {}

pub struct Session {
    pub config: PipelineConfig,
    pub task: String,
    pub state: SimState,
    pub completed: Vec<Subtask>,
    initial_scene: Scene,
    backend: Arc<dyn ChatBackend>,
    observer: Box<dyn Observer>,
    perception_calls: u64,
    cancel: Arc<AtomicBool>,
}

impl Session {
    pub fn new(config: PipelineConfig, scene: Scene, task: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            config,
            task: task.into(),
            state: SimState::new(scene.clone()),
            completed: Vec::new(),
            initial_scene: scene,
            backend,
            observer: Box::new(NullObserver),
            perception_calls: 0,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn with_observer(mut self, observer: Box<dyn Observer>) -> Self {
        self.observer = observer;
        self
    }

    /// Flag checked between subtasks and attempts; once set the run stops
    /// with [`TaskStatus::Cancelled`].
    pub fn with_cancel(mut self, cancel: Arc<AtomicBool>) -> Self {
        self.cancel = cancel;
        self
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    fn perceive(&mut self) -> Vec<DetectedObject> {
        let d = perceive(&self.state, &self.config.perception, self.perception_calls);
        self.perception_calls += 1;
        d
    }

    fn complete(&mut self, messages: Vec<ChatMessage>) -> (Exchange, Result<String, PipelineError>) {
        let result = self.backend.complete(&messages).map_err(PipelineError::from);
        let response = result.as_ref().map(String::clone).unwrap_or_default();
        self.observer.prompt(&messages, &response);
        (Exchange { messages, response }, result)
    }

    fn nameable(&self, detections: &[DetectedObject]) -> Vec<String> {
        let mut labels: Vec<String> = detections.iter().map(|d| d.label.clone()).collect();
        if let Some(h) = self.state.held_label() {
            if !labels.iter().any(|l| l == h) {
                labels.push(h.to_string());
            }
        }
        labels
    }

    /// Ask the decomposer for the next subtask.
    pub fn decompose(&mut self) -> (Exchange, Result<Subtask, PipelineError>) {
        let detections = self.perceive();
        let messages = render_decomposer_prompt(&self.task, &object_list_text(&detections), &self.completed);
        let (exchange, response) = self.complete(messages);
        let labels = self.nameable(&detections);
        let parsed = response.and_then(|r| parse_subtask(&r, &labels));
        (exchange, parsed)
    }

    /// Start and goal vectors `[x, y, z, yaw, gripper]` and the duration.
    fn motion(
        &self,
        subtask: &Subtask,
        detections: &[DetectedObject],
        output: &GeneratorOutput,
    ) -> Result<([f64; 5], [f64; 5], f64), PipelineError> {
        let ee = self.state.ee_pose;
        let start = [ee.x, ee.y, ee.z, ee.yaw, self.state.gripper_value()];
        let find = |label: &str| {
            detections
                .iter()
                .find(|d| d.label == label)
                .map(|d| SceneObject {
                    label: d.label.clone(),
                    position: d.position,
                    yaw: d.yaw,
                    extents: d.extents,
                    flags: Default::default(),
                })
                .ok_or_else(|| PipelineError::Resolution {
                    name: label.to_string(),
                    candidates: detections.iter().map(|d| d.label.clone()).collect(),
                })
        };
        let ws = &self.state.scene.workspace;
        let rp = (ee.roll, ee.pitch);
        let duration = self.config.dmp.duration;
        let (pose, gripper, duration) = match &subtask.template {
            Template::Done => {
                return Err(PipelineError::Sim(lmp_core::SimError::UnknownTemplate("done".into())))
            }
            Template::Reach { object } => {
                let g = compose_goal(&find(object)?, output.height, output.angle, rp, ws)?;
                (g.pose, 1.0, duration)
            }
            Template::Carry { destination, .. } => {
                let mut g = compose_goal(&find(destination)?, output.height, 0.0, rp, ws)?;
                g.pose.yaw = normalize_angle(ee.yaw + output.angle);
                (g.pose, 1.0, duration)
            }
            Template::Wiping { object } => {
                let mut g = compose_goal(&find(object)?, output.height, 0.0, rp, ws)?;
                g.pose.yaw = normalize_angle(ee.yaw + output.angle);
                (g.pose, 1.0, duration)
            }
            Template::Release { .. } => {
                let mut pose = ee;
                pose.z += output.height;
                pose.yaw = normalize_angle(ee.yaw + output.angle);
                ws.check(pose.position())?;
                (pose, 0.0, duration * self.config.release_duration_factor)
            }
        };
        // shortest rotation from the current yaw
        let yaw = ee.yaw + normalize_angle(pose.yaw - ee.yaw);
        Ok((start, [pose.x, pose.y, pose.z, yaw, gripper], duration))
    }

    /// Generate, execute and evaluate one attempt at `subtask` from the
    /// current state. On execution the session state advances to the
    /// resulting state.
    pub fn run_subtask(&mut self, subtask: &Subtask, feedback: Option<&FeedbackContext>) -> AttemptRecord {
        let mut record = AttemptRecord::failed(Outcome::Success);
        match self.try_subtask(subtask, feedback, &mut record) {
            Ok(outcome) => record.outcome = outcome,
            Err(e) => record.outcome = Outcome::failure(e.reason(), e.to_string()),
        }
        record
    }

    fn try_subtask(
        &mut self,
        subtask: &Subtask,
        feedback: Option<&FeedbackContext>,
        record: &mut AttemptRecord,
    ) -> Result<Outcome, PipelineError> {
        let before = snapshot(&self.state);
        let detections = self.perceive();
        let ee = self.state.ee_pose;
        let fields = SceneFields {
            tcp_position: [ee.x, ee.y, ee.z],
            goal_object: subtask.goal_object().unwrap_or_default().to_string(),
            detections: detections.clone(),
        };
        let count = self.config.dmp.basis_count;
        let messages = render_generator_prompts(&self.task, subtask, &fields, DIMENSIONS, count, feedback);
        self.observer.phase(SessionPhase::AwaitingGeneration);
        let (exchange, response) = self.complete(messages.clone());
        record.exchanges.push(exchange);
        let response = response?;
        let output = match parse_generator_output(&response, DIMENSIONS, count) {
            Ok(o) => o,
            Err(e @ (PipelineError::Parse { .. } | PipelineError::Shape { .. })) => {
                let retry = reprompt_messages(messages, &response, &e.to_string());
                let (exchange, response) = self.complete(retry);
                record.exchanges.push(exchange);
                parse_generator_output(&response?, DIMENSIONS, count)?
            }
            Err(e) => return Err(e),
        };
        record.output = Some(output.clone());
        let (start, goal, duration) = self.motion(subtask, &detections, &output)?;
        let params = DmpParams {
            duration,
            ..self.config.dmp
        };
        let specs = build_specs(&params, start, goal, &output.weights)?;
        let rollout_config = self.config.rollout_config(duration);
        record.specs = Some(specs.clone());
        record.rollout = Some(rollout_config);
        let trajectory = rollout(&specs, &rollout_config)?;
        self.observer.phase(SessionPhase::Executing);
        let report = execute_trajectory(&self.state, &trajectory, &self.config.sim)?;
        self.observer.executed(&report);
        let outcome = evaluate_subtask(&before, &report.final_state, &subtask.goal(), &report, &self.config.sim)?;
        record.samples = report.executed.len();
        record.events = report.events.clone();
        self.state = report.final_state.clone();
        record.final_ee = Some(self.state.ee_pose);
        record.trajectory = Some(report.executed);
        Ok(outcome)
    }

    pub fn run_task(&mut self, judge: &mut dyn Judge) -> TaskReport {
        let mut steps = Vec::new();
        let mut status = TaskStatus::SubtaskCap;
        for index in 0..self.config.max_subtasks {
            if self.cancelled() {
                status = TaskStatus::Cancelled;
                break;
            }
            self.observer.phase(SessionPhase::Planning);
            let (exchange, parsed) = self.decompose();
            let subtask = match parsed {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!(step = index, error = %e, "decomposer answer rejected");
                    status = TaskStatus::DecomposerError { detail: e.to_string() };
                    steps.push(StepRecord::new(index, exchange, None));
                    break;
                }
            };
            if subtask.is_done() {
                steps.push(StepRecord::new(index, exchange, Some(subtask)));
                status = TaskStatus::Success;
                break;
            }
            let mut step = StepRecord::new(index, exchange, Some(subtask.clone()));
            let start = snapshot(&self.state);
            let mut history: Vec<String> = Vec::new();
            let accepted = loop {
                let context = step.attempts.last().map(|prev: &AttemptRecord| FeedbackContext {
                    past: prev
                        .output
                        .clone()
                        .unwrap_or_else(|| GeneratorOutput::zeros(DIMENSIONS, self.config.dmp.basis_count)),
                    history: history.clone(),
                    action_plan: format!(
                        "{}\n{}",
                        history.last().map(String::as_str).unwrap_or_default(),
                        summarize_attempt(prev)
                    ),
                });
                self.observer.subtask(&subtask, step.attempts.len());
                let mut attempt = self.run_subtask(&subtask, context.as_ref());
                self.observer.phase(SessionPhase::AwaitingFeedback);
                let feedback = judge.judge(&subtask, &attempt).filter(|f| !f.trim().is_empty());
                tracing::info!(
                    step = index,
                    attempt = step.attempts.len(),
                    subtask = %subtask.raw,
                    outcome = ?attempt.outcome,
                    accepted = feedback.is_none(),
                    "attempt finished"
                );
                attempt.feedback = feedback.clone();
                step.attempts.push(attempt);
                if self.cancelled() {
                    break false;
                }
                match feedback {
                    None => break true,
                    Some(r) => {
                        history.push(r);
                        self.state = restore(&start);
                        self.observer.restored(&self.state);
                        if history.len() > self.config.max_retries {
                            break false;
                        }
                    }
                }
            };
            step.accepted = accepted;
            steps.push(step);
            if !accepted {
                status = if self.cancelled() {
                    TaskStatus::Cancelled
                } else {
                    TaskStatus::FailedAfterRetries {
                        subtask: subtask.raw.clone(),
                    }
                };
                break;
            }
            self.observer.accepted(&subtask);
            self.completed.push(subtask);
        }
        self.observer.phase(if status == TaskStatus::Success {
            SessionPhase::Done
        } else {
            SessionPhase::Failed
        });
        TaskReport {
            task: self.task.clone(),
            config: self.config.clone(),
            initial_scene: self.initial_scene.clone(),
            steps,
            completed: self.completed.iter().map(|s| s.raw.clone()).collect(),
            status,
            final_scene: self.state.scene.clone(),
            final_ee: self.state.ee_pose,
        }
    }
}
