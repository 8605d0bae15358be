//! Serializable record of a task run, and its replay.

use lmp_core::dmp::{rollout, DmpSpec, RolloutConfig, Trajectory};
use lmp_core::scene::{Pose, Scene};
use lmp_core::sim::{evaluate_subtask, execute_trajectory, snapshot, Event, EventKind, Outcome, SimState};
use lmp_llm::ChatMessage;
use serde::{Deserialize, Serialize};

use crate::parse::{GeneratorOutput, Subtask};
use crate::session::PipelineConfig;
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub messages: Vec<ChatMessage>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub exchanges: Vec<Exchange>,
    pub output: Option<GeneratorOutput>,
    pub specs: Option<[DmpSpec; 5]>,
    pub rollout: Option<RolloutConfig>,
    pub samples: usize,
    pub events: Vec<Event>,
    pub outcome: Outcome,
    pub final_ee: Option<Pose>,
    /// Correction returned by the judge; `None` when accepted.
    pub feedback: Option<String>,
    /// Executed samples, kept in memory only.
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

impl AttemptRecord {
    pub fn failed(outcome: Outcome) -> Self {
        Self {
            exchanges: Vec::new(),
            output: None,
            specs: None,
            rollout: None,
            samples: 0,
            events: Vec::new(),
            outcome,
            final_ee: None,
            feedback: None,
            trajectory: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub decomposer: Exchange,
    pub subtask: Option<Subtask>,
    pub attempts: Vec<AttemptRecord>,
    pub accepted: bool,
}

impl StepRecord {
    pub fn new(index: usize, decomposer: Exchange, subtask: Option<Subtask>) -> Self {
        Self {
            index,
            decomposer,
            subtask,
            attempts: Vec::new(),
            accepted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Success,
    FailedAfterRetries { subtask: String },
    SubtaskCap,
    DecomposerError { detail: String },
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub config: PipelineConfig,
    pub initial_scene: Scene,
    pub steps: Vec<StepRecord>,
    pub completed: Vec<String>,
    pub status: TaskStatus,
    pub final_scene: Scene,
    pub final_ee: Pose,
}

impl TaskReport {
    pub fn succeeded(&self) -> bool {
        self.status == TaskStatus::Success
    }

    pub fn feedback_rounds(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.attempts)
            .filter(|a| a.feedback.is_some())
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn stage(phase: f64) -> &'static str {
    if phase < 0.35 {
        "early"
    } else if phase < 0.65 {
        "middle"
    } else {
        "late"
    }
}

/// Plain-language account of an attempt for the follow-up prompt.
pub fn summarize_attempt(attempt: &AttemptRecord) -> String {
    let mut lines = vec![match &attempt.outcome {
        Outcome::Success => "Automatic summary: the previous trial reached its goal.".to_string(),
        Outcome::Failure { reason, detail } => {
            format!("Automatic summary: the previous trial failed ({}): {detail}.", reason.as_str())
        }
    }];
    for e in &attempt.events {
        if let EventKind::Collision { with_label } = &e.kind {
            lines.push(format!(
                "Collision with {with_label} in the {} part of the motion (phase {:.2}).",
                stage(e.phase),
                e.phase
            ));
        }
    }
    lines.join("\n")
}

/// Re-execute every recorded attempt from the recorded initial scene and
/// list any difference in outcomes, events or final scene.
pub fn replay(report: &TaskReport) -> Result<Vec<String>, PipelineError> {
    let sim = &report.config.sim;
    let mut state = SimState::new(report.initial_scene.clone());
    let mut mismatches = Vec::new();
    for step in &report.steps {
        let Some(subtask) = step.subtask.as_ref().filter(|s| !s.is_done()) else {
            continue;
        };
        let start = state.clone();
        for (k, attempt) in step.attempts.iter().enumerate() {
            let mut after = start.clone();
            if let (Some(specs), Some(cfg)) = (&attempt.specs, &attempt.rollout) {
                let trajectory = rollout(specs, cfg)?;
                let exec = execute_trajectory(&start, &trajectory, sim)?;
                let outcome = evaluate_subtask(&snapshot(&start), &exec.final_state, &subtask.goal(), &exec, sim)?;
                if outcome != attempt.outcome {
                    mismatches.push(format!(
                        "step {} attempt {k}: outcome {outcome:?}, recorded {:?}",
                        step.index, attempt.outcome
                    ));
                }
                if exec.events != attempt.events {
                    mismatches.push(format!("step {} attempt {k}: events differ", step.index));
                }
                after = exec.final_state;
            }
            if attempt.feedback.is_none() {
                state = after;
            }
        }
    }
    if state.scene != report.final_scene {
        mismatches.push("final scene differs".into());
    }
    if state.ee_pose != report.final_ee {
        mismatches.push("final end-effector pose differs".into());
    }
    Ok(mismatches)
}
