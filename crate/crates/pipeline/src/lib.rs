//! Language-driven task loop: a decomposer proposes the next subtask, a
//! generator emits primitive weights for it, the simulator executes the
//! motion and a judge either accepts it or returns a correction.

pub mod judge;
pub mod parse;
pub mod prompts;
pub mod report;
pub mod session;

use lmp_core::{DmpError, SceneError, SimError};
use lmp_core::sim::FailureReason;
use lmp_llm::LlmError;
use thiserror::Error;

pub use judge::{AlwaysAccept, Judge, ScriptedJudge};
pub use parse::{parse_generator_output, parse_subtask, GeneratorOutput, Subtask, Template};
pub use report::{replay, AttemptRecord, Exchange, StepRecord, TaskReport, TaskStatus};
pub use session::{NullObserver, Observer, PipelineConfig, Session, SessionPhase};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("could not parse model output: {detail}")]
    Parse { detail: String, raw: String },
    #[error("weights must be a {rows}x{cols} matrix: {detail}")]
    Shape { rows: usize, cols: usize, detail: String },
    #[error("cannot resolve object {name:?}; candidates: {}", candidates.join(", "))]
    Resolution { name: String, candidates: Vec<String> },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Dmp(#[from] DmpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("goal: {0}")]
    Goal(#[from] SceneError),
}

impl PipelineError {
    pub fn reason(&self) -> FailureReason {
        match self {
            PipelineError::Parse { .. } => FailureReason::ParseError,
            PipelineError::Shape { .. } => FailureReason::ShapeError,
            PipelineError::Resolution { .. } => FailureReason::ResolutionError,
            PipelineError::Llm(_) => FailureReason::TransportError,
            PipelineError::Dmp(_) => FailureReason::DmpError,
            PipelineError::Sim(_) => FailureReason::SimError,
            PipelineError::Goal(_) => FailureReason::GoalError,
        }
    }
}
