//! Batch verbs: run, replay, validate-scene.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::ValueEnum;
use lmp_core::Scene;
use lmp_llm::{build_backend, BackendKind};
use lmp_pipeline::{replay, AlwaysAccept, Judge, ScriptedJudge, Session, TaskReport};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::terminal::TerminalJudge;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scene: {0}")]
    Scene(#[from] lmp_core::SceneError),
    #[error("backend: {0}")]
    Backend(#[from] lmp_llm::LlmError),
    #[error("writing {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("replay: {0}")]
    Replay(#[from] lmp_pipeline::PipelineError),
}

impl CliError {
    /// Exit status for this error: 2 for bad input or configuration.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Scene(_) | CliError::Backend(_) => 2,
            CliError::Output { .. } | CliError::Replay(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeMode {
    Accept,
    Scripted,
    Interactive,
}

pub fn make_judge(mode: JudgeMode) -> Box<dyn Judge> {
    match mode {
        JudgeMode::Accept => Box::new(AlwaysAccept),
        JudgeMode::Scripted => Box::new(ScriptedJudge::default()),
        JudgeMode::Interactive => Box::new(TerminalJudge),
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scene: PathBuf,
    pub task: String,
    pub config: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub fixtures: Option<PathBuf>,
    pub judge: JudgeMode,
    pub out: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

pub fn load_scene(path: &Path) -> Result<Scene, CliError> {
    let scene = Scene::load(path)?;
    scene.validate()?;
    Ok(scene)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}

pub fn attempt_stem(step: usize, attempt: usize) -> String {
    format!("step{step:02}_attempt{attempt}")
}

pub fn run(opts: &RunOptions) -> Result<TaskReport, CliError> {
    if opts.task.trim().is_empty() {
        return Err(ConfigError::Invalid("task must not be empty".into()).into());
    }
    let mut config = load_config(opts.config.as_deref())?;
    if let Some(kind) = opts.backend {
        config.backend.kind = kind;
    }
    if let Some(f) = &opts.fixtures {
        config.backend.fixture_path = f.display().to_string();
    }
    let scene = load_scene(&opts.scene)?;
    let backend = build_backend(&config.backend)?;
    let mut judge = make_judge(opts.judge);
    let mut session = Session::new(config.pipeline.clone(), scene, opts.task.trim(), Arc::from(backend));
    let report = session.run_task(judge.as_mut());
    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out).map_err(|source| CliError::Output {
            path: out.display().to_string(),
            source,
        })?;
        write(&out.join("report.json"), &report.to_json())?;
        for step in &report.steps {
            for (k, attempt) in step.attempts.iter().enumerate() {
                if let Some(t) = &attempt.trajectory {
                    write(&out.join(format!("{}.csv", attempt_stem(step.index, k))), &t.to_csv())?;
                }
            }
        }
    }
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<TaskReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| {
        ConfigError::Parse {
            path: path.display().to_string(),
            source,
        }
        .into()
    })
}

/// Differences found when re-executing a report; empty when it reproduces.
pub fn replay_report(path: &Path) -> Result<Vec<String>, CliError> {
    let report = load_report(path)?;
    Ok(replay(&report)?)
}
