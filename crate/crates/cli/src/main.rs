use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmp_cli::commands::{self, JudgeMode, RunOptions};
use lmp_llm::BackendKind;

#[derive(Parser)]
#[command(name = "lmp", version, about = "Language-driven motion primitives on a tabletop simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task and write the report.
    Run {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_backend)]
        backend: Option<BackendKind>,
        /// Fixture file for the scripted backend.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = JudgeMode::Scripted)]
        judge: JudgeMode,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-execute the motions recorded in a report and compare outcomes.
    Replay {
        #[arg(long)]
        report: PathBuf,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write SVG plots and CSV series for every attempt in a report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Check that a scene file loads and is consistent.
    ValidateScene {
        #[arg(long)]
        scene: PathBuf,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "http" => Ok(BackendKind::Http),
        "scripted" => Ok(BackendKind::Scripted),
        other => Err(format!("unknown backend {other}; expected http or scripted")),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scene,
            task,
            config,
            backend,
            fixtures,
            judge,
            out,
        } => commands::run(&RunOptions {
            scene,
            task,
            config,
            backend,
            fixtures,
            judge,
            out: Some(out.clone()),
        })
        .map(|report| {
            println!("{}", serde_json::to_string(&report.status).expect("status serializes"));
            println!("report written to {}", out.join("report.json").display());
            if report.succeeded() {
                0
            } else {
                1
            }
        }),
        Command::Replay { report } => commands::replay_report(&report).map(|diffs| {
            for d in &diffs {
                println!("mismatch: {d}");
            }
            if diffs.is_empty() {
                println!("replay reproduced all recorded outcomes");
                0
            } else {
                1
            }
        }),
        Command::Serve { bind, config } => match commands::load_config(config.as_deref()) {
            Ok(config) => match lmp_cli::server::serve(&bind, config) {
                Ok(()) => Ok(0),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    Ok(1)
                }
            },
            Err(e) => Err(e),
        },
        Command::Plot { report, out } => commands::load_report(&report).and_then(|r| {
            lmp_cli::plot::export(&r, &out).map_err(|source| commands::CliError::Output {
                path: out.display().to_string(),
                source,
            })?;
            println!("plots written to {}", out.display());
            Ok(0)
        }),
        Command::ValidateScene { scene } => commands::load_scene(&scene).map(|s| {
            println!("ok: {} objects", s.objects.len());
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
