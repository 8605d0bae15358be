use std::io::{BufRead, Write};

use lmp_core::sim::Outcome;
use lmp_pipeline::{AttemptRecord, Judge, Subtask};

/// Asks the operator on the terminal; an empty line accepts.
pub struct TerminalJudge;

impl Judge for TerminalJudge {
    fn judge(&mut self, subtask: &Subtask, attempt: &AttemptRecord) -> Option<String> {
        let verdict = match &attempt.outcome {
            Outcome::Success => "success".to_string(),
            Outcome::Failure { reason, detail } => format!("{}: {detail}", reason.as_str()),
        };
        let mut err = std::io::stderr();
        let _ = writeln!(err, "subtask {} finished: {verdict}", subtask.raw);
        let _ = write!(err, "feedback (empty to accept)> ");
        let _ = err.flush();
        let mut line = String::new();
        std::io::stdin().lock().read_line(&mut line).ok()?;
        let line = line.trim();
        (!line.is_empty()).then(|| line.to_string())
    }
}
