//! Sources of accept/correct decisions after each attempt.

use std::collections::BTreeMap;

use lmp_core::sim::Outcome;

use crate::parse::Subtask;
use crate::report::AttemptRecord;

/// Decides whether an attempt is accepted. `None` (or an empty string)
/// accepts; any other text is a correction for the next attempt.
pub trait Judge: Send {
    fn judge(&mut self, subtask: &Subtask, attempt: &AttemptRecord) -> Option<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysAccept;

impl Judge for AlwaysAccept {
    fn judge(&mut self, _subtask: &Subtask, _attempt: &AttemptRecord) -> Option<String> {
        None
    }
}

/// Accepts successes and answers failures with canned text keyed by failure
/// reason. `{detail}` in a rule is replaced by the failure detail.
#[derive(Debug, Clone)]
pub struct ScriptedJudge {
    rules: BTreeMap<String, String>,
    fallback: String,
}

impl Default for ScriptedJudge {
    fn default() -> Self {
        let rules = [
            (
                "collision",
                "The motion {detail}. Lift upward early in the motion so the gripper clears the obstacle, then descend near the end.",
            ),
            (
                "grasp_missed",
                "The grasp missed: {detail}. Keep the gripper open until the very end of the motion.",
            ),
            ("carry_miss", "The object did not arrive: {detail}."),
            ("wipe_coverage", "The wiping motion was too small: {detail}. Make a wider circular motion."),
        ];
        Self {
            rules: rules.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            fallback: "The subtask failed: {detail}.".into(),
        }
    }
}

impl ScriptedJudge {
    pub fn with_rules(rules: BTreeMap<String, String>, fallback: impl Into<String>) -> Self {
        Self {
            rules,
            fallback: fallback.into(),
        }
    }
}

impl Judge for ScriptedJudge {
    fn judge(&mut self, _subtask: &Subtask, attempt: &AttemptRecord) -> Option<String> {
        match &attempt.outcome {
            Outcome::Success => None,
            Outcome::Failure { reason, detail } => {
                let rule = self.rules.get(reason.as_str()).unwrap_or(&self.fallback);
                Some(rule.replace("{detail}", detail))
            }
        }
    }
}
