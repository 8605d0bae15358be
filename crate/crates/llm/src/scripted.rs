use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::{check_messages, prompt_hash, ChatBackend, ChatMessage, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Hash,
    Seq,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub kind: MatchKind,
    /// Prompt hash for `hash` entries; free-form note for `seq` entries.
    #[serde(default)]
    pub key: String,
    pub response: String,
}

/// Replays fixture responses. Hash entries answer the prompt they were
/// recorded for; seq entries answer any other prompt in file order. Each
/// entry is used once.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<FixtureEntry>,
    used: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<FixtureEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        Self { entries, used }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&text)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.used.lock().expect("fixture lock").iter().filter(|u| !**u).count()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        check_messages(messages)?;
        let hash = prompt_hash(messages);
        let mut used = self.used.lock().expect("fixture lock");
        let pick = self
            .entries
            .iter()
            .enumerate()
            .position(|(i, e)| !used[i] && e.kind == MatchKind::Hash && e.key == hash)
            .or_else(|| {
                self.entries
                    .iter()
                    .enumerate()
                    .position(|(i, e)| !used[i] && e.kind == MatchKind::Seq)
            });
        match pick {
            Some(i) => {
                used[i] = true;
                Ok(self.entries[i].response.clone())
            }
            None => Err(LlmError::FixtureMiss { hash }),
        }
    }
}
