//! Byte-exact few-shot prompt templates.
//!
//! Forward (question → dialog):
//!
//! ```text
//! <instruction_forward>
//!
//! Question: <q_1>
//! Dialog:
//! User: ...
//! Assistant: ...
//!
//! Question: <question>
//! Dialog:
//! ```
//!
//! Reverse (dialog → question) uses the same examples in the same order with
//! the two fields swapped and ends in a bare `Question:` cue. The response
//! prompt shows each example dialog up to its last assistant turn and ends in
//! `Assistant:`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::corpus::{Dialog, Role};
use crate::error::{Error, Result};

pub const DEFAULT_FORWARD_INSTRUCTION: &str = "Write a dialog between an automated assistant and a user, and the dialog should indirectly ask the initial question you received.";
pub const DEFAULT_REVERSE_INSTRUCTION: &str =
    "Given a dialog that asks an indirect question, extract the concrete question";
pub const RESPONSE_INSTRUCTION: &str = "Continue the dialog with the next response of the automated assistant.";

pub(crate) const FORWARD_CUE: &str = "\nDialog:";
pub(crate) const REVERSE_CUE: &str = "\nQuestion:";
pub(crate) const RESPONSE_CUE: &str = "\nAssistant:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptExample {
    pub question: String,
    pub dialog: Dialog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSet {
    pub instruction_forward: String,
    pub instruction_reverse: String,
    pub examples: Vec<PromptExample>,
}

impl PromptSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let ps: PromptSet = serde_json::from_str(text).map_err(|e| Error::Config(format!("prompt set: {e}")))?;
        ps.validate()?;
        Ok(ps)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Config("prompt set needs at least one example".into()));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.question.trim().is_empty() {
                return Err(Error::Config(format!("example {i} has an empty question")));
            }
            ex.dialog
                .validate()
                .map_err(|e| Error::Config(format!("example {i}: {e}")))?;
        }
        Ok(())
    }

    /// Canonical JSON bytes, used for run fingerprints.
    pub fn canonical_bytes(&self) -> String {
        to_canonical_string(self).expect("prompt set is JSON-serializable")
    }

    pub fn render_forward(&self, question: &str) -> String {
        let mut out = String::from(self.instruction_forward.trim_end());
        for ex in &self.examples {
            out.push_str("\n\nQuestion: ");
            out.push_str(&ex.question);
            out.push_str("\nDialog:\n");
            out.push_str(&ex.dialog.render_turns());
        }
        out.push_str("\n\nQuestion: ");
        out.push_str(question);
        out.push_str(FORWARD_CUE);
        out
    }

    pub fn render_reverse(&self, dialog: &Dialog) -> String {
        let mut out = String::from(self.instruction_reverse.trim_end());
        for ex in &self.examples {
            out.push_str("\n\nDialog:\n");
            out.push_str(&ex.dialog.render_turns());
            out.push_str("\nQuestion: ");
            out.push_str(&ex.question);
        }
        out.push_str("\n\nDialog:\n");
        out.push_str(&dialog.render_turns());
        out.push_str(REVERSE_CUE);
        out
    }

    pub fn render_response(&self, dialog: &Dialog) -> String {
        let mut out = String::from(RESPONSE_INSTRUCTION);
        for ex in &self.examples {
            let turns = &ex.dialog.turns;
            let Some(last_asst) = turns.iter().rposition(|t| t.role == Role::Assistant) else {
                continue;
            };
            if last_asst == 0 {
                continue;
            }
            out.push_str("\n\nDialog:\n");
            out.push_str(&Dialog::new(turns[..=last_asst].to_vec()).render_turns());
        }
        out.push_str("\n\nDialog:\n");
        out.push_str(&dialog.render_turns());
        out.push_str(RESPONSE_CUE);
        out
    }
}

#[cfg(test)]
pub(crate) use tests::wall as test_prompt_set;
