//! Few-shot prompting and language-model backends.

mod backend;
mod parse;
mod prompt;

pub use backend::{
    append_record, complete, BackendKind, EchoBackend, HttpBackend, LmBackend, LmBackendConfig, LmRequest, RecordLine,
    ReplayBackend, FORWARD_MAX_TOKENS, FORWARD_TEMPERATURE, LM_TOKEN_ENV, RESPONSE_MAX_TOKENS, REVERSE_MAX_TOKENS,
};
pub use parse::{parse_dialog, parse_question, parse_response};
pub use prompt::{
    PromptExample, PromptSet, DEFAULT_FORWARD_INSTRUCTION, DEFAULT_REVERSE_INSTRUCTION, RESPONSE_INSTRUCTION,
};

use crate::corpus::{Dialog, Role};
use crate::error::{Error, Result};

/// Next assistant response for a dialog that ends in a user question.
pub fn generate_response(backend: &dyn LmBackend, ps: &PromptSet, dialog: &Dialog) -> Result<String> {
    if dialog.turns.last().map(|t| t.role) != Some(Role::User) {
        return Err(Error::Input(
            "response generation needs a dialog ending in a user turn".into(),
        ));
    }
    let completion = backend.complete(&LmRequest::response(ps.render_response(dialog)))?;
    parse_response(&completion)
}

#[cfg(test)]
pub(crate) use prompt::test_prompt_set;
