//! Chat-completion gateway with prompt templating and transcript
//! record/replay.

mod gateway;
mod prompt;
mod transcript;

pub use gateway::{
    ChatBackend, Gateway, GatewayError, GatewayMode, GenerationRequest, OpenAiBackend, RetryPolicy,
    DEFAULT_TEMPERATURE,
};
pub use prompt::{render_prompt, template, PromptError, PromptKind, Template};
pub use transcript::{Transcript, TranscriptStore};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("model response is empty")]
pub struct EmptyResponse;

/// Pulls program text out of a chat response: the interior of the first
/// fenced code block if there is one, else the whole response trimmed.
pub fn extract_program(response: &str) -> Result<String, EmptyResponse> {
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return Err(EmptyResponse);
    }
    let mut lines = response.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("```") {
            let body: Vec<&str> = lines.by_ref().take_while(|l| !l.trim_start().starts_with("```")).collect();
            let block = body.join("\n");
            if block.trim().is_empty() {
                break;
            }
            return Ok(block + "\n");
        }
    }
    Ok(trimmed.to_string())
}
