//! Pluggable instruction planner: the instruction-language parser, a
//! deterministic scripted planner, an HTTP chat-completion client, and
//! prompt assembly with a bounded conversation context.

mod dsl;
mod http;
mod prompts;
mod scripted;

pub use dsl::{format_program, parse_program, Diagnostic, InstructionProgram};
pub use http::{llm_generate, ChatMessage, OracleEndpoint, OracleReply, DEFAULT_API_KEY_VAR};
pub use prompts::{
    build_system_prompt, estimate_tokens, feedback_request, initial_request, PromptContext,
    DEFAULT_TOKEN_BUDGET, TRUNCATION_MARKER,
};
pub use scripted::scripted_plan;

use crate::roadnet::{RoadNetwork, Scenario};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("planner unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
}

/// A source of instruction-program text. The trainer owns the prompt
/// context and the parse; implementations only produce text.
pub trait InstructionOracle {
    /// Short name for run manifests and transcripts.
    fn label(&self) -> &'static str;

    fn generate(
        &mut self,
        ctx: &PromptContext,
        network: &RoadNetwork,
        scenario: &Scenario,
    ) -> Result<OracleReply, OracleError>;
}

/// Offline planner: ignores the prompts and routes every agent along its
/// free-flow fastest path. Deterministic, so runs are reproducible.
pub struct ScriptedOracle;

impl InstructionOracle for ScriptedOracle {
    fn label(&self) -> &'static str {
        "scripted"
    }

    fn generate(
        &mut self,
        _ctx: &PromptContext,
        network: &RoadNetwork,
        scenario: &Scenario,
    ) -> Result<OracleReply, OracleError> {
        let started = std::time::Instant::now();
        let text = format_program(&scripted_plan(network, scenario));
        Ok(OracleReply { text, inference_time: started.elapsed() })
    }
}

/// Remote planner speaking the chat-completions protocol.
pub struct HttpOracle {
    pub endpoint: OracleEndpoint,
}

impl InstructionOracle for HttpOracle {
    fn label(&self) -> &'static str {
        "http"
    }

    fn generate(
        &mut self,
        ctx: &PromptContext,
        _network: &RoadNetwork,
        _scenario: &Scenario,
    ) -> Result<OracleReply, OracleError> {
        llm_generate(&self.endpoint, ctx)
    }
}
