//! Agent orchestration: backend abstraction, Phase A and Phase B loops.

pub mod api;
pub mod exploit;
pub mod mock;
pub mod phase_a;
pub mod phase_b;
pub mod pipeline;
pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exploit::{build_plan, parse_exploit, render_exploit, ExploitInstance};
pub use mock::MockBackend;
pub use phase_a::{phase_a, PhaseAOutcome, PhaseAStatus};
pub use phase_b::{judge, phase_b, ObjectiveOutcome};
pub use pipeline::{run_pipeline, AblationConfig, Budgets, TaskRunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    #[serde(rename = "A1_extract")]
    A1Extract,
    #[serde(rename = "A2_testcase")]
    A2Testcase,
    #[serde(rename = "A3_trigger_refine")]
    A3TriggerRefine,
    #[serde(rename = "A4_exploit_gen")]
    A4ExploitGen,
    #[serde(rename = "A5_judge")]
    A5Judge,
    #[serde(rename = "A6_exploit_refine")]
    A6ExploitRefine,
}

impl AgentRole {
    pub fn label(self) -> &'static str {
        match self {
            AgentRole::A1Extract => "A1_extract",
            AgentRole::A2Testcase => "A2_testcase",
            AgentRole::A3TriggerRefine => "A3_trigger_refine",
            AgentRole::A4ExploitGen => "A4_exploit_gen",
            AgentRole::A5Judge => "A5_judge",
            AgentRole::A6ExploitRefine => "A6_exploit_refine",
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no scripted response for role {role} (call #{call_index})")]
    ScriptExhausted { role: &'static str, call_index: u64 },
    #[error("context assertion failed for role {role}: prompt does not contain {missing:?}")]
    ContextAssertion { role: &'static str, missing: String },
    #[error("api error: {0}")]
    Api(String),
    #[error("api key env var '{0}' is not set")]
    MissingApiKey(String),
}

/// Aggregate usage counters: calls plus prompt/response byte totals.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub prompt_bytes: u64,
    pub response_bytes: u64,
}

impl Usage {
    pub fn add(&mut self, other: &Usage) {
        self.calls += other.calls;
        self.prompt_bytes += other.prompt_bytes;
        self.response_bytes += other.response_bytes;
    }
}

#[derive(Debug, Clone)]
pub struct CallRecord {
    pub role: AgentRole,
    pub prompt: String,
    pub response: String,
}

/// Completion backend shared by all six agent roles. Implementations must be
/// deterministic for identical (role, prompt) inputs when decoding is fixed.
pub trait GeneratorBackend: Send + Sync {
    fn complete(&self, role: AgentRole, prompt: &str) -> Result<String, BackendError>;

    fn usage(&self) -> Usage;

    /// Recorded calls, in order. Live backends may return an empty log.
    fn call_log(&self) -> Vec<CallRecord>;

    fn calls_for(&self, role: AgentRole) -> u64 {
        self.call_log().iter().filter(|c| c.role == role).count() as u64
    }
}

/// Extract the contents of the first fenced code block tagged `tag`.
pub fn extract_block(text: &str, tag: &str) -> Option<String> {
    let open = format!("```{tag}");
    let mut rest = text;
    loop {
        let start = rest.find(&open)?;
        let after = &rest[start + open.len()..];
        // the tag must end the line
        let nl = after.find('\n')?;
        if !after[..nl].trim().is_empty() {
            rest = &rest[start + open.len()..];
            continue;
        }
        let body = &after[nl + 1..];
        let end = body.find("```")?;
        let mut content = &body[..end];
        if let Some(stripped) = content.strip_suffix('\n') {
            content = stripped;
        }
        return Some(content.to_string());
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("backend failure on attempt {attempt}: {source}")]
    Backend {
        attempt: u32,
        #[source]
        source: BackendError,
    },
    #[error("test-case output unusable: {0}")]
    TestcaseParse(String),
    #[error(transparent)]
    Exec(#[from] crate::executor::ExecError),
}
