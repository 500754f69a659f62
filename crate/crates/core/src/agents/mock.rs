//! Scripted replay backend for deterministic desk-scale runs.
//!
//! A replay file maps (role, per-role call order) to canned responses, with
//! optional assertions on the prompt the orchestrator actually sent. Steps
//! are consumed per role in file order; a step with `"repeat": true` answers
//! all further calls for its role, which is how always-failing loops for
//! budget tests are scripted. An optional `"task"` field scopes a step to
//! one task so a single file can script a whole benchmark suite.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{AgentRole, BackendError, CallRecord, GeneratorBackend, Usage};

#[derive(Debug, Clone, Deserialize)]
pub struct ReplayStep {
    pub role: AgentRole,
    #[serde(default)]
    pub attempt: u32,
    pub respond: String,
    #[serde(default)]
    pub expect_context_contains: Vec<String>,
    #[serde(default)]
    pub repeat: bool,
    #[serde(default)]
    pub task: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReplayScript {
    pub steps: Vec<ReplayStep>,
}

impl ReplayScript {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("replay file: {e}"))
    }

    /// Steps visible to one task: steps tagged with that task id plus
    /// untagged steps.
    pub fn steps_for_task(&self, task_id: &str) -> Vec<ReplayStep> {
        self.steps
            .iter()
            .filter(|s| s.task.as_deref().map(|t| t == task_id).unwrap_or(true))
            .cloned()
            .collect()
    }
}

struct MockState {
    queues: HashMap<AgentRole, Vec<ReplayStep>>,
    cursor: HashMap<AgentRole, usize>,
    usage: Usage,
    log: Vec<CallRecord>,
}

pub struct MockBackend {
    state: Mutex<MockState>,
}

impl MockBackend {
    pub fn new(steps: Vec<ReplayStep>) -> Self {
        let mut queues: HashMap<AgentRole, Vec<ReplayStep>> = HashMap::new();
        for s in steps {
            queues.entry(s.role).or_default().push(s);
        }
        MockBackend {
            state: Mutex::new(MockState {
                queues,
                cursor: HashMap::new(),
                usage: Usage::default(),
                log: Vec::new(),
            }),
        }
    }

    pub fn from_script(script: &ReplayScript) -> Self {
        Self::new(script.steps.clone())
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        Ok(Self::from_script(&ReplayScript::from_file(path)?))
    }

    /// Convenience for tests: one always-repeating response per role.
    pub fn always(role: AgentRole, respond: &str) -> Self {
        Self::new(vec![ReplayStep {
            role,
            attempt: 0,
            respond: respond.to_string(),
            expect_context_contains: vec![],
            repeat: true,
            task: None,
        }])
    }
}

impl GeneratorBackend for MockBackend {
    fn complete(&self, role: AgentRole, prompt: &str) -> Result<String, BackendError> {
        let mut st = self.state.lock().unwrap();
        let call_index = st.log.iter().filter(|c| c.role == role).count() as u64;
        let queue = st.queues.get(&role).cloned().unwrap_or_default();
        let cursor = *st.cursor.get(&role).unwrap_or(&0);
        let step = if cursor < queue.len() {
            st.cursor.insert(role, cursor + 1);
            queue[cursor].clone()
        } else if queue.last().map(|s| s.repeat).unwrap_or(false) {
            queue.last().unwrap().clone()
        } else {
            return Err(BackendError::ScriptExhausted { role: role.label(), call_index });
        };
        for needle in &step.expect_context_contains {
            if !prompt.contains(needle) {
                return Err(BackendError::ContextAssertion {
                    role: role.label(),
                    missing: needle.clone(),
                });
            }
        }
        st.usage.calls += 1;
        st.usage.prompt_bytes += prompt.len() as u64;
        st.usage.response_bytes += step.respond.len() as u64;
        st.log.push(CallRecord {
            role,
            prompt: prompt.to_string(),
            response: step.respond.clone(),
        });
        Ok(step.respond)
    }

    fn usage(&self) -> Usage {
        self.state.lock().unwrap().usage
    }

    fn call_log(&self) -> Vec<CallRecord> {
        self.state.lock().unwrap().log.clone()
    }
}
