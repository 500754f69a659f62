//! Live backend over an OpenAI-compatible chat-completions endpoint.
//!
//! Decoding settings are pinned in the config (temperature 0 by default) so
//! repeated runs are as reproducible as the provider allows. The API key is
//! read from the environment variable named in the config, never implicitly.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentRole, BackendError, CallRecord, GeneratorBackend, Usage};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    4096
}

impl ApiConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("backend config: {e}"))
    }
}

pub struct ApiBackend {
    config: ApiConfig,
    client: reqwest::blocking::Client,
    state: Mutex<(Usage, Vec<CallRecord>)>,
}

impl ApiBackend {
    pub fn new(config: ApiConfig) -> Self {
        ApiBackend {
            config,
            client: reqwest::blocking::Client::new(),
            state: Mutex::new((Usage::default(), Vec::new())),
        }
    }
}

impl GeneratorBackend for ApiBackend {
    fn complete(&self, role: AgentRole, prompt: &str) -> Result<String, BackendError> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| BackendError::MissingApiKey(self.config.api_key_env.clone()))?;
        let payload = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(&payload)
            .send()
            .map_err(|e| BackendError::Api(e.to_string()))?;
        let status = resp.status();
        let body: serde_json::Value = resp.json().map_err(|e| BackendError::Api(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Api(format!("{status}: {body}")));
        }
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Api(format!("unexpected response shape: {body}")))?
            .to_string();
        let mut st = self.state.lock().unwrap();
        st.0.calls += 1;
        st.0.prompt_bytes += prompt.len() as u64;
        st.0.response_bytes += text.len() as u64;
        st.1.push(CallRecord { role, prompt: prompt.to_string(), response: text.clone() });
        Ok(text)
    }

    fn usage(&self) -> Usage {
        self.state.lock().unwrap().0
    }

    fn call_log(&self) -> Vec<CallRecord> {
        self.state.lock().unwrap().1.clone()
    }
}
