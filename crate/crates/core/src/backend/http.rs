//! OpenAI-compatible `/chat/completions` provider.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    whitespace_tokens, Backend, BackendError, Client, GenerationRequest, GenerationResponse, MockBackend, MockScript,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[serde(alias = "openai_compatible")]
    Openai,
    Mock,
}

/// One `[[backends]]` entry of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub backend_id: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key. Keys never
    /// appear in config files.
    #[serde(default)]
    pub credential_env_var: Option<String>,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Mock script path (mock backends only).
    #[serde(default)]
    pub script: Option<PathBuf>,
}

fn default_rpm() -> u32 {
    60
}

fn default_timeout() -> u64 {
    300
}

impl ProviderConfig {
    pub fn mock(backend_id: impl Into<String>, script: PathBuf) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: ProviderKind::Mock,
            base_url: String::new(),
            model_name: String::new(),
            credential_env_var: None,
            requests_per_minute: 60_000,
            timeout_secs: default_timeout(),
            script: Some(script),
        }
    }

    /// Builds the backend, resolving credentials through `env`.
    pub fn connect(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Arc<dyn Backend>, BackendError> {
        match self.kind {
            ProviderKind::Openai => Ok(Arc::new(HttpBackend::from_config_with_env(self, env)?)),
            ProviderKind::Mock => {
                let path = self
                    .script
                    .as_ref()
                    .ok_or_else(|| BackendError::Script(format!("backend `{}` has no script", self.backend_id)))?;
                let mut script = MockScript::from_path(path)?;
                script.backend_id = self.backend_id.clone();
                Ok(Arc::new(MockBackend::new(script)))
            }
        }
    }

    /// [`Self::connect`] plus the configured rate limit.
    pub fn client(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Client, BackendError> {
        Ok(Client::new(self.connect(env)?).with_rate_limit(self.requests_per_minute))
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, BackendError> {
        Self::from_config_with_env(cfg, &|k| std::env::var(k).ok())
    }

    /// Fails with `AuthMissing` before any network activity when the key is
    /// absent or empty.
    pub fn from_config_with_env(cfg: &ProviderConfig, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, BackendError> {
        let var = cfg
            .credential_env_var
            .clone()
            .unwrap_or_else(|| "OPENAI_API_KEY".to_string());
        let api_key = env(&var).filter(|k| !k.is_empty()).ok_or(BackendError::AuthMissing(var))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            id: cfg.backend_id.clone(),
            endpoint: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            model: cfg.model_name.clone(),
            api_key,
            agent,
        })
    }

    fn body(&self, request: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let wire_request = self.body(request).to_string();
        let started = Instant::now();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .content_type("application/json")
            .send(wire_request.as_bytes())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let wire_response = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let latency_ms = u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX);
        if !(200..300).contains(&status) {
            return Err(BackendError::ProviderError {
                status,
                body: wire_response,
            });
        }
        let parsed: Value = serde_json::from_str(&wire_response).map_err(|e| BackendError::ProviderError {
            status,
            body: format!("unparseable response ({e}): {wire_response}"),
        })?;
        let choice = &parsed["choices"][0];
        let text = choice["message"]["content"].as_str().unwrap_or_default().to_string();
        let truncated = choice["finish_reason"].as_str() == Some("length");
        let mut token_count = parsed["usage"]["completion_tokens"]
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .unwrap_or_else(|| whitespace_tokens(&text));
        if truncated {
            token_count = token_count.max(request.max_tokens);
        }
        Ok(GenerationResponse {
            text,
            token_count,
            backend_id: self.id.clone(),
            latency_ms,
            truncated,
            wire_request: Some(wire_request),
            wire_response: Some(wire_response),
        })
    }
}
