//! OpenAI-compatible chat completion provider.

use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::{json, Value};

use super::{LlmProvider, Prompt, ProviderFailure, ProviderProfile};

#[derive(Debug)]
pub struct OpenAiCompatibleProvider {
    id: String,
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    requests: AtomicU64,
}

impl OpenAiCompatibleProvider {
    pub fn new(id: impl Into<String>, base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            id: id.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client: reqwest::blocking::Client::new(),
            requests: AtomicU64::new(0),
        }
    }
}

impl LlmProvider for OpenAiCompatibleProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, profile: &ProviderProfile, prompt: &Prompt) -> Result<String, ProviderFailure> {
        let body = json!({
            "model": profile.model_name,
            "temperature": profile.temperature,
            "max_tokens": profile.max_output_tokens,
            "messages": [{"role": "user", "content": prompt.text}],
        });
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .timeout(profile.timeout)
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderFailure::Timeout
            } else {
                ProviderFailure::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderFailure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(ProviderFailure::Permanent(format!("HTTP {status}: {text}")));
        }
        let value: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                ProviderFailure::Timeout
            } else {
                ProviderFailure::Permanent(format!("invalid response body: {e}"))
            }
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderFailure::Permanent("response has no message content".into()))
    }

    fn network_requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
}
