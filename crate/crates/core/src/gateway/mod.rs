//! Uniform access to interchangeable LLM providers.
//!
//! The [`Gateway`] renders prompt templates, dispatches them to a registered
//! [`LlmProvider`], retries transient failures and offers two constrained
//! completion modes: a single token out of an allowed set, and a JSON object
//! with required keys. Each constrained mode issues at most one repair prompt.

mod http;
mod scripted;
mod template;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{Map, Value};
use thiserror::Error;

pub use http::OpenAiCompatibleProvider;
pub use scripted::{ScriptedExchange, ScriptedFixture, ScriptedProvider, ScriptedResponse};
pub use template::{bind, Bindings, Prompt, PromptTemplate, TemplateRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("template assets: {0}")]
    TemplateAsset(String),
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("invalid provider profile: {0}")]
    InvalidProfile(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("gateway error: {0}")]
    Gateway(String),
    #[error("provider timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("no unique token among {allowed:?} in response {raw:?}")]
    UnparseableToken { raw: String, allowed: Vec<String> },
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing keys {0:?}")]
    MissingKeys(BTreeSet<String>),
}

/// Failure reported by a provider for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFailure {
    /// Worth retrying (connection refused, 429, 5xx).
    Transient(String),
    /// Retrying will not help (bad request, unmatched scripted prompt).
    Permanent(String),
    Timeout,
}

pub trait LlmProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn complete(&self, profile: &ProviderProfile, prompt: &Prompt) -> Result<String, ProviderFailure>;

    /// Outbound network requests issued so far.
    fn network_requests(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderProfile {
    pub provider_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
}

impl ProviderProfile {
    pub fn new(provider_id: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            timeout: Duration::from_secs(120),
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidProfile("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidProfile("max_output_tokens must be positive".into()));
        }
        if self.timeout.is_zero() {
            return Err(LlmError::InvalidProfile("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Uppercases `raw` after stripping surrounding whitespace and punctuation.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_uppercase()
}

/// Finds the single allowed token in `raw`, if there is exactly one.
pub fn match_token(raw: &str, allowed: &[&str]) -> Option<String> {
    let normalized = normalize_token(raw);
    if let Some(tok) = allowed.iter().find(|t| t.eq_ignore_ascii_case(&normalized)) {
        return Some(tok.to_string());
    }
    let found: BTreeSet<&str> = normalized
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter_map(|word| allowed.iter().copied().find(|t| t.eq_ignore_ascii_case(word)))
        .collect();
    if found.len() == 1 {
        found.into_iter().next().map(str::to_string)
    } else {
        None
    }
}

/// Strips a surrounding code fence, if any.
fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or("");
        if let Some(end) = rest.rfind("```") {
            return rest[..end].trim();
        }
        return rest.trim();
    }
    t
}

/// Parses the first JSON object in `raw`, ignoring fences and trailing prose.
///
/// A response listing bare `"key": value` pairs without braces is accepted and
/// wrapped, since some templates show the expected shape that way.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, LlmError> {
    let body = strip_fences(raw);
    let mut last_err = None;
    for (idx, _) in body.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&body[idx..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => return Ok(map),
            Some(Ok(_)) => continue,
            Some(Err(e)) => last_err = Some(e.to_string()),
            None => break,
        }
    }
    if !body.contains('{') {
        let wrapped = format!("{{{}}}", body.trim().trim_end_matches(','));
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&wrapped) {
            return Ok(map);
        }
    }
    Err(LlmError::MalformedJson(
        last_err.unwrap_or_else(|| "no JSON object in response".to_string()),
    ))
}

/// The original prompt followed by a short correction request.
pub fn repair_prompt(original: &Prompt, reminder: &str) -> Prompt {
    Prompt::new(
        format!("{}#repair", original.template_id),
        format!(
            "{}\n\nYour previous answer could not be used. {reminder}",
            original.text
        ),
    )
}

pub struct Gateway {
    providers: HashMap<String, Arc<dyn LlmProvider>>,
    templates: TemplateRegistry,
    profile: ProviderProfile,
    retry: RetryPolicy,
    min_interval: Duration,
    last_call: Mutex<HashMap<String, Instant>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .field("profile", &self.profile)
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    /// A gateway with one provider whose id becomes the default profile's.
    pub fn new(provider: Arc<dyn LlmProvider>, model_name: impl Into<String>) -> Self {
        let profile = ProviderProfile::new(provider.provider_id(), model_name);
        let mut providers = HashMap::new();
        providers.insert(provider.provider_id().to_string(), provider);
        Self {
            providers,
            templates: TemplateRegistry::builtin(),
            profile,
            retry: RetryPolicy::default(),
            min_interval: Duration::ZERO,
            last_call: Mutex::new(HashMap::new()),
        }
    }

    /// Builds a gateway from `LADS_LLM_*` environment variables.
    ///
    /// `LADS_LLM_PROVIDER=scripted` replays the fixture named by
    /// `LADS_SCRIPTED_FIXTURE`; any other value selects an OpenAI-compatible
    /// chat endpoint at `LADS_LLM_BASE_URL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let provider_id = std::env::var("LADS_LLM_PROVIDER").unwrap_or_else(|_| "openai".to_string());
        let model = std::env::var("LADS_LLM_MODEL").unwrap_or_else(|_| "gpt-4o".to_string());
        let provider: Arc<dyn LlmProvider> = if provider_id == "scripted" {
            let path = std::env::var("LADS_SCRIPTED_FIXTURE")
                .map_err(|_| LlmError::Gateway("LADS_SCRIPTED_FIXTURE is required for the scripted provider".into()))?;
            Arc::new(ScriptedProvider::from_file(std::path::Path::new(&path))?)
        } else {
            let base = std::env::var("LADS_LLM_BASE_URL").unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
            let key = std::env::var("LADS_LLM_API_KEY").ok();
            Arc::new(OpenAiCompatibleProvider::new(provider_id, base, key))
        };
        let mut gw = Self::new(provider, model);
        if let Ok(dir) = std::env::var("LADS_PROMPT_DIR") {
            gw.templates = TemplateRegistry::from_dir(std::path::Path::new(&dir))?;
        }
        Ok(gw)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_templates(mut self, templates: TemplateRegistry) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_profile(mut self, profile: ProviderProfile) -> Self {
        self.profile = profile;
        self
    }

    /// Minimum spacing between two requests to the same provider.
    pub fn with_rate_limit(mut self, min_interval: Duration) -> Self {
        self.min_interval = min_interval;
        self
    }

    pub fn register_provider(&mut self, provider: Arc<dyn LlmProvider>) {
        self.providers.insert(provider.provider_id().to_string(), provider);
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    /// Default profile for free-text calls.
    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    /// Profile for structured-output calls; always temperature 0.
    pub fn structured_profile(&self) -> ProviderProfile {
        ProviderProfile {
            temperature: 0.0,
            ..self.profile.clone()
        }
    }

    pub fn network_requests(&self) -> u64 {
        self.providers.values().map(|p| p.network_requests()).sum()
    }

    pub fn render(&self, template_id: &str, bindings: &Bindings) -> Result<Prompt, LlmError> {
        self.templates.render(template_id, bindings)
    }

    fn throttle(&self, provider_id: &str) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut last = self.last_call.lock().unwrap();
            let now = Instant::now();
            let next = last.get(provider_id).map(|t| *t + self.min_interval).unwrap_or(now);
            let start = next.max(now);
            last.insert(provider_id.to_string(), start);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    pub fn complete(&self, profile: &ProviderProfile, prompt: &Prompt) -> Result<String, LlmError> {
        if prompt.text.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        profile.validate()?;
        let provider = self
            .providers
            .get(&profile.provider_id)
            .ok_or_else(|| LlmError::UnknownProvider(profile.provider_id.clone()))?;

        let attempts = self.retry.max_attempts.max(1);
        let mut last = ProviderFailure::Transient("no attempt made".into());
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.saturating_pow(attempt - 1));
            }
            self.throttle(&profile.provider_id);
            match provider.complete(profile, prompt) {
                Ok(text) => return Ok(text),
                Err(ProviderFailure::Permanent(msg)) => return Err(LlmError::Gateway(msg)),
                Err(failure) => {
                    tracing::warn!(
                        template = %prompt.template_id,
                        attempt = attempt + 1,
                        ?failure,
                        "provider call failed"
                    );
                    last = failure;
                }
            }
        }
        Err(match last {
            ProviderFailure::Timeout => LlmError::Timeout { attempts },
            ProviderFailure::Transient(msg) | ProviderFailure::Permanent(msg) => {
                LlmError::Gateway(format!("{msg} (after {attempts} attempt(s))"))
            }
        })
    }

    pub fn complete_token(
        &self,
        profile: &ProviderProfile,
        prompt: &Prompt,
        allowed: &[&str],
    ) -> Result<String, LlmError> {
        if allowed.is_empty() {
            return Err(LlmError::Gateway("allowed token set is empty".into()));
        }
        let raw = self.complete(profile, prompt)?;
        if let Some(tok) = match_token(&raw, allowed) {
            return Ok(tok);
        }
        let repair = repair_prompt(prompt, &format!("Answer with exactly one of: {}.", allowed.join(", ")));
        let raw = self.complete(profile, &repair)?;
        match_token(&raw, allowed).ok_or_else(|| LlmError::UnparseableToken {
            raw,
            allowed: allowed.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn complete_json(
        &self,
        profile: &ProviderProfile,
        prompt: &Prompt,
        required_keys: &[&str],
    ) -> Result<Map<String, Value>, LlmError> {
        if required_keys.is_empty() {
            return Err(LlmError::Gateway("required key set is empty".into()));
        }
        let check = |raw: &str| -> Result<Map<String, Value>, LlmError> {
            let map = extract_json_object(raw)?;
            let missing: BTreeSet<String> = required_keys
                .iter()
                .filter(|k| !map.contains_key(**k))
                .map(|k| k.to_string())
                .collect();
            if missing.is_empty() {
                Ok(map)
            } else {
                Err(LlmError::MissingKeys(missing))
            }
        };
        let raw = self.complete(profile, prompt)?;
        match check(&raw) {
            Ok(map) => Ok(map),
            Err(first) => {
                tracing::debug!(error = %first, "JSON response rejected, issuing repair prompt");
                let keys: Vec<String> = required_keys.iter().map(|k| format!("\"{k}\"")).collect();
                let repair = repair_prompt(
                    prompt,
                    &format!(
                        "Respond only with a single JSON object containing the keys {}.",
                        keys.join(", ")
                    ),
                );
                check(&self.complete(profile, &repair)?)
            }
        }
    }
}
