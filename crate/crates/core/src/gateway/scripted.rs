//! Deterministic provider that replays fixture responses.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{LlmError, LlmProvider, Prompt, ProviderFailure, ProviderProfile};
use crate::codegen::Skeleton;

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedResponse {
    Text(String),
    /// Fill the USER CODE regions of the first fenced Python block in the
    /// prompt and answer with the completed script in a fence.
    FillSkeleton(BTreeMap<String, String>),
    /// Simulate a transient provider failure.
    Fail(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedExchange {
    pub template_id: Option<String>,
    pub contains: Option<String>,
    pub response: ScriptedResponse,
    /// How many requests this exchange may serve; unlimited when `None`.
    pub uses: Option<usize>,
}

impl ScriptedExchange {
    pub fn text(template_id: &str, response: impl Into<String>) -> Self {
        Self {
            template_id: Some(template_id.to_string()),
            contains: None,
            response: ScriptedResponse::Text(response.into()),
            uses: None,
        }
    }

    pub fn fill(template_id: &str, regions: &[(&str, &str)]) -> Self {
        Self {
            template_id: Some(template_id.to_string()),
            contains: None,
            response: ScriptedResponse::FillSkeleton(
                regions.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ),
            uses: None,
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    pub fn times(mut self, uses: usize) -> Self {
        self.uses = Some(uses);
        self
    }

    /// `exact` requires the template id itself; otherwise a repair prompt
    /// also matches exchanges for its base template.
    fn matches(&self, prompt: &Prompt, exact: bool) -> bool {
        self.template_id.as_ref().is_none_or(|id| {
            *id == prompt.template_id || (!exact && prompt.template_id.strip_suffix("#repair") == Some(id.as_str()))
        }) && self
            .contains
            .as_ref()
            .is_none_or(|needle| prompt.text.contains(needle.as_str()))
    }
}

/// On-disk fixture format.
///
/// ```json
/// {"exchanges": [
///   {"template_id": "dispatch", "response": "BUILD"},
///   {"template_id": "generate_solution", "fill_skeleton": {"modeling": "..."}}
/// ]}
/// ```
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedFixture {
    pub exchanges: Vec<FixtureExchange>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureExchange {
    pub template_id: Option<String>,
    pub contains: Option<String>,
    pub response: Option<String>,
    pub fill_skeleton: Option<BTreeMap<String, String>>,
    pub fail: Option<String>,
    pub uses: Option<usize>,
}

impl TryFrom<FixtureExchange> for ScriptedExchange {
    type Error = LlmError;

    fn try_from(e: FixtureExchange) -> Result<Self, LlmError> {
        let response = match (e.response, e.fill_skeleton, e.fail) {
            (Some(t), None, None) => ScriptedResponse::Text(t),
            (None, Some(r), None) => ScriptedResponse::FillSkeleton(r),
            (None, None, Some(f)) => ScriptedResponse::Fail(f),
            _ => {
                return Err(LlmError::Gateway(
                    "a scripted exchange needs exactly one of response, fill_skeleton, fail".into(),
                ))
            }
        };
        Ok(Self {
            template_id: e.template_id,
            contains: e.contains,
            response,
            uses: e.uses,
        })
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    used: Vec<usize>,
    log: Vec<Prompt>,
}

#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    exchanges: Vec<ScriptedExchange>,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(exchanges: Vec<ScriptedExchange>) -> Self {
        let used = vec![0; exchanges.len()];
        Self {
            id: "scripted".to_string(),
            exchanges,
            state: Mutex::new(ScriptState { used, log: Vec::new() }),
        }
    }

    pub fn from_fixture(fixture: ScriptedFixture) -> Result<Self, LlmError> {
        let exchanges = fixture
            .exchanges
            .into_iter()
            .map(ScriptedExchange::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(exchanges))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Gateway(format!("{}: {e}", path.display())))?;
        let fixture: ScriptedFixture =
            serde_json::from_str(&text).map_err(|e| LlmError::Gateway(format!("{}: {e}", path.display())))?;
        Self::from_fixture(fixture)
    }

    /// Requests served (or rejected) so far.
    pub fn calls(&self) -> usize {
        self.state.lock().unwrap().log.len()
    }

    /// Every prompt received, in order.
    pub fn requests(&self) -> Vec<Prompt> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn requests_for(&self, template_id: &str) -> Vec<Prompt> {
        self.requests()
            .into_iter()
            .filter(|p| p.template_id == template_id)
            .collect()
    }
}

fn first_python_block(text: &str) -> Option<&str> {
    let start = text.find("\n```python\n").map(|i| i + "\n```python\n".len())?;
    let rest = &text[start..];
    let end = rest.find("\n```").map(|i| i + 1).unwrap_or(rest.len());
    Some(&rest[..end])
}

impl LlmProvider for ScriptedProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, _profile: &ProviderProfile, prompt: &Prompt) -> Result<String, ProviderFailure> {
        let mut state = self.state.lock().unwrap();
        state.log.push(prompt.clone());
        // The first live exchange in declaration order wins; exact template
        // matches take precedence over base-template matches.
        let live = |exact: bool| {
            self.exchanges
                .iter()
                .enumerate()
                .position(|(i, ex)| ex.uses.is_none_or(|n| state.used[i] < n) && ex.matches(prompt, exact))
        };
        let idx = live(true).or_else(|| live(false)).ok_or_else(|| {
            ProviderFailure::Permanent(format!(
                "no scripted exchange matches template `{}`",
                prompt.template_id
            ))
        })?;
        state.used[idx] += 1;
        match &self.exchanges[idx].response {
            ScriptedResponse::Text(t) => Ok(t.clone()),
            ScriptedResponse::Fail(msg) => Err(ProviderFailure::Transient(msg.clone())),
            ScriptedResponse::FillSkeleton(regions) => {
                let code = first_python_block(&prompt.text)
                    .ok_or_else(|| ProviderFailure::Permanent("prompt carries no python block to fill".into()))?;
                let skeleton =
                    Skeleton::parse(code).map_err(|e| ProviderFailure::Permanent(format!("skeleton: {e}")))?;
                let filled = skeleton
                    .fill(regions)
                    .map_err(|e| ProviderFailure::Permanent(format!("skeleton: {e}")))?;
                Ok(format!("```python\n{filled}```\n"))
            }
        }
    }
}
