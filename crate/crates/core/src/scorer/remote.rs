use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::ItemProfile;

use super::prompt::{self, SYSTEM_PROMPT};
use super::{FeedbackKind, PreferenceBackend, Score, ScoreRequest, ScorerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    /// Prefix of the chat-completions route, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First backoff delay; doubles on every retry.
    pub backoff_ms: u64,
    /// Environment variable holding the bearer token, if any.
    pub auth_env: Option<String>,
    /// Maximum number of scoring requests in flight.
    pub parallelism: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 500,
            auth_env: Some("OPENAI_API_KEY".into()),
            parallelism: 4,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("scorer.endpoint.timeout_ms must be positive".into());
        }
        if self.base_url.trim().is_empty() {
            return Err("scorer.endpoint.base_url is empty".into());
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: String,
}

fn build_client(endpoint: &EndpointConfig) -> Result<reqwest::blocking::Client, ScorerError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(endpoint.timeout_ms))
        .build()
        .map_err(|e| ScorerError::Protocol(format!("cannot build http client: {e}")))
}

/// Sends one chat-completion request and returns the first choice's content.
/// Timeouts, connection failures and 5xx replies are retried with
/// exponential backoff up to `max_retries` times.
pub fn remote_call(endpoint: &EndpointConfig, prompt: &str) -> Result<String, ScorerError> {
    let client = build_client(endpoint)?;
    call_with(&client, endpoint, prompt)
}

fn call_with(
    client: &reqwest::blocking::Client,
    endpoint: &EndpointConfig,
    prompt: &str,
) -> Result<String, ScorerError> {
    let body = json!({
        "model": endpoint.model_name,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": prompt},
        ],
        "temperature": endpoint.temperature,
    });
    let token = endpoint
        .auth_env
        .as_deref()
        .and_then(|var| std::env::var(var).ok())
        .filter(|t| !t.is_empty());
    let url = endpoint.url();

    let attempts = endpoint.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = endpoint.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
            log::warn!("retrying {url} in {delay} ms (attempt {}/{attempts}): {last}", attempt + 1);
            std::thread::sleep(Duration::from_millis(delay));
        }
        let mut req = client.post(&url).json(&body);
        if let Some(token) = &token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                last = e.to_string();
                continue;
            }
            Err(e) => return Err(ScorerError::Protocol(e.to_string())),
        };
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if status.is_server_error() {
            last = format!("status {status}");
            continue;
        }
        if !status.is_success() {
            return Err(ScorerError::Rejected {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| ScorerError::Protocol(format!("reply is not a chat completion ({e}): {text:?}")))?;
        return parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ScorerError::Protocol("reply has no choices".into()));
    }
    Err(ScorerError::Unavailable {
        attempts,
        message: last,
    })
}

/// Language-model backend over a chat-completions endpoint.
pub struct RemoteBackend {
    endpoint: EndpointConfig,
    client: reqwest::blocking::Client,
    calls: AtomicUsize,
}

impl RemoteBackend {
    pub fn new(endpoint: EndpointConfig) -> Result<Self, ScorerError> {
        endpoint.validate().map_err(ScorerError::InvalidRequest)?;
        let client = build_client(&endpoint)?;
        Ok(Self {
            endpoint,
            client,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    /// Number of logical calls issued (retries are not counted separately).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn call(&self, prompt: &str) -> Result<String, ScorerError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        call_with(&self.client, &self.endpoint, prompt)
    }
}

impl PreferenceBackend for RemoteBackend {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn score(&self, request: &ScoreRequest) -> Result<Score, ScorerError> {
        let reply = self.call(&prompt::render_score_prompt(&request.preference_text, &request.item_profile))?;
        prompt::parse_score_response(&reply)
    }

    fn summarize(&self, _user: usize, profiles: &[&ItemProfile]) -> Result<String, ScorerError> {
        if profiles.is_empty() {
            return Err(ScorerError::InvalidRequest("no profiles to summarize".into()));
        }
        let reply = self.call(&prompt::render_summary_prompt(profiles))?;
        prompt::parse_preference_response(&reply)
    }

    fn refine(
        &self,
        _user: usize,
        preference: &str,
        profile: &ItemProfile,
        kind: FeedbackKind,
    ) -> Result<String, ScorerError> {
        let reply = self.call(&prompt::render_refine_prompt(preference, profile, kind))?;
        prompt::parse_preference_response(&reply)
    }
}
