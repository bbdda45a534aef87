//! Chat-completion client with retries.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::structured::parse_unchecked;
use super::{AgentError, AgentIssue, AgentOutput, AgentRequest, IssueKind};

pub const API_KEY_ENV: &str = "DRIVEAGENT_API_KEY";

const SYSTEM_PROMPT: &str = "You are one agent in a driving-scene reasoning pipeline. Follow the instruction and finish with the structured section exactly as specified.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_attempts: u32,
    /// seconds; doubled after each failed attempt
    pub backoff_initial: f64,
    /// seconds, per request
    pub timeout: f64,
    pub max_in_flight: usize,
    /// Use the rule-based result when every attempt fails.
    pub fallback: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "driveagent".into(),
            temperature: 0.0,
            max_attempts: 3,
            backoff_initial: 0.5,
            timeout: 30.0,
            max_in_flight: 4,
            fallback: true,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint.is_empty() || self.model.is_empty() {
            return Err("remote endpoint and model must be set".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be non-negative".into());
        }
        if self.max_attempts == 0 || self.max_in_flight == 0 {
            return Err("max_attempts and max_in_flight must be at least 1".into());
        }
        if !(self.backoff_initial.is_finite() && self.backoff_initial >= 0.0) {
            return Err("backoff_initial must be non-negative".into());
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err("timeout must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    pub config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

pub(crate) struct Success {
    pub output: AgentOutput,
    pub raw: String,
    pub attempts: u32,
    pub issues: Vec<AgentIssue>,
}

impl RemoteClient {
    /// Reads the credential from `DRIVEAGENT_API_KEY`.
    pub fn from_env(config: RemoteConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(config, key)
    }

    pub fn with_key(config: RemoteConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, api_key, agent }
    }

    pub fn has_credential(&self) -> bool {
        self.api_key.is_some()
    }

    fn post(&self, key: &str, request: &AgentRequest) -> Result<String, AgentIssue> {
        let transport = |detail: String| AgentIssue { kind: IssueKind::TransportFailure, attempt: 0, detail };
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": request.instruction},
            ],
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .header("X-Correlation-Id", &request.correlation_id.to_string())
            .send_json(&body)
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(transport(format!("HTTP {status}")));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| AgentIssue {
            kind: IssueKind::SchemaViolation,
            attempt: 0,
            detail: format!("response body is not JSON: {e}"),
        })?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| AgentIssue {
                kind: IssueKind::SchemaViolation,
                attempt: 0,
                detail: "response has no choices[0].message.content".into(),
            })
    }

    fn check(&self, request: &AgentRequest, content: &str) -> Result<AgentOutput, AgentIssue> {
        let schema = |e: AgentError| AgentIssue { kind: IssueKind::SchemaViolation, attempt: 0, detail: e.to_string() };
        let output = parse_unchecked(request.role, content).map_err(schema)?;
        output
            .validate_against(&request.context)
            .map_err(|d| schema(AgentError::InvariantViolation(d)))?;
        Ok(output)
    }

    /// Runs the retry loop. On failure returns every issue seen and the
    /// number of attempts made.
    pub(crate) fn attempt(&self, request: &AgentRequest) -> Result<Success, (Vec<AgentIssue>, u32)> {
        let Some(key) = &self.api_key else {
            let issue = AgentIssue {
                kind: IssueKind::CredentialMissing,
                attempt: 0,
                detail: format!("{API_KEY_ENV} is not set"),
            };
            return Err((vec![issue], 0));
        };
        let mut issues = Vec::new();
        let mut backoff = self.config.backoff_initial;
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 && backoff > 0.0 {
                thread::sleep(Duration::from_secs_f64(backoff));
                backoff *= 2.0;
            }
            let result = self.post(key, request).and_then(|content| {
                let output = self.check(request, &content)?;
                Ok((output, content))
            });
            match result {
                Ok((output, raw)) => return Ok(Success { output, raw, attempts: attempt, issues }),
                Err(mut issue) => {
                    issue.attempt = attempt;
                    issues.push(issue);
                }
            }
        }
        Err((issues, self.config.max_attempts))
    }
}
