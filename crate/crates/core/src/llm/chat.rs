use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::Fixture;
use super::{Backend, BackendConfig, CompletionResult, ConstraintMechanism, ConstraintMode};
use crate::error::{Error, Result};
use crate::prompt::prompt_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body for `POST /chat/completions`. Field order is fixed, so the
/// serialized body is a pure function of `(config, prompt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub logprobs: bool,
    pub top_logprobs: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logit_bias: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allowed_token_ids: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guided_choice: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    message: Option<ResponseMessage>,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

/// Text, first-position log-probabilities and finish reason pulled out of a
/// chat-completions response body.
pub(crate) struct ParsedResponse {
    pub text: String,
    pub first_token_logprobs: BTreeMap<String, f64>,
    pub finish_reason: String,
}

pub(crate) fn parse_response(body: &str) -> Result<ParsedResponse> {
    let resp: ChatResponse = serde_json::from_str(body)?;
    let choice = resp.choices.into_iter().next().ok_or_else(|| Error::Backend {
        attempts: 1,
        message: "response has no choices".into(),
    })?;
    let text = choice.message.and_then(|m| m.content).unwrap_or_default();
    let mut first_token_logprobs = BTreeMap::new();
    if let Some(first) = choice
        .logprobs
        .and_then(|l| l.content)
        .and_then(|c| c.into_iter().next())
    {
        for t in first.top_logprobs {
            if t.logprob.is_finite() {
                first_token_logprobs.insert(t.token, t.logprob.min(0.0));
            }
        }
        if first.logprob.is_finite() {
            first_token_logprobs
                .entry(first.token)
                .or_insert(first.logprob.min(0.0));
        }
    }
    Ok(ParsedResponse {
        text,
        first_token_logprobs,
        finish_reason: choice.finish_reason.unwrap_or_default(),
    })
}

pub(crate) fn mechanism_for(cfg: &BackendConfig) -> ConstraintMechanism {
    if !cfg.constrain_binary {
        return ConstraintMechanism::None;
    }
    match cfg.constraint {
        ConstraintMode::ParserOnly => ConstraintMechanism::ParserOnly,
        ConstraintMode::LogitBias { .. } => ConstraintMechanism::LogitBias,
        ConstraintMode::AllowedTokenIds { .. } => ConstraintMechanism::AllowedTokens,
        ConstraintMode::GuidedChoice => ConstraintMechanism::GuidedChoice,
    }
}

pub struct ChatBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
    url: String,
}

impl ChatBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        let base = cfg
            .endpoint_url
            .clone()
            .ok_or_else(|| Error::Config(format!("{}: endpoint_url is required", cfg.backend_id)))?;
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(ChatBackend { cfg, agent, url })
    }

    pub fn request(&self, prompt: &str) -> ChatRequest {
        let cfg = &self.cfg;
        let mut req = ChatRequest {
            model: cfg.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            max_tokens: cfg.max_tokens,
            temperature: cfg.temperature,
            logprobs: true,
            top_logprobs: cfg.logprobs_top_k,
            logit_bias: None,
            allowed_token_ids: None,
            guided_choice: None,
        };
        if cfg.constrain_binary {
            match &cfg.constraint {
                ConstraintMode::ParserOnly => {}
                ConstraintMode::LogitBias {
                    zero_token_id,
                    one_token_id,
                    bias,
                } => {
                    let mut m = BTreeMap::new();
                    m.insert(zero_token_id.to_string(), *bias);
                    m.insert(one_token_id.to_string(), *bias);
                    req.logit_bias = Some(m);
                }
                ConstraintMode::AllowedTokenIds { ids } => req.allowed_token_ids = Some(ids.clone()),
                ConstraintMode::GuidedChoice => req.guided_choice = Some(vec!["0".into(), "1".into()]),
            }
        }
        req
    }

    pub fn request_body(&self, prompt: &str) -> String {
        serde_json::to_string(&self.request(prompt)).expect("request serializes")
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let base = self.cfg.backoff_base_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let capped = base.min(self.cfg.timeout_ms as f64);
        let jitter: f64 = rand::rng().random_range(0.5..=1.0);
        Duration::from_millis((capped * jitter) as u64)
    }

    fn send_once(&self, body: &str) -> std::result::Result<(u16, String), String> {
        let mut req = self.agent.post(&self.url).content_type("application/json");
        if let Some(var) = &self.cfg.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }

    fn record(&self, prompt: &str, request: &str, status: u16, body: &str, latency: Duration) {
        let Some(dir) = &self.cfg.fixtures_dir else {
            return;
        };
        let fixture = Fixture {
            prompt_hash: prompt_hash(prompt),
            request: serde_json::from_str(request).unwrap_or(serde_json::Value::Null),
            status,
            body: body.to_string(),
            latency_ms: latency.as_millis() as u64,
        };
        if let Err(e) = fixture.write(dir) {
            log::warn!("{}: could not record fixture: {e}", self.cfg.backend_id);
        }
    }
}

impl Backend for ChatBackend {
    fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn complete(&self, prompt: &str) -> Result<CompletionResult> {
        if prompt.is_empty() {
            return Err(Error::Precondition("empty prompt".into()));
        }
        let body = self.request_body(prompt);
        let max_attempts = self.cfg.max_retries as usize + 1;
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            let start = Instant::now();
            match self.send_once(&body) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let latency = start.elapsed();
                    self.record(prompt, &body, status, &text, latency);
                    let parsed = parse_response(&text).map_err(|e| Error::Backend {
                        attempts: attempt,
                        message: format!("malformed response: {e}"),
                    })?;
                    log::debug!(
                        "{}: HTTP {status} after {attempt} attempt(s) in {latency:?}",
                        self.cfg.backend_id
                    );
                    return Ok(CompletionResult {
                        degraded: parsed.first_token_logprobs.is_empty(),
                        text: parsed.text,
                        first_token_logprobs: parsed.first_token_logprobs,
                        finish_reason: parsed.finish_reason,
                        latency,
                        attempt_count: attempt,
                        mechanism: mechanism_for(&self.cfg),
                    });
                }
                Ok((status, _)) if status == 429 || status >= 500 => {
                    last_error = format!("HTTP {status}");
                }
                Ok((status, _)) => {
                    return Err(Error::Config(format!(
                        "{}: HTTP {status} from {}",
                        self.cfg.backend_id, self.url
                    )));
                }
                Err(e) => last_error = e,
            }
            log::debug!(
                "{}: attempt {attempt}/{max_attempts} failed: {last_error}",
                self.cfg.backend_id
            );
            if attempt < max_attempts {
                std::thread::sleep(self.backoff(attempt));
            }
        }
        Err(Error::Backend {
            attempts: max_attempts,
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
      "id": "chatcmpl-1", "object": "chat.completion", "model": "m",
      "choices": [{
        "index": 0,
        "message": {"role": "assistant", "content": "1"},
        "finish_reason": "length",
        "logprobs": {"content": [{
          "token": "1", "logprob": -0.22314355,
          "top_logprobs": [
            {"token": "1", "logprob": -0.22314355},
            {"token": "0", "logprob": -1.60943791}
          ]
        }]}
      }]
    }"#;

    #[test]
    fn parses_first_token_logprobs() {
        let p = parse_response(SAMPLE).unwrap();
        assert_eq!(p.text, "1");
        assert_eq!(p.finish_reason, "length");
        assert_eq!(p.first_token_logprobs.len(), 2);
        assert!((p.first_token_logprobs["0"] - 0.2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn missing_logprobs_is_not_an_error() {
        let p = parse_response(r#"{"choices":[{"message":{"content":"0"}}]}"#).unwrap();
        assert!(p.first_token_logprobs.is_empty());
        assert!(parse_response(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn request_body_is_deterministic_and_carries_constraint() {
        let mut cfg = BackendConfig::chat("b", "http://127.0.0.1:1/v1/", "m");
        cfg.constraint = ConstraintMode::LogitBias {
            zero_token_id: 15,
            one_token_id: 16,
            bias: 100.0,
        };
        let b = ChatBackend::new(cfg.clone()).unwrap();
        assert_eq!(b.url, "http://127.0.0.1:1/v1/chat/completions");
        let body = b.request_body("hello");
        assert_eq!(body, b.request_body("hello"));
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["logit_bias"]["15"], 100.0);
        assert_eq!(v["logprobs"], true);
        assert_eq!(v["messages"][0]["content"], "hello");

        cfg.constrain_binary = false;
        let b = ChatBackend::new(cfg).unwrap();
        let v: serde_json::Value = serde_json::from_str(&b.request_body("hello")).unwrap();
        assert!(v.get("logit_bias").is_none());
        assert_eq!(mechanism_for(b.config()), ConstraintMechanism::None);
    }

    #[test]
    fn guided_and_allow_list_modes() {
        let mut cfg = BackendConfig::chat("b", "http://x/v1", "m");
        cfg.constraint = ConstraintMode::GuidedChoice;
        let v: serde_json::Value =
            serde_json::from_str(&ChatBackend::new(cfg.clone()).unwrap().request_body("p")).unwrap();
        assert_eq!(v["guided_choice"], serde_json::json!(["0", "1"]));
        cfg.constraint = ConstraintMode::AllowedTokenIds { ids: vec![15, 16] };
        let v: serde_json::Value =
            serde_json::from_str(&ChatBackend::new(cfg).unwrap().request_body("p")).unwrap();
        assert_eq!(v["allowed_token_ids"], serde_json::json!([15, 16]));
    }
}
