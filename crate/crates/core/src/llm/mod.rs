//! Uniform completion interface over chat-completions servers, recorded
//! fixtures and the deterministic offline mock.

mod chat;
mod mock;
mod replay;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub use chat::{ChatBackend, ChatRequest};
pub use mock::{mock_predict, MockBackend, MockStats};
pub use replay::{Fixture, ReplayBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible `POST {endpoint_url}/chat/completions`.
    Chat,
    /// Replays fixtures captured from a chat backend.
    Replay,
    /// Deterministic offline predictor.
    Mock,
}

/// How the binary output constraint is requested from the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Nothing is sent; the answer is recovered by the response parser.
    ParserOnly,
    /// `logit_bias` on the token ids of `"0"` and `"1"`.
    LogitBias {
        zero_token_id: u32,
        one_token_id: u32,
        #[serde(default = "default_bias")]
        bias: f64,
    },
    /// Allow-list of token ids, for locally served models.
    AllowedTokenIds { ids: Vec<u32> },
    /// Choice-constrained decoding, for locally served models.
    GuidedChoice,
}

fn default_bias() -> f64 {
    100.0
}

/// Which constraint was actually in effect for a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMechanism {
    None,
    ParserOnly,
    LogitBias,
    AllowedTokens,
    GuidedChoice,
    Mock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockOptions {
    /// Appends one prompt hash per backend call, for cross-process audits.
    pub call_log: Option<PathBuf>,
    /// Aborts the process on the call after this many. Fault injection for
    /// resumption tests.
    pub abort_after_calls: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_top_k")]
    pub logprobs_top_k: u32,
    #[serde(default = "default_true")]
    pub constrain_binary: bool,
    #[serde(default = "default_constraint")]
    pub constraint: ConstraintMode,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Replay: fixture directory. Chat: when set, every successful response
    /// is recorded there.
    #[serde(default)]
    pub fixtures_dir: Option<PathBuf>,
    #[serde(default)]
    pub mock: MockOptions,
}

fn default_max_tokens() -> u32 {
    1
}
fn default_top_k() -> u32 {
    5
}
fn default_true() -> bool {
    true
}
fn default_constraint() -> ConstraintMode {
    ConstraintMode::ParserOnly
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

impl BackendConfig {
    pub fn mock(id: &str) -> Self {
        BackendConfig {
            backend_id: id.to_string(),
            kind: BackendKind::Mock,
            endpoint_url: None,
            model_name: "mock".to_string(),
            api_key_env: None,
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            logprobs_top_k: default_top_k(),
            constrain_binary: true,
            constraint: ConstraintMode::ParserOnly,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
            fixtures_dir: None,
            mock: MockOptions::default(),
        }
    }

    pub fn chat(id: &str, endpoint_url: &str, model_name: &str) -> Self {
        BackendConfig {
            kind: BackendKind::Chat,
            endpoint_url: Some(endpoint_url.to_string()),
            model_name: model_name.to_string(),
            ..Self::mock(id)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend_id.is_empty() {
            return Err(Error::Config("backend_id must not be empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "{}: temperature must be >= 0",
                self.backend_id
            )));
        }
        if self.logprobs_top_k < 2 {
            return Err(Error::Config(format!(
                "{}: logprobs_top_k must be >= 2 to score both labels",
                self.backend_id
            )));
        }
        match self.kind {
            BackendKind::Chat if self.endpoint_url.is_none() => Err(Error::Config(format!(
                "{}: chat backend needs endpoint_url",
                self.backend_id
            ))),
            BackendKind::Replay if self.fixtures_dir.is_none() => Err(Error::Config(format!(
                "{}: replay backend needs fixtures_dir",
                self.backend_id
            ))),
            _ => Ok(()),
        }
    }

    /// Canonical JSON of every field that can change a completion. Part of
    /// the prediction cache key.
    pub fn decode_params(&self) -> String {
        #[derive(Serialize)]
        struct Params<'a> {
            kind: BackendKind,
            model_name: &'a str,
            max_tokens: u32,
            temperature: f64,
            logprobs_top_k: u32,
            constrain_binary: bool,
            constraint: &'a ConstraintMode,
        }
        serde_json::to_string(&Params {
            kind: self.kind,
            model_name: &self.model_name,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            logprobs_top_k: self.logprobs_top_k,
            constrain_binary: self.constrain_binary,
            constraint: &self.constraint,
        })
        .expect("decode params serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Token string to log-probability for the first generated position.
    pub first_token_logprobs: BTreeMap<String, f64>,
    pub finish_reason: String,
    pub latency: Duration,
    pub attempt_count: usize,
    pub mechanism: ConstraintMechanism,
    /// The backend returned no log-probabilities.
    pub degraded: bool,
}

pub trait Backend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    fn id(&self) -> &str {
        &self.config().backend_id
    }

    fn complete(&self, prompt: &str) -> Result<CompletionResult>;
}

/// Builds the backend named by `cfg`. The mock derives its z-score
/// statistics from `dataset`.
pub fn build_backend(cfg: &BackendConfig, dataset: &Dataset) -> Result<Arc<dyn Backend>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Chat => Arc::new(ChatBackend::new(cfg.clone())?),
        BackendKind::Replay => Arc::new(ReplayBackend::new(cfg.clone())?),
        BackendKind::Mock => Arc::new(MockBackend::from_dataset(cfg.clone(), dataset)?),
    })
}
