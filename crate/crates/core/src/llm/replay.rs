use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::chat::{mechanism_for, parse_response};
use super::{Backend, BackendConfig, CompletionResult};
use crate::error::{Error, Result};
use crate::prompt::prompt_hash;

/// One captured exchange, stored as `<prompt_hash>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub prompt_hash: String,
    pub request: serde_json::Value,
    pub status: u16,
    /// Raw response body, byte-for-byte as received.
    pub body: String,
    pub latency_ms: u64,
}

impl Fixture {
    pub fn path_in(dir: &Path, prompt_hash: &str) -> PathBuf {
        dir.join(format!("{prompt_hash}.json"))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = Self::path_in(dir, &self.prompt_hash);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct ReplayBackend {
    cfg: BackendConfig,
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        let dir = cfg
            .fixtures_dir
            .clone()
            .ok_or_else(|| Error::Config(format!("{}: fixtures_dir is required", cfg.backend_id)))?;
        Ok(ReplayBackend { cfg, dir })
    }
}

impl Backend for ReplayBackend {
    fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn complete(&self, prompt: &str) -> Result<CompletionResult> {
        let hash = prompt_hash(prompt);
        let path = Fixture::path_in(&self.dir, &hash);
        if !path.exists() {
            return Err(Error::Backend {
                attempts: 1,
                message: format!("no fixture for prompt {hash}"),
            });
        }
        let fixture = Fixture::read(&path)?;
        if !(200..300).contains(&fixture.status) {
            return Err(Error::Backend {
                attempts: 1,
                message: format!("recorded HTTP {}", fixture.status),
            });
        }
        let parsed = parse_response(&fixture.body)?;
        Ok(CompletionResult {
            degraded: parsed.first_token_logprobs.is_empty(),
            text: parsed.text,
            first_token_logprobs: parsed.first_token_logprobs,
            finish_reason: parsed.finish_reason,
            latency: Duration::from_millis(fixture.latency_ms),
            attempt_count: 1,
            mechanism: mechanism_for(&self.cfg),
        })
    }
}
