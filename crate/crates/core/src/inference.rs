//! Completions to prediction records: binary scoring, CoT answer parsing
//! and the content-addressed result cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{LazyLock, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::llm::{CompletionResult, ConstraintMechanism};

/// Gap, in nats, assigned to a label whose logprob fell outside the top-k.
pub const MISSING_LOGPROB_GAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScoreSource {
    Logprobs,
    HardLabel,
    CotParse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub pred_label: Label,
    pub p_ad: f64,
    pub source: ScoreSource,
    /// One of the two label logprobs was imputed.
    pub imputed: bool,
}

impl Score {
    fn hard(label: Label, source: ScoreSource) -> Self {
        Score {
            pred_label: label,
            p_ad: label.as_u8() as f64,
            source,
            imputed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub target_id: String,
    pub true_label: Label,
    pub pred_label: Label,
    pub p_ad: f64,
    pub score_source: ScoreSource,
    pub raw_text: String,
    pub prompt_hash: String,
    pub backend_id: String,
    pub seed: u64,
    #[serde(default)]
    pub imputed_logprob: bool,
    pub mechanism: ConstraintMechanism,
}

fn logsumexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Collapses token variants such as `" 1"` and `"1"` into one logprob per
/// label.
fn label_logprobs(lp: &BTreeMap<String, f64>) -> (Option<f64>, Option<f64>) {
    let mut zero = None;
    let mut one = None;
    for (tok, &v) in lp {
        let slot = match tok.trim() {
            "0" => &mut zero,
            "1" => &mut one,
            _ => continue,
        };
        *slot = Some(match *slot {
            Some(prev) => logsumexp(prev, v),
            None => v,
        });
    }
    (zero, one)
}

/// Two-way softmax over the first-token logprobs of `"0"` and `"1"`, with
/// a hard-label fallback on the first binary digit of the text.
pub fn score_binary(result: &CompletionResult) -> Result<Score> {
    let (l0, l1) = label_logprobs(&result.first_token_logprobs);
    let (l0, l1, imputed) = match (l0, l1) {
        (Some(a), Some(b)) => (a, b, false),
        (Some(a), None) => (a, a - MISSING_LOGPROB_GAP, true),
        (None, Some(b)) => (b - MISSING_LOGPROB_GAP, b, true),
        (None, None) => {
            return match result.text.chars().find(|c| *c == '0' || *c == '1') {
                Some(c) => Ok(Score::hard(Label::from_bool(c == '1'), ScoreSource::HardLabel)),
                None => Err(Error::Unparseable),
            }
        }
    };
    // logistic(l1 - l0), shift invariant by construction
    let d = l1 - l0;
    let p_ad = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    };
    Ok(Score {
        pred_label: Label::from_bool(p_ad >= 0.5),
        p_ad,
        source: ScoreSource::Logprobs,
        imputed,
    })
}

static COT_PATTERNS: LazyLock<[Regex; 3]> = LazyLock::new(|| {
    [
        Regex::new(r"(?i)answer\s*:\s*([01])\b").unwrap(),
        Regex::new(r"(?i)answer\s*\(\s*1\s+or\s+0\s*\)[^01]{0,40}?([01])\b").unwrap(),
        Regex::new(r"([01])[^\w]*$").unwrap(),
    ]
});

/// The last stated binary answer in a reasoning trace, markdown emphasis
/// ignored.
pub fn extract_cot_answer(text: &str) -> Option<Label> {
    let plain: String = text.chars().filter(|c| *c != '*' && *c != '_').collect();
    let plain = plain.trim_end();
    COT_PATTERNS
        .iter()
        .filter_map(|re| re.captures_iter(plain).last())
        .filter_map(|c| c.get(1))
        .max_by_key(|m| m.end())
        .map(|m| Label::from_bool(m.as_str() == "1"))
}

/// Scores a completion for a prompt that did or did not request reasoning.
pub fn score_completion(result: &CompletionResult, cot: bool) -> Result<Score> {
    if cot {
        extract_cot_answer(&result.text)
            .map(|l| Score::hard(l, ScoreSource::CotParse))
            .ok_or(Error::Unparseable)
    } else {
        score_binary(result)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CachedOutcome {
    Scored(PredictionRecord),
    Unparseable {
        target_id: String,
        prompt_hash: String,
        backend_id: String,
        raw_text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(prompt_hash: &str, backend_id: &str, decode_params: &str) -> Self {
        let mut h = Sha256::new();
        for part in [prompt_hash, backend_id, decode_params] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// One JSON file per key. Reads are lock-free; writes go through a mutex
/// and an atomic rename so a reader never sees a partial entry.
pub struct PredictionCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl PredictionCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(PredictionCache {
            dir,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedOutcome> {
        let path = self.path(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache entry {} unreadable, treating as miss: {e}", path.display());
                return None;
            }
        };
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("cache entry {} corrupt, treating as miss: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, outcome: &CachedOutcome) -> Result<()> {
        let path = self.path(key);
        let parent = path.parent().expect("cache entries live in a subdirectory");
        let body = serde_json::to_string(outcome)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = parent.join(format!(".{}.{}.{n}.tmp", key.0, std::process::id()));
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}
