//! Offline stand-in for a model: reads the target row back out of the
//! prompt and scores it with a fixed logistic rule on two CSF markers,
//! `p_ad = logistic(z(CSF_TAU) - z(CSF_ABETA))`.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{Backend, BackendConfig, CompletionResult, ConstraintMechanism};
use crate::dataset::{columns, Dataset, FeatureSchema, Label, SubjectRecord};
use crate::error::{Error, Result};
use crate::prompt::templates::{COT_SEED, INPUT_TAG, RESPONSE_TAG};
use crate::prompt::{parse_table, prompt_hash};

/// Location and scale for the two z-scored markers. A zero standard
/// deviation gives z = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockStats {
    pub tau_mean: f64,
    pub tau_sd: f64,
    pub abeta_mean: f64,
    pub abeta_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn z(value: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        (value - mean) / sd
    } else {
        0.0
    }
}

fn markers(schema: &FeatureSchema, s: &SubjectRecord) -> Result<(f64, f64)> {
    let get = |name: &str| -> Result<f64> {
        schema
            .index_of(name)
            .and_then(|i| s.values.get(i))
            .and_then(|v| v.numeric)
            .ok_or_else(|| Error::Precondition(format!("subject {} lacks numeric {name}", s.subject_id)))
    };
    Ok((get(columns::CSF_TAU)?, get(columns::CSF_ABETA)?))
}

impl MockStats {
    pub fn from_subjects<'a>(
        schema: &FeatureSchema,
        subjects: impl IntoIterator<Item = &'a SubjectRecord>,
    ) -> Result<Self> {
        let mut tau = Vec::new();
        let mut abeta = Vec::new();
        for s in subjects {
            let (t, a) = markers(schema, s)?;
            tau.push(t);
            abeta.push(a);
        }
        let (tau_mean, tau_sd) = mean_sd(&tau);
        let (abeta_mean, abeta_sd) = mean_sd(&abeta);
        Ok(MockStats {
            tau_mean,
            tau_sd,
            abeta_mean,
            abeta_sd,
        })
    }

    fn logit(&self, tau: f64, abeta: f64) -> f64 {
        z(tau, self.tau_mean, self.tau_sd) - z(abeta, self.abeta_mean, self.abeta_sd)
    }

    pub fn p_ad(&self, tau: f64, abeta: f64) -> f64 {
        1.0 / (1.0 + (-self.logit(tau, abeta)).exp())
    }

    /// `(ln p(CN), ln p(AD))`, computed without cancellation.
    pub fn log_probs(&self, tau: f64, abeta: f64) -> (f64, f64) {
        let x = self.logit(tau, abeta);
        let log_sigmoid = |v: f64| -> f64 {
            if v >= 0.0 {
                -(-v).exp().ln_1p()
            } else {
                v - v.exp().ln_1p()
            }
        };
        (log_sigmoid(-x), log_sigmoid(x))
    }
}

/// Scores a batch with z-scores taken from that same batch. The label is
/// AD exactly when `p_ad >= 0.5`.
pub fn mock_predict(schema: &FeatureSchema, batch: &[&SubjectRecord]) -> Result<Vec<(Label, f64)>> {
    let stats = MockStats::from_subjects(schema, batch.iter().copied())?;
    batch
        .iter()
        .map(|s| {
            let (tau, abeta) = markers(schema, s)?;
            let p = stats.p_ad(tau, abeta);
            Ok((Label::from_bool(p >= 0.5), p))
        })
        .collect()
}

pub struct MockBackend {
    cfg: BackendConfig,
    schema: FeatureSchema,
    stats: MockStats,
    calls: AtomicUsize,
    call_log: Option<Mutex<std::fs::File>>,
}

impl MockBackend {
    pub fn new(cfg: BackendConfig, schema: FeatureSchema, stats: MockStats) -> Result<Self> {
        let call_log = match &cfg.mock.call_log {
            Some(path) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )),
            None => None,
        };
        Ok(MockBackend {
            cfg,
            schema,
            stats,
            calls: AtomicUsize::new(0),
            call_log,
        })
    }

    pub fn from_dataset(cfg: BackendConfig, d: &Dataset) -> Result<Self> {
        let stats = MockStats::from_subjects(d.schema(), d.subjects())?;
        Self::new(cfg, d.schema().clone(), stats)
    }

    pub fn stats(&self) -> MockStats {
        self.stats
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn phrase_value(&self, line: &str, column: &str) -> Option<f64> {
        let spec = &self.schema.features()[self.schema.index_of(column)?];
        let needle = format!("{} of ", spec.phrase);
        let start = line.find(&needle)? + needle.len();
        let rest = &line[start..];
        let end = rest
            .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == 'e' || c == 'E'))
            .unwrap_or(rest.len());
        rest[..end].trim_end_matches('.').parse().ok()
    }

    /// Pulls the target's tau and A-beta values out of a rendered prompt.
    fn read_target(&self, prompt: &str) -> Option<(f64, f64)> {
        let body = prompt.split_once(&format!("{INPUT_TAG}\n"))?.1;
        let body = body.rsplit_once(&format!("\n{RESPONSE_TAG}"))?.0;
        let first = body.lines().next()?;
        if first.split_whitespace().any(|h| h == columns::CSF_TAU) {
            let (headers, rows) = parse_table(body).ok()?;
            let last = rows.last()?;
            let col = |name: &str| headers.iter().position(|h| h == name);
            let tau = last.get(col(columns::CSF_TAU)?)?.parse().ok()?;
            let abeta = last.get(col(columns::CSF_ABETA)?)?.parse().ok()?;
            Some((tau, abeta))
        } else {
            let last = body.lines().last()?;
            Some((
                self.phrase_value(last, columns::CSF_TAU)?,
                self.phrase_value(last, columns::CSF_ABETA)?,
            ))
        }
    }
}

impl Backend for MockBackend {
    fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn complete(&self, prompt: &str) -> Result<CompletionResult> {
        if prompt.is_empty() {
            return Err(Error::Precondition("empty prompt".into()));
        }
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if self.cfg.mock.abort_after_calls.is_some_and(|limit| n > limit) {
            log::error!("{}: injected abort on call {n}", self.cfg.backend_id);
            std::process::abort();
        }
        if let Some(log) = &self.call_log {
            let mut f = log.lock().unwrap();
            writeln!(f, "{}", prompt_hash(prompt)).map_err(|e| Error::io("<mock call log>", e))?;
            f.flush().map_err(|e| Error::io("<mock call log>", e))?;
        }
        let start = Instant::now();
        let Some((tau, abeta)) = self.read_target(prompt) else {
            return Ok(CompletionResult {
                text: "I cannot determine this.".into(),
                first_token_logprobs: BTreeMap::new(),
                finish_reason: "stop".into(),
                latency: start.elapsed().min(Duration::from_secs(1)),
                attempt_count: 1,
                mechanism: ConstraintMechanism::Mock,
                degraded: true,
            });
        };
        let (l0, l1) = self.stats.log_probs(tau, abeta);
        let digit = if l1 >= l0 { "1" } else { "0" };
        let latency = Duration::ZERO;
        if prompt.ends_with(COT_SEED) {
            return Ok(CompletionResult {
                text: format!(
                    ":\n\nThe CSF tau level is {tau} and the CSF A-beta42 level is {abeta}.\n\n**Answer: {digit}**"
                ),
                first_token_logprobs: BTreeMap::new(),
                finish_reason: "stop".into(),
                latency,
                attempt_count: 1,
                mechanism: ConstraintMechanism::Mock,
                degraded: true,
            });
        }
        let mut lp = BTreeMap::new();
        lp.insert("0".to_string(), l0);
        lp.insert("1".to_string(), l1);
        Ok(CompletionResult {
            text: digit.to_string(),
            first_token_logprobs: lp,
            finish_reason: "length".into(),
            latency,
            attempt_count: 1,
            mechanism: ConstraintMechanism::Mock,
            degraded: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_prompt, PromptFormat};
    use crate::synthetic;

    #[test]
    fn higher_tau_means_higher_p() {
        let d = synthetic::generate(3, 3, 5).unwrap();
        let tau = d.schema().index_of(columns::CSF_TAU).unwrap();
        let mut hi = d.subjects()[0].clone();
        let t = hi.values[tau].numeric.unwrap() + 50.0;
        hi.values[tau].numeric = Some(t);
        hi.subject_id = "hi".into();
        let lo = &d.subjects()[0];
        let stats = MockStats::from_subjects(d.schema(), d.subjects()).unwrap();
        let (lt, la) = markers(d.schema(), lo).unwrap();
        let (ht, ha) = markers(d.schema(), &hi).unwrap();
        assert!(stats.p_ad(ht, ha) > stats.p_ad(lt, la));
    }

    #[test]
    fn single_subject_batch_is_even_odds() {
        let d = synthetic::generate(1, 0, 5).unwrap();
        let out = mock_predict(d.schema(), &[&d.subjects()[0]]).unwrap();
        assert_eq!(out, vec![(Label::Ad, 0.5)]);
    }

    #[test]
    fn reads_target_from_every_format() {
        let d = synthetic::generate(6, 6, 5).unwrap();
        let s = d.subjects();
        let backend = MockBackend::from_dataset(BackendConfig::mock("m"), &d).unwrap();
        let (t, a) = markers(d.schema(), &s[0]).unwrap();
        let (l0, l1) = backend.stats().log_probs(t, a);
        for fmt in PromptFormat::STANDARD {
            let icl: Vec<_> = if fmt.is_few_shot() {
                s[1..4].iter().collect()
            } else {
                vec![]
            };
            let p = build_prompt(d.schema(), &s[0], &icl, fmt).unwrap();
            let r = backend.complete(&p.text).unwrap();
            assert_eq!(r.first_token_logprobs["0"], l0, "{fmt}");
            assert_eq!(r.first_token_logprobs["1"], l1, "{fmt}");
            let total = r.first_token_logprobs.values().map(|v| v.exp()).sum::<f64>();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(backend.calls(), 4);
    }

    #[test]
    fn cot_prompt_gets_reasoning_text() {
        let d = synthetic::generate(6, 6, 5).unwrap();
        let s = d.subjects();
        let backend = MockBackend::from_dataset(BackendConfig::mock("m"), &d).unwrap();
        let p = build_prompt(
            d.schema(),
            &s[0],
            &[&s[1]],
            PromptFormat::FEW_SHOT_TABULAR.with_cot(),
        )
        .unwrap();
        let r = backend.complete(&p.text).unwrap();
        assert!(r.text.contains("**Answer: "));
        assert!(r.first_token_logprobs.is_empty());
    }

    #[test]
    fn unreadable_prompt_yields_unparseable_text() {
        let d = synthetic::generate(2, 2, 5).unwrap();
        let backend = MockBackend::from_dataset(BackendConfig::mock("m"), &d).unwrap();
        let r = backend.complete("hello").unwrap();
        assert!(r.degraded);
        assert!(!r.text.contains('0') && !r.text.contains('1'));
    }
}
