//! Experiment orchestration: the (backend × format × seed) matrix, the k
//! and format-transfer ablations, fine-tune export and report emission.
//!
//! A run directory holds `manifest.json`, `splits/`, `prompts/`,
//! `results/*.jsonl`, `cache/` and `report.{csv,txt,json}`. Every backend
//! answer is cached before it is used, so a killed run resumes without
//! repeating any completed call.

mod config;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{load_dataset, DatasetConfig, EvalSplit, RunConfig, SyntheticSource, DEFAULT_K_GRID};
pub use manifest::{CellKind, CellState, CellStatus, Manifest, TOOL_VERSION};

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::inference::{score_completion, CacheKey, CachedOutcome, PredictionCache, PredictionRecord};
use crate::llm::{build_backend, Backend};
use crate::metrics::{aggregate, summarize, Metric, MetricsCell, MetricsReport, Summary};
use crate::parallel::Executor;
use crate::prompt::templates::TEMPLATE_VERSION;
use crate::prompt::{build_prompt, export_finetune_jsonl, write_prompt_dump, PromptFormat, RenderedPrompt};
use crate::splitter::{make_split, sample_icl_replicate, verify_disjoint, Bucket, SplitPlan};
use crate::stats::{compare_models, Comparison};
use manifest::write_atomic;

/// Renders the prompt for every subject in `targets`, ICL drawn from
/// `pool`. Few-shot draws depend on `(seed, pool, target, replicate)` only.
pub fn render_prompts(
    d: &Dataset,
    plan: &SplitPlan,
    targets: Bucket,
    format: PromptFormat,
    k: usize,
    replicate: u32,
) -> Result<Vec<(RenderedPrompt, Label)>> {
    let pool = targets
        .icl_pool()
        .ok_or_else(|| Error::Precondition(format!("{targets} is itself an ICL pool")))?;
    plan.members(targets)
        .iter()
        .map(|id| {
            let subject = d
                .get(id)
                .ok_or_else(|| Error::Integrity(format!("split names unknown subject {id}")))?;
            let label = subject
                .label
                .ok_or_else(|| Error::Integrity(format!("target {id} has no label")))?;
            let icl = if format.is_few_shot() {
                sample_icl_replicate(plan, d, pool, k, id, plan.seed, replicate)?
            } else {
                Vec::new()
            };
            Ok((build_prompt(d.schema(), subject, &icl, format)?, label))
        })
        .collect()
}

fn digest_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSpec {
    pub label: String,
    pub kind: CellKind,
    pub backend: usize,
    pub format: PromptFormat,
    pub seed: u64,
    pub k: usize,
    pub eval_split: EvalSplit,
    pub train_format: Option<PromptFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub label: String,
    pub cell: MetricsCell,
    pub reused: bool,
    pub backend_calls: usize,
    pub unparseable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComparisonEntry {
    Done(Comparison),
    Skipped {
        name_a: String,
        name_b: String,
        format: PromptFormat,
        metric: Metric,
        reason: String,
    },
}

/// Everything written to `report.{csv,txt,json}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: MetricsReport,
    pub comparisons: Vec<ComparisonEntry>,
    pub failed_cells: Vec<FailedCell>,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = self.metrics.to_text();
        if !self.comparisons.is_empty() {
            out.push_str("\nPaired comparisons (a - b, per seed)\n");
            for c in &self.comparisons {
                match c {
                    ComparisonEntry::Done(c) => {
                        out.push_str(&c.summary_line());
                        out.push('\n');
                        for n in &c.notes {
                            out.push_str(&format!("  note: {n}\n"));
                        }
                    }
                    ComparisonEntry::Skipped {
                        name_a,
                        name_b,
                        format,
                        metric,
                        reason,
                    } => out.push_str(&format!(
                        "{format} {}: {name_a} - {name_b}: not tested ({reason})\n",
                        metric.name()
                    )),
                }
            }
        }
        if !self.failed_cells.is_empty() {
            out.push_str("\nFailed cells\n");
            for f in &self.failed_cells {
                out.push_str(&format!("{}: {}\n", f.label, f.error));
            }
        }
        out
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join("report.csv"), self.metrics.to_csv()?.as_bytes())?;
        write_atomic(&run_dir.join("report.txt"), self.to_text().as_bytes())?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(&run_dir.join("report.json"), json.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: RunReport,
    pub computed: Vec<String>,
    pub reused: Vec<String>,
    pub failed: Vec<FailedCell>,
    pub backend_calls: usize,
    pub unparseable: usize,
}

impl RunOutcome {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }
}

fn comparisons(cfg: &RunConfig, report: &MetricsReport) -> Vec<ComparisonEntry> {
    let ids = cfg.backend_ids();
    let mut out = Vec::new();
    for &format in &cfg.formats {
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let metric = Metric::Auroc;
                out.push(match compare_models(report, a, b, format, metric) {
                    Ok(c) => ComparisonEntry::Done(c),
                    Err(e) => ComparisonEntry::Skipped {
                        name_a: a.clone(),
                        name_b: b.clone(),
                        format,
                        metric,
                        reason: e.to_string(),
                    },
                });
            }
        }
    }
    out
}

/// An opened run directory: dataset, split plans, backends, cache and
/// manifest. Cells run one after another; targets within a cell run on the
/// executor.
pub struct Session {
    cfg: RunConfig,
    dataset: Dataset,
    dataset_digest: String,
    plans: BTreeMap<u64, SplitPlan>,
    backends: Vec<Arc<dyn Backend>>,
    cache: PredictionCache,
    executor: Executor,
    manifest: Manifest,
    calls: AtomicUsize,
}

impl Session {
    pub fn open(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (dataset, dataset_digest) = load_dataset(&cfg.dataset)?;
        let run_dir = cfg.run_dir.clone();
        for sub in ["splits", "prompts", "results"] {
            let p = run_dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut plans = BTreeMap::new();
        for &seed in &cfg.seeds {
            let plan = make_split(&dataset, &cfg.split_config(seed))?;
            let check = verify_disjoint(&plan, &dataset);
            if !check.passed() {
                return Err(Error::Integrity(format!(
                    "split for seed {seed} is not a partition: {check:?}"
                )));
            }
            write_atomic(
                &run_dir.join("splits").join(format!("seed_{seed}.json")),
                plan.to_json().as_bytes(),
            )?;
            plans.insert(seed, plan);
        }
        let backends = cfg
            .backends
            .iter()
            .map(|b| build_backend(b, &dataset))
            .collect::<Result<Vec<_>>>()?;
        let cache = PredictionCache::open(run_dir.join("cache"))?;
        let executor = Executor::with_limit(cfg.concurrency_limit)?;

        let manifest_path = run_dir.join("manifest.json");
        let mut manifest = Manifest {
            tool_version: TOOL_VERSION.to_string(),
            template_version: TEMPLATE_VERSION.to_string(),
            config: cfg.clone(),
            dataset_digest: dataset_digest.clone(),
            provenance: dataset.provenance().clone(),
            split_digests: plans.iter().map(|(s, p)| (*s, p.digest())).collect(),
            cells: BTreeMap::new(),
        };
        if manifest_path.exists() {
            match Manifest::read(&manifest_path) {
                // cells carry their own fingerprints, so stale ones are
                // simply recomputed
                Ok(old) => manifest.cells = old.cells,
                Err(e) => log::warn!("ignoring unreadable manifest: {e}"),
            }
        }
        manifest.write(&manifest_path)?;
        Ok(Session {
            cfg,
            dataset,
            dataset_digest,
            plans,
            backends,
            cache,
            executor,
            manifest,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn plan(&self, seed: u64) -> Result<&SplitPlan> {
        self.plans
            .get(&seed)
            .ok_or_else(|| Error::Config(format!("seed {seed} is not configured")))
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn run_dir(&self) -> &Path {
        &self.cfg.run_dir
    }

    /// Backend calls made by this session (cache misses).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn backend_index(&self, id: &str) -> Result<usize> {
        self.backends
            .iter()
            .position(|b| b.id() == id)
            .ok_or_else(|| Error::Config(format!("no backend named {id:?}")))
    }

    fn smallest_pool(&self, eval: EvalSplit) -> usize {
        let pool = eval.bucket().icl_pool().expect("eval buckets have pools");
        self.plans
            .values()
            .map(|p| p.members(pool).len())
            .min()
            .unwrap_or(0)
    }

    fn check_k(&self, k: usize, eval: EvalSplit) -> Result<()> {
        let smallest = self.smallest_pool(eval);
        if k > smallest {
            return Err(Error::Config(format!(
                "k = {k} exceeds the smallest {} ICL pool ({smallest})",
                eval.bucket()
            )));
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        self.manifest.write(&self.run_dir().join("manifest.json"))
    }

    fn fingerprint(&self, spec: &CellSpec) -> String {
        let backend = &self.cfg.backends[spec.backend];
        digest_parts(&[
            TEMPLATE_VERSION,
            &self.dataset_digest,
            &self.manifest.split_digests[&spec.seed],
            &backend.backend_id,
            &backend.decode_params(),
            &spec.format.to_string(),
            &spec.k.to_string(),
            spec.eval_split.bucket().name(),
        ])
    }

    fn results_path(&self, label: &str) -> PathBuf {
        self.run_dir().join("results").join(format!("{label}.jsonl"))
    }

    fn unparseable_path(&self, label: &str) -> PathBuf {
        self.run_dir()
            .join("results")
            .join(format!("{label}.unparseable.jsonl"))
    }

    fn load_results(&self, label: &str, expected: usize) -> Option<Vec<PredictionRecord>> {
        let file = std::fs::File::open(self.results_path(label)).ok()?;
        let mut out = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            out.push(serde_json::from_str(&line.ok()?).ok()?);
        }
        (out.len() == expected).then_some(out)
    }

    /// Runs one cell, cache first. A cell whose manifest entry is complete
    /// and whose results file is intact is reused without touching the
    /// backend or the cache.
    pub fn run_cell(&mut self, spec: &CellSpec) -> Result<CellResult> {
        let fingerprint = self.fingerprint(spec);
        let backend = Arc::clone(&self.backends[spec.backend]);
        let backend_id = backend.id().to_string();
        let model = match spec.train_format {
            Some(t) => format!("{backend_id} [tuned on {t}]"),
            None => backend_id.clone(),
        };

        if let Some(st) = self.manifest.cells.get(&spec.label) {
            if st.state == CellState::Computed && st.fingerprint == fingerprint {
                if let Some(records) = self.load_results(&spec.label, st.scored) {
                    let cell =
                        MetricsCell::compute(&model, spec.format, spec.seed, &records, st.unparseable)?;
                    log::info!("{}: reused {} stored predictions", spec.label, records.len());
                    return Ok(CellResult {
                        label: spec.label.clone(),
                        cell,
                        reused: true,
                        backend_calls: 0,
                        unparseable: st.unparseable,
                    });
                }
            }
        }

        let status = CellStatus {
            kind: spec.kind,
            backend_id: backend_id.clone(),
            format: spec.format,
            seed: spec.seed,
            k: spec.k,
            eval_split: spec.eval_split,
            train_format: spec.train_format,
            fingerprint,
            state: CellState::Pending,
            scored: 0,
            unparseable: 0,
            error: None,
        };
        self.manifest.cells.insert(spec.label.clone(), status);
        self.write_manifest()?;

        match self.compute_cell(spec, &*backend, &model) {
            Ok(result) => {
                let st = self.manifest.cells.get_mut(&spec.label).expect("inserted above");
                st.state = CellState::Computed;
                st.scored = result.cell.n;
                st.unparseable = result.unparseable;
                self.write_manifest()?;
                Ok(result)
            }
            Err(e) => {
                let st = self.manifest.cells.get_mut(&spec.label).expect("inserted above");
                st.state = CellState::Failed;
                st.error = Some(e.to_string());
                self.write_manifest()?;
                Err(e)
            }
        }
    }

    fn compute_cell(&self, spec: &CellSpec, backend: &dyn Backend, model: &str) -> Result<CellResult> {
        let plan = self.plan(spec.seed)?;
        let eval = spec.eval_split.bucket();
        let prompts = render_prompts(&self.dataset, plan, eval, spec.format, spec.k, 0)?;

        // no ICL subject may ever be scored
        for (p, _) in &prompts {
            let bucket = plan.bucket_of(&p.target_id);
            if bucket.is_none_or(Bucket::is_icl_pool) {
                return Err(Error::Integrity(format!(
                    "target {} is in {bucket:?}, not an evaluation split",
                    p.target_id
                )));
            }
            if p.icl_ids.iter().any(|id| plan.bucket_of(id) != eval.icl_pool()) {
                return Err(Error::Integrity(format!(
                    "ICL example for {} drawn outside {:?}",
                    p.target_id,
                    eval.icl_pool()
                )));
            }
        }

        let dump_path = self.run_dir().join("prompts").join(format!(
            "{}__k{}__{}__s{}.jsonl",
            spec.format,
            spec.k,
            eval.name(),
            spec.seed
        ));
        let rendered: Vec<RenderedPrompt> = prompts.iter().map(|(p, _)| p.clone()).collect();
        let mut dump = Vec::new();
        write_prompt_dump(&rendered, &mut dump)?;
        write_atomic(&dump_path, &dump)?;

        let results_path = self.results_path(&spec.label);
        let results = Mutex::new(std::io::BufWriter::new(
            std::fs::File::create(&results_path).map_err(|e| Error::io(&results_path, e))?,
        ));
        let bad_path = self.unparseable_path(&spec.label);
        let _ = std::fs::remove_file(&bad_path);
        let bad = Mutex::new(None::<std::fs::File>);

        let decode = self.cfg.backends[spec.backend].decode_params();
        let calls = AtomicUsize::new(0);
        let outcomes = self
            .executor
            .map(&prompts, |(prompt, label)| -> Result<CachedOutcome> {
                let hash = prompt.hash();
                let key = CacheKey::new(&hash, backend.id(), &decode);
                let outcome = match self.cache.get(&key) {
                    Some(CachedOutcome::Scored(mut r)) => {
                        r.target_id.clone_from(&prompt.target_id);
                        r.true_label = *label;
                        r.seed = spec.seed;
                        CachedOutcome::Scored(r)
                    }
                    Some(CachedOutcome::Unparseable { raw_text, .. }) => CachedOutcome::Unparseable {
                        target_id: prompt.target_id.clone(),
                        prompt_hash: hash,
                        backend_id: backend.id().to_string(),
                        raw_text,
                    },
                    None => {
                        calls.fetch_add(1, Ordering::SeqCst);
                        let completion = backend.complete(&prompt.text)?;
                        let outcome = match score_completion(&completion, prompt.format.cot) {
                            Ok(score) => CachedOutcome::Scored(PredictionRecord {
                                target_id: prompt.target_id.clone(),
                                true_label: *label,
                                pred_label: score.pred_label,
                                p_ad: score.p_ad,
                                score_source: score.source,
                                raw_text: completion.text,
                                prompt_hash: hash,
                                backend_id: backend.id().to_string(),
                                seed: spec.seed,
                                imputed_logprob: score.imputed,
                                mechanism: completion.mechanism,
                            }),
                            Err(Error::Unparseable) => CachedOutcome::Unparseable {
                                target_id: prompt.target_id.clone(),
                                prompt_hash: hash,
                                backend_id: backend.id().to_string(),
                                raw_text: completion.text,
                            },
                            Err(e) => return Err(e),
                        };
                        self.cache.put(&key, &outcome)?;
                        outcome
                    }
                };
                // completion order; metrics never read this file's order
                match &outcome {
                    CachedOutcome::Scored(r) => {
                        let mut w = results.lock().unwrap_or_else(|p| p.into_inner());
                        serde_json::to_writer(&mut *w, r)?;
                        w.write_all(b"\n").map_err(|e| Error::io(&results_path, e))?;
                        w.flush().map_err(|e| Error::io(&results_path, e))?;
                    }
                    CachedOutcome::Unparseable { .. } => {
                        let mut guard = bad.lock().unwrap_or_else(|p| p.into_inner());
                        if guard.is_none() {
                            *guard =
                                Some(std::fs::File::create(&bad_path).map_err(|e| Error::io(&bad_path, e))?);
                        }
                        let f = guard.as_mut().expect("opened above");
                        serde_json::to_writer(&mut *f, &outcome)?;
                        f.write_all(b"\n").map_err(|e| Error::io(&bad_path, e))?;
                    }
                }
                Ok(outcome)
            });
        let n_calls = calls.load(Ordering::SeqCst);
        self.calls.fetch_add(n_calls, Ordering::SeqCst);

        let mut records = Vec::with_capacity(outcomes.len());
        let mut unparseable = 0;
        let mut first_error = None;
        for o in outcomes {
            match o {
                Ok(CachedOutcome::Scored(r)) => records.push(r),
                Ok(CachedOutcome::Unparseable { .. }) => unparseable += 1,
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        if unparseable > 0 {
            log::warn!("{}: {unparseable} unparseable predictions excluded", spec.label);
        }
        let cell = MetricsCell::compute(model, spec.format, spec.seed, &records, unparseable)?;
        log::info!(
            "{}: {} scored, {n_calls} backend calls, AUROC {:.4}",
            spec.label,
            records.len(),
            cell.auroc
        );
        Ok(CellResult {
            label: spec.label.clone(),
            cell,
            reused: false,
            backend_calls: n_calls,
            unparseable,
        })
    }

    fn matrix_specs(&self) -> Vec<CellSpec> {
        let mut specs = Vec::new();
        for (bi, b) in self.cfg.backends.iter().enumerate() {
            for &format in &self.cfg.formats {
                for &seed in &self.cfg.seeds {
                    specs.push(CellSpec {
                        label: format!("matrix__{}__{format}__s{seed}", b.backend_id),
                        kind: CellKind::Matrix,
                        backend: bi,
                        format,
                        seed,
                        k: if format.is_few_shot() { self.cfg.k } else { 0 },
                        eval_split: self.cfg.eval_split,
                        train_format: None,
                    });
                }
            }
        }
        specs
    }

    /// Every configured (backend × format × seed) cell, then the report.
    /// A failing cell is recorded and the run carries on.
    pub fn run_matrix(&mut self) -> Result<RunOutcome> {
        if self.cfg.formats.iter().any(PromptFormat::is_few_shot) {
            self.check_k(self.cfg.k, self.cfg.eval_split)?;
        }
        let mut cells = Vec::new();
        let (mut computed, mut reused, mut failed) = (Vec::new(), Vec::new(), Vec::new());
        let mut unparseable = 0;
        let calls_before = self.backend_calls();
        for spec in self.matrix_specs() {
            match self.run_cell(&spec) {
                Ok(r) => {
                    unparseable += r.unparseable;
                    if r.reused {
                        reused.push(r.label);
                    } else {
                        computed.push(r.label);
                    }
                    cells.push(r.cell);
                }
                Err(e @ (Error::Interrupted(_) | Error::Io { .. })) => return Err(e),
                Err(e) => {
                    log::error!("{} failed: {e}", spec.label);
                    failed.push(FailedCell {
                        label: spec.label.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let metrics = aggregate(&cells, &self.cfg.backend_ids(), &self.cfg.seeds, self.cfg.k);
        let report = RunReport {
            comparisons: comparisons(&self.cfg, &metrics),
            metrics,
            failed_cells: failed.clone(),
        };
        report.write(self.run_dir())?;
        Ok(RunOutcome {
            report,
            computed,
            reused,
            failed,
            backend_calls: self.backend_calls() - calls_before,
            unparseable,
        })
    }

    /// Few-shot tabular over `k_grid` on the validation split, for every
    /// backend. A k larger than the validation ICL pool is skipped.
    pub fn run_k_ablation(&mut self) -> Result<Vec<KSeries>> {
        let format = PromptFormat::FEW_SHOT_TABULAR;
        if !self.cfg.formats.contains(&format) {
            return Err(Error::Config(format!("k ablation needs {format} among formats")));
        }
        let eval = EvalSplit::Val;
        let smallest = self.smallest_pool(eval);
        let mut all = Vec::new();
        for bi in 0..self.backends.len() {
            let backend_id = self.cfg.backends[bi].backend_id.clone();
            let mut series = KSeries {
                backend_id: backend_id.clone(),
                format,
                eval_split: eval,
                points: Vec::new(),
                skipped: Vec::new(),
                failed: Vec::new(),
            };
            for &k in &self.cfg.k_grid.clone() {
                if k > smallest {
                    log::warn!("k = {k} exceeds the validation ICL pool ({smallest}); skipped");
                    series.skipped.push(k);
                    continue;
                }
                let mut auroc = BTreeMap::new();
                for &seed in &self.cfg.seeds.clone() {
                    let spec = CellSpec {
                        label: format!("kablation__{backend_id}__k{k}__s{seed}"),
                        kind: CellKind::KAblation,
                        backend: bi,
                        format,
                        seed,
                        k,
                        eval_split: eval,
                        train_format: None,
                    };
                    match self.run_cell(&spec) {
                        Ok(r) => {
                            auroc.insert(seed, r.cell.auroc);
                        }
                        Err(e @ (Error::Interrupted(_) | Error::Io { .. })) => return Err(e),
                        Err(e) => series.failed.push(FailedCell {
                            label: spec.label,
                            error: e.to_string(),
                        }),
                    }
                }
                let values: Vec<f64> = auroc.values().copied().collect();
                let summary = summarize(&values);
                series.points.push(KPoint { k, auroc, summary });
            }
            all.push(series);
        }
        let mut json = serde_json::to_string_pretty(&all)?;
        json.push('\n');
        write_atomic(&self.run_dir().join("ablation_k.json"), json.as_bytes())?;
        Ok(all)
    }

    /// Scores one backend, tuned on `train_format`, on prompts in
    /// `eval_format` for every seed.
    pub fn run_transfer_ablation(
        &mut self,
        backend_id: &str,
        train_format: PromptFormat,
        eval_format: PromptFormat,
    ) -> Result<TransferReport> {
        let bi = self.backend_index(backend_id)?;
        let eval = self.cfg.eval_split;
        let k = if eval_format.is_few_shot() { self.cfg.k } else { 0 };
        if eval_format.is_few_shot() {
            self.check_k(k, eval)?;
        }
        let mut cells = Vec::new();
        let mut failed = Vec::new();
        for &seed in &self.cfg.seeds.clone() {
            let spec = CellSpec {
                label: format!("transfer__{backend_id}__{train_format}__{eval_format}__s{seed}"),
                kind: CellKind::Transfer,
                backend: bi,
                format: eval_format,
                seed,
                k,
                eval_split: eval,
                train_format: Some(train_format),
            };
            match self.run_cell(&spec) {
                Ok(r) => cells.push(r.cell),
                Err(e @ (Error::Interrupted(_) | Error::Io { .. })) => return Err(e),
                Err(e) => failed.push(FailedCell {
                    label: spec.label,
                    error: e.to_string(),
                }),
            }
        }
        let summary = |m: Metric| summarize(&cells.iter().map(|c| c.metric(m)).collect::<Vec<_>>());
        let report = TransferReport {
            backend_id: backend_id.to_string(),
            train_format,
            eval_format,
            auroc: summary(Metric::Auroc),
            accuracy: summary(Metric::Accuracy),
            cells,
            failed,
        };
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_atomic(
            &self.run_dir().join(format!(
                "ablation_transfer__{backend_id}__{train_format}__{eval_format}.json"
            )),
            json.as_bytes(),
        )?;
        Ok(report)
    }

    /// Writes training prompts for each format and seed into `out_dir`: one
    /// line per training target and ICL resampling, examples from the
    /// training ICL pool.
    pub fn export_finetune(
        &self,
        formats: &[PromptFormat],
        seeds: &[u64],
        out_dir: &Path,
    ) -> Result<Vec<(PathBuf, usize)>> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let k = self.cfg.k;
        if formats.iter().any(PromptFormat::is_few_shot) {
            let smallest = self
                .plans
                .values()
                .map(|p| p.members(Bucket::TrainIcl).len())
                .min()
                .unwrap_or(0);
            if k > smallest {
                return Err(Error::Config(format!(
                    "k = {k} exceeds the smallest TRAIN_ICL pool ({smallest})"
                )));
            }
        }
        let mut written = Vec::new();
        for &format in formats {
            if format.cot {
                return Err(Error::Precondition(format!(
                    "cannot export {format}: reasoning prompts carry no label completion"
                )));
            }
            let replicates = if format.is_few_shot() {
                self.cfg.finetune_multiplier
            } else {
                1
            };
            for &seed in seeds {
                let plan = self.plan(seed)?;
                let mut pairs = Vec::new();
                for r in 0..replicates {
                    let k = if format.is_few_shot() { k } else { 0 };
                    pairs.extend(render_prompts(&self.dataset, plan, Bucket::Train, format, k, r)?);
                }
                let path = out_dir.join(format!("{format}__s{seed}.jsonl"));
                let n = export_finetune_jsonl(&pairs, &path)?;
                written.push((path, n));
            }
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    /// AUROC per seed.
    pub auroc: BTreeMap<u64, f64>,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSeries {
    pub backend_id: String,
    pub format: PromptFormat,
    pub eval_split: EvalSplit,
    pub points: Vec<KPoint>,
    pub skipped: Vec<usize>,
    pub failed: Vec<FailedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub backend_id: String,
    pub train_format: PromptFormat,
    pub eval_format: PromptFormat,
    pub auroc: Option<Summary>,
    pub accuracy: Option<Summary>,
    pub cells: Vec<MetricsCell>,
    pub failed: Vec<FailedCell>,
}

/// Recomputes the matrix report of `run_dir` from stored results without
/// contacting any backend.
pub fn rebuild_report(run_dir: &Path) -> Result<RunReport> {
    let manifest = Manifest::read(&run_dir.join("manifest.json"))?;
    let cfg = &manifest.config;
    let mut cells = Vec::new();
    let mut failed = Vec::new();
    for (label, st) in &manifest.cells {
        if st.kind != CellKind::Matrix {
            continue;
        }
        if st.state != CellState::Computed {
            failed.push(FailedCell {
                label: label.clone(),
                error: st.error.clone().unwrap_or_else(|| "not completed".into()),
            });
            continue;
        }
        let records = read_records(&run_dir.join("results").join(format!("{label}.jsonl")))?;
        cells.push(MetricsCell::compute(
            &st.backend_id,
            st.format,
            st.seed,
            &records,
            st.unparseable,
        )?);
    }
    let metrics = aggregate(&cells, &cfg.backend_ids(), &cfg.seeds, cfg.k);
    let report = RunReport {
        comparisons: comparisons(cfg, &metrics),
        metrics,
        failed_cells: failed,
    };
    report.write(run_dir)?;
    Ok(report)
}

/// Reads a results file, one prediction record per line.
pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Metrics for a set of results files, grouped by (backend, seed) as
/// recorded in the records themselves. The format is not stored per record,
/// so the caller names it.
pub fn metrics_from_results(paths: &[PathBuf], format: PromptFormat) -> Result<Vec<MetricsCell>> {
    let mut groups: BTreeMap<(String, u64), Vec<PredictionRecord>> = BTreeMap::new();
    for p in paths {
        for r in read_records(p)? {
            groups.entry((r.backend_id.clone(), r.seed)).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((backend, seed), records)| {
            let ids: BTreeSet<&str> = records.iter().map(|r| r.target_id.as_str()).collect();
            if ids.len() != records.len() {
                return Err(Error::Integrity(format!(
                    "{backend} seed {seed}: duplicate target ids across results files"
                )));
            }
            MetricsCell::compute(&backend, format, seed, &records, 0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::mock(dir, 40, 20);
        cfg.seeds = vec![36, 73];
        cfg.k = 4;
        cfg.k_grid = vec![2, 4];
        cfg.concurrency_limit = 2;
        cfg
    }

    #[test]
    fn matrix_then_rerun_reuses_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let first = Session::open(cfg.clone()).unwrap().run_matrix().unwrap();
        assert!(first.is_complete());
        assert_eq!(first.computed.len(), 8);
        assert_eq!(first.report.metrics.aggregates.len(), 4);
        let report_bytes = std::fs::read(dir.path().join("report.json")).unwrap();

        let second = Session::open(cfg).unwrap().run_matrix().unwrap();
        assert_eq!(second.reused.len(), 8);
        assert_eq!(second.backend_calls, 0);
        assert_eq!(
            std::fs::read(dir.path().join("report.json")).unwrap(),
            report_bytes
        );
    }

    #[test]
    fn zero_shot_prompts_are_shared_across_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.formats = vec![PromptFormat::ZERO_SHOT_TABULAR];
        let mut s = Session::open(cfg).unwrap();
        let out = s.run_matrix().unwrap();
        let distinct: BTreeSet<String> = s
            .plans
            .values()
            .flat_map(|p| p.members(Bucket::Test).iter().cloned())
            .collect();
        assert_eq!(out.backend_calls, distinct.len());
    }

    #[test]
    fn deleted_cell_is_recomputed_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        Session::open(cfg.clone()).unwrap().run_matrix().unwrap();
        let label = "matrix__mock__few_shot_tabular__s73";
        std::fs::remove_file(dir.path().join("results").join(format!("{label}.jsonl"))).unwrap();
        let again = Session::open(cfg).unwrap().run_matrix().unwrap();
        assert_eq!(again.computed, vec![label.to_string()]);
        assert_eq!(again.backend_calls, 0);
    }

    #[test]
    fn k_beyond_pool_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.k = 50;
        let err = Session::open(cfg).unwrap().run_matrix().unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn k_ablation_skips_oversized_k() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.k_grid = vec![2, 1000];
        let series = Session::open(cfg).unwrap().run_k_ablation().unwrap();
        assert_eq!(series[0].points.len(), 1);
        assert_eq!(series[0].skipped, vec![1000]);
        assert_eq!(series[0].points[0].auroc.len(), 2);
    }

    #[test]
    fn transfer_to_same_format_matches_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let mut s = Session::open(cfg).unwrap();
        let matrix = s.run_matrix().unwrap();
        let f = PromptFormat::FEW_SHOT_TABULAR;
        let t = s.run_transfer_ablation("mock", f, f).unwrap();
        for c in &t.cells {
            let m = matrix
                .report
                .metrics
                .cells
                .iter()
                .find(|m| m.format == f && m.seed == c.seed)
                .unwrap();
            assert_eq!((m.auroc, m.accuracy, m.n), (c.auroc, c.accuracy, c.n));
        }
        assert!(t.cells[0].model.contains("tuned on few_shot_tabular"));
    }

    #[test]
    fn finetune_export_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.finetune_multiplier = 3;
        let s = Session::open(cfg).unwrap();
        let train = s.plan(36).unwrap().members(Bucket::Train).len();
        let out = s
            .export_finetune(
                &[PromptFormat::ZERO_SHOT_SERIALIZED, PromptFormat::FEW_SHOT_TABULAR],
                &[36],
                &dir.path().join("ft"),
            )
            .unwrap();
        assert_eq!(out[0].1, train);
        assert_eq!(out[1].1, 3 * train);
        assert!(s
            .export_finetune(
                &[PromptFormat::FEW_SHOT_TABULAR.with_cot()],
                &[36],
                &dir.path().join("ft")
            )
            .is_err());
    }

    #[test]
    fn rebuild_matches_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = Session::open(small(dir.path())).unwrap().run_matrix().unwrap();
        let rebuilt = rebuild_report(dir.path()).unwrap();
        assert_eq!(rebuilt.metrics, out.report.metrics);
    }
}
