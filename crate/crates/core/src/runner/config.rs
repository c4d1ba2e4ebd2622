use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{filter_complete_binary, load_csv, Dataset, FeatureSchema, LoadOptions};
use crate::error::{Error, Result};
use crate::llm::BackendConfig;
use crate::prompt::PromptFormat;
use crate::splitter::{Bucket, SplitConfig, SplitFractions, DEFAULT_SEEDS};
use crate::synthetic;

pub const DEFAULT_K_GRID: [usize; 8] = [2, 4, 6, 8, 10, 12, 16, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalSplit {
    Val,
    Test,
}

impl EvalSplit {
    pub fn bucket(self) -> Bucket {
        match self {
            EvalSplit::Val => Bucket::Val,
            EvalSplit::Test => Bucket::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub n_cn: usize,
    pub n_ad: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// CSV with an id column, the feature columns and a diagnosis column.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Generated cohort, used instead of `path`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
    #[serde(flatten)]
    pub options: LoadOptions,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_k() -> usize {
    8
}
fn default_k_grid() -> Vec<usize> {
    DEFAULT_K_GRID.to_vec()
}
fn default_formats() -> Vec<PromptFormat> {
    PromptFormat::STANDARD.to_vec()
}
fn default_eval_split() -> EvalSplit {
    EvalSplit::Test
}
fn default_concurrency() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_multiplier() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_formats")]
    pub formats: Vec<PromptFormat>,
    pub backends: Vec<BackendConfig>,
    #[serde(default = "default_eval_split")]
    pub eval_split: EvalSplit,
    /// Maximum in-flight backend calls.
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    pub run_dir: PathBuf,
    #[serde(default = "default_true")]
    pub stratify: bool,
    #[serde(default)]
    pub fractions: SplitFractions,
    /// ICL resamplings per training target in fine-tune exports.
    #[serde(default = "default_multiplier")]
    pub finetune_multiplier: u32,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// A mock-only configuration over a generated cohort.
    pub fn mock(run_dir: impl Into<PathBuf>, n_cn: usize, n_ad: usize) -> Self {
        RunConfig {
            dataset: DatasetConfig {
                path: None,
                synthetic: Some(SyntheticSource { n_cn, n_ad, seed: 0 }),
                options: LoadOptions::default(),
            },
            seeds: default_seeds(),
            k: default_k(),
            k_grid: default_k_grid(),
            formats: default_formats(),
            backends: vec![BackendConfig::mock("mock")],
            eval_split: default_eval_split(),
            concurrency_limit: default_concurrency(),
            run_dir: run_dir.into(),
            stratify: true,
            fractions: SplitFractions::default(),
            finetune_multiplier: 1,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.run_dir);
        if let Some(p) = &mut cfg.dataset.path {
            resolve(base, p);
        }
        for b in &mut cfg.backends {
            if let Some(p) = &mut b.fixtures_dir {
                resolve(base, p);
            }
            if let Some(p) = &mut b.mock.call_log {
                resolve(base, p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if self.formats.is_empty() {
            return fail("formats must not be empty".into());
        }
        if self.backends.is_empty() {
            return fail("at least one backend is required".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.backends {
            b.validate()?;
            if !ids.insert(&b.backend_id) {
                return fail(format!("duplicate backend_id {:?}", b.backend_id));
            }
            if b.backend_id.contains(['/', '\\']) || b.backend_id.contains("__") {
                return fail(format!(
                    "backend_id {:?} may not contain path separators or \"__\"",
                    b.backend_id
                ));
            }
        }
        if self.k == 0 || self.k_grid.contains(&0) {
            return fail("k values must be positive".into());
        }
        if self.concurrency_limit == 0 {
            return fail("concurrency_limit must be at least 1".into());
        }
        if self.finetune_multiplier == 0 {
            return fail("finetune_multiplier must be at least 1".into());
        }
        match (&self.dataset.path, &self.dataset.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return fail("dataset needs exactly one of path or synthetic".into()),
        }
        Ok(())
    }

    pub fn split_config(&self, seed: u64) -> SplitConfig {
        SplitConfig {
            seed,
            fractions: self.fractions,
            stratify: self.stratify,
        }
    }

    pub fn backend(&self, id: &str) -> Result<&BackendConfig> {
        self.backends
            .iter()
            .find(|b| b.backend_id == id)
            .ok_or_else(|| Error::Config(format!("no backend named {id:?}")))
    }

    pub fn backend_ids(&self) -> Vec<String> {
        self.backends.iter().map(|b| b.backend_id.clone()).collect()
    }
}

/// The cohort after dropping unlabeled and incomplete subjects, plus a
/// digest of the source bytes.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<(Dataset, String)> {
    use sha2::{Digest, Sha256};
    let schema = FeatureSchema::qt_pad();
    let (raw, bytes) = match (&cfg.path, &cfg.synthetic) {
        (Some(path), _) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            (load_csv(path, &schema, &cfg.options)?, bytes)
        }
        (None, Some(s)) => {
            let d = synthetic::generate(s.n_cn, s.n_ad, s.seed)?;
            let mut bytes = Vec::new();
            synthetic::write_csv(&d, &mut bytes)?;
            (d, bytes)
        }
        (None, None) => return Err(Error::Config("dataset needs path or synthetic".into())),
    };
    let digest = hex::encode(Sha256::digest(&bytes));
    Ok((filter_complete_binary(&raw)?, digest))
}
