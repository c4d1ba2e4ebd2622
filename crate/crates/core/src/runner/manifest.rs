use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{EvalSplit, RunConfig};
use crate::dataset::Provenance;
use crate::error::{Error, Result};
use crate::prompt::PromptFormat;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Matrix,
    KAblation,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Pending,
    Computed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub kind: CellKind,
    pub backend_id: String,
    pub format: PromptFormat,
    pub seed: u64,
    pub k: usize,
    pub eval_split: EvalSplit,
    /// Format the backend was tuned on, for transfer cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_format: Option<PromptFormat>,
    /// Digest of everything the cell's numbers depend on.
    pub fingerprint: String,
    pub state: CellState,
    #[serde(default)]
    pub scored: usize,
    #[serde(default)]
    pub unparseable: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub template_version: String,
    pub config: RunConfig,
    pub dataset_digest: String,
    pub provenance: Provenance,
    pub split_digests: BTreeMap<u64, String>,
    pub cells: BTreeMap<String, CellStatus>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
