//! Prompt construction: instruction scaffold around a tabular or serialized
//! body, plus the JSONL dumps consumed by fine-tuning and audits.

mod serialized;
mod table;
pub mod templates;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{FeatureSchema, Label, SubjectRecord};
use crate::error::{Error, Result};

pub use serialized::{render_serialized, SerializedRole};
pub use table::{parse_table, render_table, TableStyle};
use templates::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Serialized,
    Tabular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptFormat {
    pub context: Context,
    pub layout: Layout,
    pub cot: bool,
}

impl PromptFormat {
    pub const ZERO_SHOT_TABULAR: PromptFormat = PromptFormat::new(Context::ZeroShot, Layout::Tabular);
    pub const ZERO_SHOT_SERIALIZED: PromptFormat = PromptFormat::new(Context::ZeroShot, Layout::Serialized);
    pub const FEW_SHOT_TABULAR: PromptFormat = PromptFormat::new(Context::FewShot, Layout::Tabular);
    pub const FEW_SHOT_SERIALIZED: PromptFormat = PromptFormat::new(Context::FewShot, Layout::Serialized);

    /// The four answer-only formats.
    pub const STANDARD: [PromptFormat; 4] = [
        Self::ZERO_SHOT_SERIALIZED,
        Self::ZERO_SHOT_TABULAR,
        Self::FEW_SHOT_SERIALIZED,
        Self::FEW_SHOT_TABULAR,
    ];

    pub const fn new(context: Context, layout: Layout) -> Self {
        PromptFormat {
            context,
            layout,
            cot: false,
        }
    }

    pub const fn with_cot(mut self) -> Self {
        self.cot = true;
        self
    }

    pub fn is_few_shot(&self) -> bool {
        self.context == Context::FewShot
    }

    fn instruction(&self) -> String {
        let base = match (self.context, self.layout) {
            (Context::ZeroShot, _) => INSTRUCTION_ZERO_SHOT,
            (Context::FewShot, Layout::Tabular) => INSTRUCTION_FEW_SHOT_TABULAR,
            (Context::FewShot, Layout::Serialized) => INSTRUCTION_FEW_SHOT_SERIALIZED,
        };
        let tail = if self.cot {
            ANSWER_WITH_REASONING
        } else {
            ANSWER_ONLY
        };
        format!("{base} {tail}")
    }
}

impl fmt::Display for PromptFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let context = match self.context {
            Context::ZeroShot => "zero_shot",
            Context::FewShot => "few_shot",
        };
        let layout = match self.layout {
            Layout::Serialized => "serialized",
            Layout::Tabular => "tabular",
        };
        write!(f, "{context}_{layout}")?;
        if self.cot {
            f.write_str("_cot")?;
        }
        Ok(())
    }
}

impl FromStr for PromptFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, cot) = match s.strip_suffix("_cot") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let fmt = match base {
            "zero_shot_tabular" => Self::ZERO_SHOT_TABULAR,
            "zero_shot_serialized" => Self::ZERO_SHOT_SERIALIZED,
            "few_shot_tabular" => Self::FEW_SHOT_TABULAR,
            "few_shot_serialized" => Self::FEW_SHOT_SERIALIZED,
            _ => return Err(Error::Config(format!("unknown prompt format {s:?}"))),
        };
        Ok(if cot { fmt.with_cot() } else { fmt })
    }
}

impl Serialize for PromptFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PromptFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub format: PromptFormat,
    pub k: usize,
    pub target_id: String,
    pub icl_ids: Vec<String>,
    pub template_version: String,
}

impl RenderedPrompt {
    /// Hex SHA-256 of the prompt text.
    pub fn hash(&self) -> String {
        prompt_hash(&self.text)
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Wraps the rendered body of `target` (preceded by `icl` examples, in the
/// given order) in the instruction scaffold.
pub fn build_prompt(
    schema: &FeatureSchema,
    target: &SubjectRecord,
    icl: &[&SubjectRecord],
    fmt: PromptFormat,
) -> Result<RenderedPrompt> {
    match fmt.context {
        Context::ZeroShot if !icl.is_empty() => {
            return Err(Error::Precondition(format!(
                "zero-shot prompt given {} examples",
                icl.len()
            )))
        }
        Context::FewShot if icl.is_empty() => {
            return Err(Error::Precondition("few-shot prompt given no examples".into()))
        }
        _ => {}
    }
    let body = match (fmt.context, fmt.layout) {
        (Context::ZeroShot, Layout::Tabular) => render_table(schema, &[], target, false)?,
        (Context::FewShot, Layout::Tabular) => render_table(schema, icl, target, true)?,
        (Context::ZeroShot, Layout::Serialized) => {
            render_serialized(schema, target, SerializedRole::ZeroShotTarget)?
        }
        (Context::FewShot, Layout::Serialized) => {
            let mut parts = icl
                .iter()
                .map(|s| render_serialized(schema, s, SerializedRole::IclWithLabel))
                .collect::<Result<Vec<_>>>()?;
            parts.push(render_serialized(schema, target, SerializedRole::FewShotTarget)?);
            parts.join("\n")
        }
    };
    let mut text = format!(
        "{PREAMBLE}\n{INSTRUCTION_TAG}{}\n{INPUT_TAG}\n{body}\n{RESPONSE_TAG}",
        fmt.instruction()
    );
    if fmt.cot {
        text.push_str(COT_SEED);
    }
    Ok(RenderedPrompt {
        text,
        format: fmt,
        k: icl.len(),
        target_id: target.subject_id.clone(),
        icl_ids: icl.iter().map(|s| s.subject_id.clone()).collect(),
        template_version: TEMPLATE_VERSION.to_string(),
    })
}

#[derive(Serialize)]
struct FinetuneLine<'a> {
    prompt: &'a str,
    completion: &'a str,
    meta: FinetuneMeta<'a>,
}

#[derive(Serialize)]
struct FinetuneMeta<'a> {
    target_id: &'a str,
    format: PromptFormat,
    k: usize,
    icl_ids: &'a [String],
    template_version: &'a str,
}

/// Writes `{prompt, completion, meta}` lines; returns the number written.
pub fn export_finetune_jsonl(pairs: &[(RenderedPrompt, Label)], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    for (p, _) in pairs {
        if p.format.cot || !p.text.ends_with(RESPONSE_TAG) {
            return Err(Error::Precondition(format!(
                "fine-tune prompts must end with the response tag; {} is {}",
                p.target_id, p.format
            )));
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (p, label) in pairs {
        let line = FinetuneLine {
            prompt: &p.text,
            completion: match label {
                Label::Cn => "0",
                Label::Ad => "1",
            },
            meta: FinetuneMeta {
                target_id: &p.target_id,
                format: p.format,
                k: p.k,
                icl_ids: &p.icl_ids,
                template_version: &p.template_version,
            },
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(pairs.len())
}

#[derive(Serialize)]
struct DumpLine<'a> {
    target_id: &'a str,
    format: PromptFormat,
    k: usize,
    text: &'a str,
}

/// Writes `{target_id, format, k, text}` lines.
pub fn write_prompt_dump<W: Write>(prompts: &[RenderedPrompt], mut w: W) -> Result<()> {
    for p in prompts {
        serde_json::to_writer(
            &mut w,
            &DumpLine {
                target_id: &p.target_id,
                format: p.format,
                k: p.k,
                text: &p.text,
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io("<prompt dump>", e))?;
    }
    Ok(())
}
