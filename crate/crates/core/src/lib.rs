//! Reproducible few-shot tabular prompting harness for binary AD / CN
//! classification.

pub mod dataset;
pub mod error;
pub mod inference;
pub mod llm;
pub mod metrics;
pub mod parallel;
pub mod prompt;
pub mod runner;
pub mod splitter;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
