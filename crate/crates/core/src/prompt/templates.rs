//! Versioned prompt text. Any edit here must bump [`TEMPLATE_VERSION`] so
//! cached predictions keyed on old prompts are not reused.

pub const TEMPLATE_VERSION: &str = "qtpad-v1";

pub const PREAMBLE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.";

pub const INSTRUCTION_ZERO_SHOT: &str = "Below is a table of patient records. Each column contains features related to Alzheimer's disease. Based on the information, predict whether the patient in the last row has Alzheimer's disease (1) or does not (0).";

pub const INSTRUCTION_FEW_SHOT_TABULAR: &str = "Below is a table of patient records. Each column contains features related to Alzheimer's disease. The last row is missing a value in the 'AlzheimersDisease' column. Based on the patterns in the other rows, predict whether the patient in the last row has Alzheimer's disease (1) or does not (0).";

pub const INSTRUCTION_FEW_SHOT_SERIALIZED: &str = "Below is a serialization of patient records. Each record contains features related to Alzheimer's disease. The last patient has a missing Alzheimer's diagnosis. Based on the patterns in the other records, predict whether the patient in the last record has Alzheimer's disease (1) or does not (0).";

pub const ANSWER_ONLY: &str = "Respond only with 1 or 0.";

pub const ANSWER_WITH_REASONING: &str = "Respond with your reasoning and the prediction answer (1 or 0).";

pub const COT_SEED: &str = "Let's think step-by-step";

pub const LABEL_COLUMN: &str = "AlzheimersDisease";

pub const TARGET_LABEL_CELL: &str = "X";

pub const INSTRUCTION_TAG: &str = "### Instruction: ";
pub const INPUT_TAG: &str = "### Input:";
pub const RESPONSE_TAG: &str = "### Response: ";
