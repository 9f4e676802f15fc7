use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

/// Which reading-comprehension task an example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Extractive span, always answerable.
    Se,
    /// Extractive span that may be unanswerable.
    Seu,
    /// Multiple choice.
    Mc,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Se => "se",
            TaskKind::Seu => "seu",
            TaskKind::Mc => "mc",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" => Ok(TaskKind::Se),
            "seu" => Ok(TaskKind::Seu),
            "mc" => Ok(TaskKind::Mc),
            other => Err(Error::Usage(format!("unknown task '{other}' (expected se, seu or mc)"))),
        }
    }
}

/// One packed model input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    /// Positions a predicted span may start or end at (passage tokens only).
    pub span_mask: Vec<bool>,
    /// Sequence index of the first passage token.
    pub passage_start: usize,
    /// Number of passage tokens kept after truncation.
    pub passage_len: usize,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Sequence position of passage word `i`, if it survived truncation.
    pub fn passage_position(&self, word: usize) -> Option<usize> {
        (word < self.passage_len).then_some(self.passage_start + word)
    }
}

/// Everything the model sees for one example: one sequence for span tasks,
/// one per option for multiple choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleInput {
    pub task: TaskKind,
    pub sequences: Vec<EncodedInput>,
}

impl ExampleInput {
    pub fn total_len(&self) -> usize {
        self.sequences.iter().map(EncodedInput::len).sum()
    }

    /// Attention masks of all sequences, concatenated row-wise.
    pub fn row_mask(&self) -> Vec<bool> {
        self.sequences.iter().flat_map(|s| s.attention_mask.iter().copied()).collect()
    }
}

/// `[CLS] question [SEP] passage [SEP]`, truncating the passage to fit `max_len`.
pub fn pack_span(question: &[usize], passage: &[usize], max_len: usize) -> Result<EncodedInput> {
    let fixed = question.len() + 3;
    if fixed >= max_len || passage.is_empty() {
        return Err(Error::SequenceTooLong {
            len: fixed + passage.len(),
            max: max_len,
        });
    }
    let passage_len = passage.len().min(max_len - fixed);
    let mut token_ids = Vec::with_capacity(fixed + passage_len);
    token_ids.push(CLS);
    token_ids.extend_from_slice(question);
    token_ids.push(SEP);
    let passage_start = token_ids.len();
    token_ids.extend_from_slice(&passage[..passage_len]);
    token_ids.push(SEP);

    let len = token_ids.len();
    let segment_ids = (0..len).map(|i| usize::from(i >= passage_start)).collect();
    let span_mask = (0..len)
        .map(|i| i >= passage_start && i < passage_start + passage_len)
        .collect();
    Ok(EncodedInput {
        token_ids,
        segment_ids,
        attention_mask: vec![true; len],
        span_mask,
        passage_start,
        passage_len,
    })
}

/// `[CLS] passage [SEP] question [SEP] option [SEP]`; segment 1 starts at the question.
pub fn pack_choice(passage: &[usize], question: &[usize], option: &[usize], max_len: usize) -> Result<EncodedInput> {
    let fixed = question.len() + option.len() + 4;
    if fixed >= max_len || passage.is_empty() {
        return Err(Error::SequenceTooLong {
            len: fixed + passage.len(),
            max: max_len,
        });
    }
    let passage_len = passage.len().min(max_len - fixed);
    let mut token_ids = Vec::with_capacity(fixed + passage_len);
    token_ids.push(CLS);
    let passage_start = 1;
    token_ids.extend_from_slice(&passage[..passage_len]);
    token_ids.push(SEP);
    let question_start = token_ids.len();
    token_ids.extend_from_slice(question);
    token_ids.push(SEP);
    token_ids.extend_from_slice(option);
    token_ids.push(SEP);

    let len = token_ids.len();
    Ok(EncodedInput {
        segment_ids: (0..len).map(|i| usize::from(i >= question_start)).collect(),
        attention_mask: vec![true; len],
        span_mask: (0..len).map(|i| i >= passage_start && i < passage_start + passage_len).collect(),
        token_ids,
        passage_start,
        passage_len,
    })
}
