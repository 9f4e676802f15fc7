//! Toy reading-comprehension network.
//!
//! Embedding layer (token + position + segment, layer-normalized), a stack of
//! single-head attention blocks, a first-token pooler and three task heads:
//! start/end span distributions, a no-answer sigmoid and a multiple-choice
//! softmax. The embedding output is returned as its own tape value so
//! callers can add perturbations before the encoder sees it.

mod checkpoint;
mod input;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use input::{pack_choice, pack_span, EncodedInput, ExampleInput, TaskKind, CLS, NUM_SPECIAL, PAD, SEP, UNK};
pub use params::{BlockParams, ModelParams, ParamVars, Params};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub max_seq_len: usize,
    pub num_encoder_blocks: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 64,
            max_seq_len: 64,
            num_encoder_blocks: 1,
            seed: 0,
        }
    }

    pub fn ffn_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= NUM_SPECIAL {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must exceed the {NUM_SPECIAL} special tokens"
            )));
        }
        if self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig("hidden_dim must be positive and even".into()));
        }
        if self.max_seq_len < 4 {
            return Err(Error::InvalidConfig("max_seq_len must be at least 4".into()));
        }
        if self.num_encoder_blocks == 0 {
            return Err(Error::InvalidConfig("num_encoder_blocks must be positive".into()));
        }
        Ok(())
    }
}

/// Head outputs for one example, as tape values.
#[derive(Debug, Clone, Copy)]
pub enum Outputs {
    Span { start: Var, end: Var },
    SpanNa { start: Var, end: Var, na: Var },
    Choice { options: Var },
}

impl Outputs {
    /// Every predicted distribution: start and end, the binary
    /// `[answerable, unanswerable]` pair when present, or the option distribution.
    pub fn distributions(&self, tape: &mut Tape<'_>) -> Result<Vec<Var>> {
        Ok(match *self {
            Outputs::Span { start, end } => vec![start, end],
            Outputs::SpanNa { start, end, na } => {
                let answerable = tape.affine(na, -1.0, 1.0)?;
                vec![start, end, tape.concat(&[answerable, na])?]
            }
            Outputs::Choice { options } => vec![options],
        })
    }
}

/// Plain-value copy of [`Outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputValues {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub na: Option<f64>,
    pub options: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl RcModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config);
        Ok(RcModel { config, params })
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> ParamVars {
        self.params.register(tape, requires_grad)
    }

    /// Token + position + segment embeddings, layer-normalized row-wise. Shape `l x h`.
    pub fn embed(&self, tape: &mut Tape<'_>, pv: &ParamVars, tokens: &[usize], segments: &[usize]) -> Result<Var> {
        let len = tokens.len();
        if len == 0 || len > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        if segments.len() != len {
            return Err(Error::shape("embed", format!("{len} tokens, {} segments", segments.len())));
        }
        if let Some(&s) = segments.iter().find(|&&s| s > 1) {
            return Err(Error::shape("embed", format!("segment id {s} not in {{0, 1}}")));
        }
        let positions: Vec<usize> = (0..len).collect();
        let tok = tape.embedding_lookup(pv.token_embedding, tokens)?;
        let pos = tape.embedding_lookup(pv.position_embedding, &positions)?;
        let seg = tape.embedding_lookup(pv.segment_embedding, segments)?;
        let sum = tape.add(tok, pos)?;
        let sum = tape.add(sum, seg)?;
        tape.layer_norm(sum, LAYER_NORM_EPS)
    }

    /// Runs the encoder stack over `x` (`l x h`); `mask` marks attendable positions.
    pub fn encode(&self, tape: &mut Tape<'_>, pv: &ParamVars, x: Var, mask: &[bool]) -> Result<Var> {
        let (len, h) = match *tape.shape(x) {
            [l, h] if h == self.config.hidden_dim => (l, h),
            ref s => return Err(Error::shape("encode", format!("input {s:?}, hidden {}", self.config.hidden_dim))),
        };
        if mask.len() != len {
            return Err(Error::shape("encode", format!("mask {} vs length {len}", mask.len())));
        }
        let scale = 1.0 / (h as f64).sqrt();
        let mut hidden = x;
        for block in &pv.blocks {
            let q = tape.matmul(hidden, block.query)?;
            let k = tape.matmul(hidden, block.key)?;
            let v = tape.matmul(hidden, block.value)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax_masked(scores, Some(mask))?;
            let ctx = tape.matmul(attn, v)?;
            let out = tape.matmul(ctx, block.output)?;
            let res = tape.add(hidden, out)?;
            let normed = tape.layer_norm(res, LAYER_NORM_EPS)?;
            let normed = tape.mul_row(normed, block.attn_norm_gain)?;
            let mid = tape.add_row(normed, block.attn_norm_bias)?;

            let ff = tape.matmul(mid, block.ffn_in)?;
            let ff = tape.add_row(ff, block.ffn_in_bias)?;
            let ff = tape.relu(ff)?;
            let ff = tape.matmul(ff, block.ffn_out)?;
            let ff = tape.add_row(ff, block.ffn_out_bias)?;
            let res = tape.add(mid, ff)?;
            let normed = tape.layer_norm(res, LAYER_NORM_EPS)?;
            let normed = tape.mul_row(normed, block.ffn_norm_gain)?;
            hidden = tape.add_row(normed, block.ffn_norm_bias)?;
        }
        Ok(hidden)
    }

    /// `tanh(affine(H[0]))`, shape `h`.
    pub fn pool(&self, tape: &mut Tape<'_>, pv: &ParamVars, hidden: Var) -> Result<Var> {
        let first = tape.slice(hidden, 0, 1)?;
        let z = tape.matmul(first, pv.pooler_weight)?;
        let z = tape.add_row(z, pv.pooler_bias)?;
        let b = tape.tanh(z)?;
        tape.reshape(b, vec![self.config.hidden_dim])
    }

    /// Start and end distributions over positions allowed by `span_mask`.
    pub fn span_head(&self, tape: &mut Tape<'_>, pv: &ParamVars, hidden: Var, span_mask: &[bool]) -> Result<(Var, Var)> {
        let start_logits = tape.matvec(hidden, pv.span_start)?;
        let end_logits = tape.matvec(hidden, pv.span_end)?;
        let start = tape.softmax_masked(start_logits, Some(span_mask))?;
        let end = tape.softmax_masked(end_logits, Some(span_mask))?;
        Ok((start, end))
    }

    /// No-answer probability `sigmoid(B . w + b)`.
    pub fn na_head(&self, tape: &mut Tape<'_>, pv: &ParamVars, pooled: Var) -> Result<Var> {
        let z = tape.dot(pooled, pv.na_weight)?;
        let z = tape.add(z, pv.na_bias)?;
        tape.sigmoid(z)
    }

    /// Softmax over options of `B_i . w + b`.
    pub fn mc_head(&self, tape: &mut Tape<'_>, pv: &ParamVars, pooled: &[Var]) -> Result<Var> {
        if pooled.len() < 2 {
            return Err(Error::TooFewOptions(pooled.len()));
        }
        let logits = pooled
            .iter()
            .map(|&b| {
                let z = tape.dot(b, pv.option_weight)?;
                tape.add(z, pv.option_bias)
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = tape.concat(&logits)?;
        tape.softmax(logits)
    }

    /// Embeddings of every sequence in `input`, stacked row-wise.
    pub fn embed_example(&self, tape: &mut Tape<'_>, pv: &ParamVars, input: &ExampleInput) -> Result<Var> {
        let parts = input
            .sequences
            .iter()
            .map(|s| self.embed(tape, pv, &s.token_ids, &s.segment_ids))
            .collect::<Result<Vec<_>>>()?;
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat(&parts)
        }
    }

    /// Encoder and task heads applied to stacked embeddings `x`.
    pub fn heads(&self, tape: &mut Tape<'_>, pv: &ParamVars, input: &ExampleInput, x: Var) -> Result<Outputs> {
        if tape.shape(x).first() != Some(&input.total_len()) {
            return Err(Error::shape("heads", format!("{:?} rows vs {}", tape.shape(x), input.total_len())));
        }
        match input.task {
            TaskKind::Se | TaskKind::Seu => {
                let seq = &input.sequences[0];
                let hidden = self.encode(tape, pv, x, &seq.attention_mask)?;
                let (start, end) = self.span_head(tape, pv, hidden, &seq.span_mask)?;
                if input.task == TaskKind::Se {
                    Ok(Outputs::Span { start, end })
                } else {
                    let pooled = self.pool(tape, pv, hidden)?;
                    let na = self.na_head(tape, pv, pooled)?;
                    Ok(Outputs::SpanNa { start, end, na })
                }
            }
            TaskKind::Mc => {
                let mut offset = 0;
                let mut pooled = Vec::with_capacity(input.sequences.len());
                for seq in &input.sequences {
                    let rows = if input.sequences.len() == 1 {
                        x
                    } else {
                        tape.slice(x, offset, offset + seq.len())?
                    };
                    offset += seq.len();
                    let hidden = self.encode(tape, pv, rows, &seq.attention_mask)?;
                    pooled.push(self.pool(tape, pv, hidden)?);
                }
                let options = self.mc_head(tape, pv, &pooled)?;
                Ok(Outputs::Choice { options })
            }
        }
    }

    /// Inference without gradients.
    pub fn predict(&self, input: &ExampleInput) -> Result<OutputValues> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape, false);
        let x = self.embed_example(&mut tape, &pv, input)?;
        let out = self.heads(&mut tape, &pv, input, x)?;
        Ok(output_values(&tape, &out))
    }
}

pub fn output_values(tape: &Tape<'_>, out: &Outputs) -> OutputValues {
    match *out {
        Outputs::Span { start, end } => OutputValues {
            start: tape.value(start).to_vec(),
            end: tape.value(end).to_vec(),
            na: None,
            options: Vec::new(),
        },
        Outputs::SpanNa { start, end, na } => OutputValues {
            start: tape.value(start).to_vec(),
            end: tape.value(end).to_vec(),
            na: Some(tape.scalar_value(na)),
            options: Vec::new(),
        },
        Outputs::Choice { options } => OutputValues {
            start: Vec::new(),
            end: Vec::new(),
            na: None,
            options: tape.value(options).to_vec(),
        },
    }
}

#[cfg(test)]
mod tests;
