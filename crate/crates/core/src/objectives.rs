//! Task losses and the negative-entropy penalty, built on a tape so they can
//! be differentiated together with the model.
//!
//! Every function here handles one example and returns a scalar `Var`;
//! [`batch_mean`] combines per-example values.

use crate::error::{Error, Result};
use crate::model::{Outputs, TaskKind};
use crate::tensor::{Tape, Var};

/// Gold label of one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Start and end positions of the answer span (sequence indices).
    Span { start: usize, end: usize },
    /// A span question that may be unanswerable. `span` is `None` for
    /// unanswerable examples in ordinary use.
    SpanOrNa { span: Option<(usize, usize)>, no_answer: bool },
    /// Index of the correct option.
    Choice { option: usize },
}

impl Target {
    pub fn span_or_na(span: Option<(usize, usize)>) -> Self {
        Target::SpanOrNa {
            no_answer: span.is_none(),
            span,
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Target::Span { .. } => TaskKind::Se,
            Target::SpanOrNa { .. } => TaskKind::Seu,
            Target::Choice { .. } => TaskKind::Mc,
        }
    }

    /// `1.0` for unanswerable examples, `0.0` otherwise.
    pub fn no_answer_flag(&self) -> f64 {
        match self {
            Target::SpanOrNa { no_answer: true, .. } => 1.0,
            _ => 0.0,
        }
    }
}

/// How the span term of the answerable/unanswerable loss is gated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanWeighting {
    /// Span loss only on answerable examples.
    #[default]
    Answerable,
    /// Span loss only on examples flagged unanswerable. Kept to document why
    /// [`SpanWeighting::Answerable`] is the one used in training.
    FlaggedUnanswerable,
}

fn gold_prob(tape: &mut Tape<'_>, dist: Var, index: usize) -> Result<Var> {
    let len = tape.value(dist).len();
    if index >= len {
        return Err(Error::IndexOutOfRange { index, len });
    }
    if tape.value(dist)[index] == 0.0 {
        return Err(Error::GoldPositionMasked(index));
    }
    tape.pick(dist, index)
}

/// `-log p_s[start] - log p_e[end]`.
pub fn span_loss(tape: &mut Tape<'_>, start_dist: Var, end_dist: Var, start: usize, end: usize) -> Result<Var> {
    let ps = gold_prob(tape, start_dist, start)?;
    let pe = gold_prob(tape, end_dist, end)?;
    let ls = tape.log(ps)?;
    let le = tape.log(pe)?;
    let sum = tape.add(ls, le)?;
    tape.scale(sum, -1.0)
}

/// Binary cross-entropy of the no-answer probability.
pub fn na_loss(tape: &mut Tape<'_>, p_na: Var, no_answer: bool) -> Result<Var> {
    let p = tape.scalar_value(p_na);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    let q = if no_answer { p_na } else { tape.affine(p_na, -1.0, 1.0)? };
    let lq = tape.log(q)?;
    tape.scale(lq, -1.0)
}

/// No-answer loss plus the gated span loss.
pub fn seu_loss(
    tape: &mut Tape<'_>,
    start_dist: Var,
    end_dist: Var,
    p_na: Var,
    target: &Target,
    weighting: SpanWeighting,
) -> Result<Var> {
    let Target::SpanOrNa { span, no_answer } = target else {
        return Err(Error::RecipeDatasetMismatch(format!("{:?} target for span-or-no-answer output", target.task())));
    };
    let na = na_loss(tape, p_na, *no_answer)?;
    let gated = match weighting {
        SpanWeighting::Answerable => !no_answer,
        SpanWeighting::FlaggedUnanswerable => *no_answer,
    };
    if !gated {
        return Ok(na);
    }
    let (s, e) = span.ok_or_else(|| Error::InvalidConfig("span loss requested for an example without a span".into()))?;
    let sl = span_loss(tape, start_dist, end_dist, s, e)?;
    tape.add(na, sl)
}

/// `-log p_o[option]`.
pub fn mc_loss(tape: &mut Tape<'_>, option_dist: Var, option: usize) -> Result<Var> {
    let len = tape.value(option_dist).len();
    if option >= len {
        return Err(Error::IndexOutOfRange { index: option, len });
    }
    let p = tape.pick(option_dist, option)?;
    let lp = tape.log(p)?;
    tape.scale(lp, -1.0)
}

/// `y_na * sum_i (p_s,i log p_s,i + p_e,i log p_e,i)` over the valid positions.
///
/// Lies in `[-2 ln v, 0]` for `v` valid positions. Returns a constant zero
/// for answerable examples.
pub fn negative_entropy_loss(
    tape: &mut Tape<'_>,
    start_dist: Var,
    end_dist: Var,
    no_answer: bool,
    valid_mask: &[bool],
) -> Result<Var> {
    for dist in [start_dist, end_dist] {
        if tape.value(dist).len() != valid_mask.len() {
            return Err(Error::shape(
                "negative_entropy_loss",
                format!("distribution {} vs mask {}", tape.value(dist).len(), valid_mask.len()),
            ));
        }
    }
    if !no_answer {
        return Ok(tape.scalar(0.0));
    }
    let mask: Vec<f64> = valid_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mask = tape.constant(crate::tensor::Tensor::vector(mask)?);
    let mut total = None;
    for dist in [start_dist, end_dist] {
        let h = tape.xlogx(dist)?;
        let h = tape.mul(h, mask)?;
        let h = tape.sum(h)?;
        total = Some(match total {
            None => h,
            Some(t) => tape.add(t, h)?,
        });
    }
    Ok(total.expect("two distributions"))
}

/// Supervised loss of one example for whichever head `outputs` came from.
pub fn task_loss(tape: &mut Tape<'_>, outputs: &Outputs, target: &Target, weighting: SpanWeighting) -> Result<Var> {
    match (*outputs, target) {
        (Outputs::Span { start, end }, Target::Span { start: s, end: e }) => span_loss(tape, start, end, *s, *e),
        (Outputs::SpanNa { start, end, na }, t @ Target::SpanOrNa { .. }) => seu_loss(tape, start, end, na, t, weighting),
        (Outputs::Choice { options }, Target::Choice { option }) => mc_loss(tape, options, *option),
        (_, t) => Err(Error::RecipeDatasetMismatch(format!(
            "{} target does not match the model outputs",
            t.task().as_str()
        ))),
    }
}

/// Mean of scalar losses.
pub fn batch_mean(tape: &mut Tape<'_>, losses: &[Var]) -> Result<Var> {
    if losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if losses.len() == 1 {
        return Ok(losses[0]);
    }
    let stacked = tape.concat(losses)?;
    tape.mean(stacked)
}
