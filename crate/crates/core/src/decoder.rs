//! Span decoding, the answerability decision, and evaluation metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;

/// Chosen span in sequence positions, with `p_s[start] * p_e[end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanChoice {
    pub start: usize,
    pub end: usize,
    pub prob: f64,
}

/// Decoded output of one example.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Prediction {
    pub span: Option<SpanChoice>,
    pub p_na: Option<f64>,
    pub na_score: Option<f64>,
    /// Whether the example was judged unanswerable.
    pub no_answer: bool,
    pub option: Option<usize>,
}

/// Most probable span `(i, j)` with `i <= j`, `j - i < max_answer_len` and both
/// ends inside `passage_mask`. Ties go to the smaller `i`, then the smaller `j`.
pub fn best_span(p_s: &[f64], p_e: &[f64], passage_mask: &[bool], max_answer_len: usize) -> Result<SpanChoice> {
    if p_s.len() != p_e.len() || p_s.len() != passage_mask.len() {
        return Err(Error::shape(
            "best_span",
            format!("p_s {}, p_e {}, mask {}", p_s.len(), p_e.len(), passage_mask.len()),
        ));
    }
    let mut best: Option<SpanChoice> = None;
    for i in (0..p_s.len()).filter(|&i| passage_mask[i]) {
        let last = (i + max_answer_len).min(p_s.len());
        for j in (i..last).filter(|&j| passage_mask[j]) {
            let prob = p_s[i] * p_e[j];
            if best.is_none_or(|b| prob > b.prob) {
                best = Some(SpanChoice { start: i, end: j, prob });
            }
        }
    }
    best.ok_or(Error::NoValidSpan)
}

/// `p_na - span_prob * (1 - p_na)^2`; larger means more likely unanswerable.
pub fn na_score(p_na: f64, span_prob: f64) -> f64 {
    p_na - span_prob * (1.0 - p_na).powi(2)
}

/// Unanswerable exactly when `score > threshold`.
pub fn is_no_answer(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// One dev example as seen by [`threshold_search`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPoint {
    pub score: f64,
    /// Gold label: the question has no answer.
    pub no_answer: bool,
    /// F1 obtained if the predicted span is returned instead of no-answer.
    pub f1_if_answered: f64,
}

/// Selected threshold and the mean F1 it achieves on the dev set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// Mean F1 when predicting no-answer for scores above `threshold`.
pub fn f1_at_threshold(points: &[ThresholdPoint], threshold: f64) -> f64 {
    let total: f64 = points
        .iter()
        .map(|p| {
            if is_no_answer(p.score, threshold) {
                if p.no_answer {
                    1.0
                } else {
                    0.0
                }
            } else {
                p.f1_if_answered
            }
        })
        .sum();
    total / points.len() as f64
}

/// Candidate thresholds: `-inf`, midpoints between consecutive distinct scores, `+inf`.
pub fn threshold_candidates(points: &[ThresholdPoint]) -> Vec<f64> {
    let mut scores: Vec<f64> = points.iter().map(|p| p.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out = Vec::with_capacity(scores.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(scores.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out.push(f64::INFINITY);
    out
}

/// Threshold maximizing overall dev F1, ties toward the smaller threshold.
///
/// With a single gold class the sentinel for the majority behavior is
/// returned: `+inf` (never no-answer) or `-inf` (always no-answer).
pub fn threshold_search(points: &[ThresholdPoint]) -> Result<ThresholdChoice> {
    if points.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if points.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::NonFiniteValue("threshold_search"));
    }
    let unanswerable = points.iter().filter(|p| p.no_answer).count();
    if unanswerable == 0 || unanswerable == points.len() {
        let threshold = if unanswerable == 0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(ThresholdChoice {
            threshold,
            f1: f1_at_threshold(points, threshold),
        });
    }

    // Sweep from -inf upward: each distinct score crossed moves its examples
    // from "no answer" to "answered".
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut total: f64 = sorted.iter().map(|p| if p.no_answer { 1.0 } else { 0.0 }).sum();
    let n = points.len() as f64;
    let mut best = ThresholdChoice {
        threshold: f64::NEG_INFINITY,
        f1: total / n,
    };
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            let p = &sorted[i];
            total += p.f1_if_answered - if p.no_answer { 1.0 } else { 0.0 };
            i += 1;
        }
        let threshold = if i < sorted.len() {
            score + (sorted[i].score - score) / 2.0
        } else {
            f64::INFINITY
        };
        let f1 = total / n;
        if f1 > best.f1 {
            best = ThresholdChoice { threshold, f1 };
        }
    }
    Ok(best)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, strip ASCII punctuation, drop articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &g {
        *counts.entry(w).or_default() += 1;
    }
    let mut common = 0usize;
    for w in &p {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match and F1 against the best of several references. An empty
/// string stands for "no answer"; no references means the gold answer is empty.
pub fn em_f1(prediction: &str, references: &[String]) -> (f64, f64) {
    let pred = normalize_answer(prediction);
    let golds: Vec<String> = if references.is_empty() {
        vec![String::new()]
    } else {
        references.iter().map(|r| normalize_answer(r)).collect()
    };
    let em = golds.contains(&pred);
    let f1 = golds.iter().map(|g| token_f1(&pred, g)).fold(0.0, f64::max);
    (if em { 1.0 } else { 0.0 }, f1)
}

/// Fraction of predictions equal to the gold option.
pub fn mc_accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch(predictions.len(), golds.len()));
    }
    if golds.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / golds.len() as f64)
}

/// Index of the largest probability, ties to the smaller index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Aggregate metrics written by evaluation. EM, F1 and accuracy are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub n: usize,
}
