//! End-to-end training runs: encode files, fit, evaluate, checkpoint.

use std::io::Write;

use crate::adversary::{fit, FitOutcome, OptimizerKind, PerturbationConfig, Sample, TrainRecipe};
use crate::data::{encode_dataset, encode_unlabeled, labeled_samples, DatasetFile, Encoded, Vocab};
use crate::decoder::DEFAULT_MAX_ANSWER_LEN;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, ThresholdMode};
use crate::insight::{difficulty, RareWordSet, ScoredExample};
use crate::model::{Checkpoint, ModelConfig, RcModel, TaskKind};
use crate::synth::SynthSpec;

/// Model shape for a run; the vocabulary size comes from the training file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub hidden_dim: usize,
    pub max_seq_len: usize,
    pub num_encoder_blocks: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            hidden_dim: 32,
            max_seq_len: 48,
            num_encoder_blocks: 1,
        }
    }
}

/// Encoded training, unlabeled and dev examples sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct RunData {
    pub task: TaskKind,
    pub vocab: Vocab,
    pub train: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub dev: Vec<Encoded>,
    pub max_seq_len: usize,
}

impl RunData {
    /// The vocabulary is built from the training file. Unlabeled examples are
    /// the unanswerable questions of `unlabeled`, read without their labels.
    pub fn prepare(task: TaskKind, train: &DatasetFile, dev: Option<&DatasetFile>, unlabeled: Option<&DatasetFile>, max_seq_len: usize) -> Result<Self> {
        let vocab = Vocab::build(train);
        let train_enc = encode_dataset(train, &vocab, task, max_seq_len)?;
        let dev = match dev {
            Some(d) => encode_dataset(d, &vocab, task, max_seq_len)?,
            None => Vec::new(),
        };
        let unlabeled = match unlabeled {
            Some(u) => encode_unlabeled(u, &vocab, max_seq_len)?.into_iter().map(|e| e.sample).collect(),
            None => Vec::new(),
        };
        Ok(RunData {
            task,
            train: labeled_samples(&train_enc),
            unlabeled,
            dev,
            vocab,
            max_seq_len,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub fit: FitOutcome,
    /// Evaluation of the selected model on the dev set, if one was given.
    pub dev: Option<Evaluation>,
    pub checkpoint: Checkpoint,
}

/// Trains a fresh model and evaluates the best epoch on dev. Span-or-no-answer
/// runs search the answerability threshold on dev and store it in the checkpoint.
pub fn train_and_evaluate(data: &RunData, shape: &ModelShape, recipe: &TrainRecipe, log: Option<&mut dyn Write>) -> Result<RunResult> {
    if recipe.vat_unlabeled && data.unlabeled.is_empty() {
        return Err(Error::RecipeDatasetMismatch("unlabeled VAT needs unlabeled examples".into()));
    }
    let config = ModelConfig {
        vocab_size: data.vocab.len(),
        hidden_dim: shape.hidden_dim,
        max_seq_len: data.max_seq_len.max(shape.max_seq_len),
        num_encoder_blocks: shape.num_encoder_blocks,
        seed: recipe.seed,
    };
    let model = RcModel::new(config)?;
    let task = data.task;
    let dev = &data.dev;
    let evaluate_dev = |m: &RcModel| -> Result<_> {
        if dev.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(m, dev, task, ThresholdMode::Search, DEFAULT_MAX_ANSWER_LEN)?.dev_score()))
    };
    let fit = fit(model, &data.train, &data.unlabeled, recipe, evaluate_dev, log)?;
    let dev_eval = if dev.is_empty() {
        None
    } else {
        Some(evaluate(&fit.model, dev, task, ThresholdMode::Search, DEFAULT_MAX_ANSWER_LEN)?)
    };
    let checkpoint = Checkpoint {
        model: fit.model.clone(),
        task,
        vocab: data.vocab.words().to_vec(),
        na_threshold: dev_eval.as_ref().and_then(|e| e.threshold),
    };
    Ok(RunResult {
        fit,
        dev: dev_eval,
        checkpoint,
    })
}

/// Encodes `ds` with the checkpoint's vocabulary and evaluates it. Without an
/// explicit mode, a stored answerability threshold is used as is, and the
/// threshold is searched on `ds` only when none was stored.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, ds: &DatasetFile, mode: Option<ThresholdMode>, max_answer_len: usize) -> Result<(Vec<Encoded>, Evaluation)> {
    let vocab = Vocab::from_words(ckpt.vocab.clone())?;
    let encoded = encode_dataset(ds, &vocab, ckpt.task, ckpt.model.config.max_seq_len)?;
    let mode = mode.unwrap_or(match ckpt.na_threshold {
        Some(t) => ThresholdMode::Fixed(t),
        None => ThresholdMode::Search,
    });
    let ev = evaluate(&ckpt.model, &encoded, ckpt.task, mode, max_answer_len)?;
    Ok((encoded, ev))
}

/// Difficulty and scores of every evaluated example.
pub fn scored_examples(encoded: &[Encoded], ev: &Evaluation, rare: &RareWordSet) -> Result<Vec<ScoredExample>> {
    if encoded.len() != ev.results.len() {
        return Err(Error::LengthMismatch(encoded.len(), ev.results.len()));
    }
    encoded
        .iter()
        .zip(&ev.results)
        .map(|(e, r)| {
            Ok(ScoredExample {
                difficulty: difficulty(&e.passage, &e.question, rare)?,
                no_answer: e.no_answer,
                em: r.em,
                f1: r.f1,
            })
        })
        .collect()
}

/// Settings shared by the desk-scale recipe comparisons.
pub mod toy {
    use super::*;

    pub const EPOCHS: usize = 12;
    pub const LEARNING_RATE: f64 = 1e-3;
    pub const BATCH_SIZE: usize = 8;
    pub const EPSILON: f64 = 1e-3;
    /// Question-passage shuffle and entity replacement targets.
    pub const AUGMENT: (usize, usize) = (300, 300);
    pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

    /// 2,000 train and 500 dev questions, a third unanswerable, 10% of the
    /// training spans moved onto an adjacent token, no rare-word passages.
    pub fn corpus_spec() -> SynthSpec {
        SynthSpec {
            task: TaskKind::Seu,
            facts_per_passage: 3,
            rare_fraction: 0.0,
            ..SynthSpec::default()
        }
    }

    pub fn shape() -> ModelShape {
        ModelShape {
            hidden_dim: 16,
            max_seq_len: 48,
            num_encoder_blocks: 1,
        }
    }

    /// Adam with every regularizer off; callers switch on the ones compared.
    pub fn recipe(seed: u64) -> TrainRecipe {
        TrainRecipe {
            epochs: EPOCHS,
            learning_rate: LEARNING_RATE,
            optimizer: OptimizerKind::Adam,
            labeled_batch_size: BATCH_SIZE,
            unlabeled_batch_size: BATCH_SIZE,
            perturbation: PerturbationConfig {
                epsilon: EPSILON,
                ..PerturbationConfig::span()
            },
            seed,
            ..TrainRecipe::default()
        }
    }

    /// Median of `values`; the mean of the two middle values for even counts.
    pub fn median(values: &[f64]) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
}
