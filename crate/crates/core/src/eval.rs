//! Running a model over encoded examples and scoring its answers.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::adversary::DevScore;
use crate::data::Encoded;
use crate::decoder::{self, MetricsReport, Prediction, ThresholdPoint};
use crate::error::{Error, Result};
use crate::model::{OutputValues, RcModel, TaskKind};

/// How the answerability threshold is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Pick the F1-maximizing threshold on the evaluated examples.
    Search,
    Fixed(f64),
}

/// Decoded answer and scores for one example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleResult {
    pub id: String,
    pub prediction: Prediction,
    /// Answer text; empty when judged unanswerable.
    pub answer: String,
    pub gold_no_answer: bool,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub task: TaskKind,
    pub metrics: MetricsReport,
    pub threshold: Option<f64>,
    pub results: Vec<ExampleResult>,
}

impl Evaluation {
    /// Model-selection score: F1 for span tasks, accuracy for multiple choice.
    pub fn dev_score(&self) -> DevScore {
        let mut metrics = BTreeMap::new();
        for (k, v) in [("em", self.metrics.em), ("f1", self.metrics.f1), ("accuracy", self.metrics.accuracy)] {
            if let Some(v) = v {
                metrics.insert(k.to_string(), v);
            }
        }
        if let Some(t) = self.threshold.filter(|t| t.is_finite()) {
            metrics.insert("threshold".into(), t);
        }
        let score = self.metrics.accuracy.or(self.metrics.f1).unwrap_or(0.0);
        DevScore { score, metrics }
    }

    /// `{"id": "answer text"}` in example order.
    pub fn predictions_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .results
            .iter()
            .map(|r| {
                let v = match r.prediction.option {
                    Some(o) => serde_json::Value::from(o),
                    None => serde_json::Value::from(r.answer.clone()),
                };
                (r.id.clone(), v)
            })
            .collect();
        serde_json::to_string_pretty(&map).expect("predictions serialize") + "\n"
    }
}

/// Model outputs for every example, in order.
pub fn raw_outputs(model: &RcModel, examples: &[Encoded]) -> Result<Vec<OutputValues>> {
    examples.par_iter().map(|e| model.predict(&e.sample.input)).collect()
}

fn span_text(e: &Encoded, span: &decoder::SpanChoice) -> String {
    let seq = &e.sample.input.sequences[0];
    let s = span.start - seq.passage_start;
    let t = span.end - seq.passage_start;
    e.passage[s..=t].join(" ")
}

/// Decodes and scores `examples` for `task`.
pub fn evaluate(model: &RcModel, examples: &[Encoded], task: TaskKind, mode: ThresholdMode, max_answer_len: usize) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if let Some(e) = examples.iter().find(|e| e.sample.input.task != task) {
        return Err(Error::RecipeDatasetMismatch(format!(
            "example '{}' is '{}' but the task is '{}'",
            e.sample.id,
            e.sample.input.task.as_str(),
            task.as_str()
        )));
    }
    let outputs = raw_outputs(model, examples)?;
    match task {
        TaskKind::Mc => evaluate_choice(examples, &outputs),
        TaskKind::Se | TaskKind::Seu => evaluate_span(examples, &outputs, task, mode, max_answer_len),
    }
}

fn evaluate_choice(examples: &[Encoded], outputs: &[OutputValues]) -> Result<Evaluation> {
    let mut results = Vec::with_capacity(examples.len());
    let (mut picks, mut golds) = (Vec::new(), Vec::new());
    for (e, o) in examples.iter().zip(outputs) {
        let option = decoder::argmax(&o.options).ok_or(Error::TooFewOptions(0))?;
        let gold = e.label.ok_or_else(|| Error::InvalidDataset(format!("question '{}' has no label", e.sample.id)))?;
        picks.push(option);
        golds.push(gold);
        let hit = if option == gold { 1.0 } else { 0.0 };
        results.push(ExampleResult {
            id: e.sample.id.clone(),
            prediction: Prediction {
                option: Some(option),
                ..Prediction::default()
            },
            answer: String::new(),
            gold_no_answer: false,
            em: hit,
            f1: hit,
        });
    }
    Ok(Evaluation {
        task: TaskKind::Mc,
        metrics: MetricsReport {
            em: None,
            f1: None,
            accuracy: Some(decoder::mc_accuracy(&picks, &golds)?),
            n: examples.len(),
        },
        threshold: None,
        results,
    })
}

fn evaluate_span(examples: &[Encoded], outputs: &[OutputValues], task: TaskKind, mode: ThresholdMode, max_answer_len: usize) -> Result<Evaluation> {
    let mut results = Vec::with_capacity(examples.len());
    let mut points = Vec::with_capacity(examples.len());
    for (e, o) in examples.iter().zip(outputs) {
        let mask = &e.sample.input.sequences[0].span_mask;
        let span = decoder::best_span(&o.start, &o.end, mask, max_answer_len)?;
        let answer = span_text(e, &span);
        let (em, f1) = decoder::em_f1(&answer, &e.answers);
        let na_score = o.na.map(|p| decoder::na_score(p, span.prob));
        if let Some(score) = na_score {
            points.push(ThresholdPoint {
                score,
                no_answer: e.no_answer,
                f1_if_answered: f1,
            });
        }
        results.push(ExampleResult {
            id: e.sample.id.clone(),
            prediction: Prediction {
                span: Some(span),
                p_na: o.na,
                na_score,
                no_answer: false,
                option: None,
            },
            answer,
            gold_no_answer: e.no_answer,
            em,
            f1,
        });
    }

    let threshold = match task {
        TaskKind::Seu => Some(match mode {
            ThresholdMode::Fixed(t) => t,
            ThresholdMode::Search => decoder::threshold_search(&points)?.threshold,
        }),
        _ => None,
    };
    if let Some(t) = threshold {
        for (r, e) in results.iter_mut().zip(examples) {
            let score = r.prediction.na_score.expect("answerability head present");
            if decoder::is_no_answer(score, t) {
                r.prediction.no_answer = true;
                r.answer.clear();
                (r.em, r.f1) = decoder::em_f1("", &e.answers);
            }
        }
    }
    let n = results.len() as f64;
    Ok(Evaluation {
        task,
        metrics: MetricsReport {
            em: Some(results.iter().map(|r| r.em).sum::<f64>() / n),
            f1: Some(results.iter().map(|r| r.f1).sum::<f64>() / n),
            accuracy: None,
            n: results.len(),
        },
        threshold,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_dataset, Answer, Article, DatasetFile, Paragraph, Question, Vocab, DATASET_VERSION};
    use crate::model::ModelConfig;

    fn dataset(task: TaskKind) -> DatasetFile {
        let q = |id: &str, text: &str, ans: Option<(&str, usize)>| Question {
            id: id.into(),
            question: text.into(),
            is_impossible: ans.is_none() && task == TaskKind::Seu,
            answers: ans
                .map(|(t, s)| vec![Answer {
                    text: t.into(),
                    answer_start: s,
                }])
                .unwrap_or_default(),
            options: if task == TaskKind::Mc { vec!["red".into(), "blue".into()] } else { vec![] },
            label: (task == TaskKind::Mc).then_some(1),
        };
        let mut qas = vec![q("q0", "what color is the sky", Some(("blue", 4)))];
        if task == TaskKind::Seu {
            qas.push(q("q1", "what size is the sky", None));
        }
        if task == TaskKind::Mc {
            for x in &mut qas {
                x.answers.clear();
            }
        }
        DatasetFile {
            version: DATASET_VERSION.into(),
            task,
            data: vec![Article {
                id: "a".into(),
                title: String::new(),
                paragraphs: vec![Paragraph {
                    id: "p".into(),
                    context: "today the sky is blue".into(),
                    qas,
                }],
            }],
        }
    }

    fn model_for(ds: &DatasetFile) -> (Vocab, RcModel) {
        let vocab = Vocab::build(ds);
        let mut cfg = ModelConfig::new(vocab.len());
        cfg.hidden_dim = 8;
        cfg.max_seq_len = 32;
        (vocab, RcModel::new(cfg).unwrap())
    }

    #[test]
    fn span_evaluation_scores_decoded_text() {
        let ds = dataset(TaskKind::Se);
        let (vocab, model) = model_for(&ds);
        let enc = encode_dataset(&ds, &vocab, TaskKind::Se, 32).unwrap();
        let ev = evaluate(&model, &enc, TaskKind::Se, ThresholdMode::Search, 30).unwrap();
        assert_eq!(ev.threshold, None);
        let r = &ev.results[0];
        let (em, f1) = decoder::em_f1(&r.answer, &["blue".to_string()]);
        assert_eq!((r.em, r.f1), (em, f1));
        assert!(enc[0].passage.join(" ").contains(&r.answer));
        assert_eq!(ev.metrics.n, 1);
    }

    #[test]
    fn answerability_threshold_applies() {
        let ds = dataset(TaskKind::Seu);
        let (vocab, model) = model_for(&ds);
        let enc = encode_dataset(&ds, &vocab, TaskKind::Seu, 32).unwrap();
        let all_na = evaluate(&model, &enc, TaskKind::Seu, ThresholdMode::Fixed(f64::NEG_INFINITY), 30).unwrap();
        assert!(all_na.results.iter().all(|r| r.prediction.no_answer && r.answer.is_empty()));
        assert_eq!(all_na.metrics.em, Some(0.5));
        let searched = evaluate(&model, &enc, TaskKind::Seu, ThresholdMode::Search, 30).unwrap();
        assert!(searched.metrics.f1.unwrap() >= 0.5);
        let score = searched.dev_score();
        assert_eq!(score.score, searched.metrics.f1.unwrap());
    }

    #[test]
    fn choice_accuracy() {
        let ds = dataset(TaskKind::Mc);
        let (vocab, model) = model_for(&ds);
        let enc = encode_dataset(&ds, &vocab, TaskKind::Mc, 32).unwrap();
        let ev = evaluate(&model, &enc, TaskKind::Mc, ThresholdMode::Search, 30).unwrap();
        let o = model.predict(&enc[0].sample.input).unwrap();
        let expected = if decoder::argmax(&o.options) == Some(1) { 1.0 } else { 0.0 };
        assert_eq!(ev.metrics.accuracy, Some(expected));
        assert!(ev.predictions_json().contains("\"q0\""));
        assert!(matches!(
            evaluate(&model, &enc, TaskKind::Se, ThresholdMode::Search, 30),
            Err(Error::RecipeDatasetMismatch(_))
        ));
    }
}
