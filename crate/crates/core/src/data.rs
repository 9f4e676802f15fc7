//! Dataset files, vocabulary and conversion into model samples.
//!
//! Files follow a simplified SQuAD layout: articles hold paragraphs, each
//! paragraph a context and its questions. Answers are located by the token
//! index of their first word in the whitespace-tokenized context. Multiple
//! choice files reuse the layout with `options` and `label` on each question.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::Sample;
use crate::error::{Error, Result};
use crate::model::{pack_choice, pack_span, ExampleInput, TaskKind, CLS, NUM_SPECIAL, PAD, SEP, UNK};
use crate::objectives::Target;

pub const DATASET_VERSION: &str = "advreg-data-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: String,
    pub task: TaskKind,
    pub data: Vec<Article>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub id: String,
    pub context: String,
    pub qas: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub is_impossible: bool,
    #[serde(default)]
    pub answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Token index of the answer's first word in the context.
    pub answer_start: usize,
}

/// Whitespace tokenization with lowercasing.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

impl DatasetFile {
    pub fn new(task: TaskKind) -> Self {
        DatasetFile {
            version: DATASET_VERSION.to_string(),
            task,
            data: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: DatasetFile = serde_json::from_str(text).map_err(|e| Error::InvalidDataset(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        ds.validate()
            .map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn questions(&self) -> impl Iterator<Item = (&Paragraph, &Question)> {
        self.data
            .iter()
            .flat_map(|a| a.paragraphs.iter())
            .flat_map(|p| p.qas.iter().map(move |q| (p, q)))
    }

    pub fn num_questions(&self) -> usize {
        self.questions().count()
    }

    /// Checks ids, answer positions and task-specific fields.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDataset(msg));
        let mut question_ids = HashSet::new();
        let mut article_ids = HashSet::new();
        for article in &self.data {
            if !article_ids.insert(article.id.as_str()) {
                return bad(format!("duplicate article id '{}'", article.id));
            }
            let mut paragraph_ids = HashSet::new();
            for p in &article.paragraphs {
                if !paragraph_ids.insert(p.id.as_str()) {
                    return bad(format!("duplicate paragraph id '{}' in article '{}'", p.id, article.id));
                }
                let context = tokenize(&p.context);
                if context.is_empty() {
                    return bad(format!("paragraph '{}' has an empty context", p.id));
                }
                for q in &p.qas {
                    if !question_ids.insert(q.id.as_str()) {
                        return bad(format!("duplicate question id '{}'", q.id));
                    }
                    if tokenize(&q.question).is_empty() {
                        return bad(format!("question '{}' is empty", q.id));
                    }
                    match self.task {
                        TaskKind::Mc => {
                            if q.options.len() < 2 {
                                return bad(format!("question '{}' needs at least 2 options", q.id));
                            }
                            if q.label.is_none_or(|l| l >= q.options.len()) {
                                return bad(format!("question '{}' has a missing or out-of-range label", q.id));
                            }
                            if q.options.iter().any(|o| tokenize(o).is_empty()) {
                                return bad(format!("question '{}' has an empty option", q.id));
                            }
                        }
                        TaskKind::Se | TaskKind::Seu => {
                            if q.is_impossible {
                                if self.task == TaskKind::Se {
                                    return bad(format!("question '{}' is unanswerable in an always-answerable file", q.id));
                                }
                                if !q.answers.is_empty() {
                                    return bad(format!("unanswerable question '{}' has answers", q.id));
                                }
                            } else if q.answers.is_empty() {
                                return bad(format!("answerable question '{}' has no answers", q.id));
                            }
                            for a in &q.answers {
                                let words = tokenize(&a.text);
                                let end = a.answer_start + words.len();
                                if words.is_empty() || end > context.len() || context[a.answer_start..end] != words[..] {
                                    return bad(format!(
                                        "answer '{}' of question '{}' does not match the context at token {}",
                                        a.text, q.id, a.answer_start
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Word-to-id map with the special tokens at fixed ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const SPECIALS: [&'static str; NUM_SPECIAL] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

    /// Vocabulary of every word in contexts, questions and options, in
    /// first-seen order.
    pub fn build(ds: &DatasetFile) -> Self {
        let mut words: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        let mut add = |text: &str| {
            for w in tokenize(text) {
                if !index.contains_key(&w) {
                    index.insert(w.clone(), words.len());
                    words.push(w);
                }
            }
        };
        for article in &ds.data {
            for p in &article.paragraphs {
                add(&p.context);
                for q in &p.qas {
                    add(&q.question);
                    for o in &q.options {
                        add(o);
                    }
                }
            }
        }
        Vocab { words, index }
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < NUM_SPECIAL || words[..NUM_SPECIAL] != Self::SPECIALS.map(String::from) {
            return Err(Error::Checkpoint("vocabulary must start with the special tokens".into()));
        }
        let index = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }
}

const _: () = assert!(PAD == 0 && CLS == 1 && SEP == 2 && UNK == 3);

/// A question converted for the model, with what evaluation needs to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub sample: Sample,
    pub passage: Vec<String>,
    pub question: Vec<String>,
    /// Gold answer texts; empty for unanswerable questions.
    pub answers: Vec<String>,
    pub no_answer: bool,
    pub label: Option<usize>,
    /// The gold span was cut off by truncation.
    pub truncated: bool,
}

/// Encodes every question of `ds` for `task` with sequences of at most `max_len`.
///
/// A span file read as the always-answerable task keeps only answerable
/// questions. Gold spans lost to truncation leave the sample without a target.
pub fn encode_dataset(ds: &DatasetFile, vocab: &Vocab, task: TaskKind, max_len: usize) -> Result<Vec<Encoded>> {
    match (ds.task, task) {
        (TaskKind::Mc, TaskKind::Mc) | (TaskKind::Se | TaskKind::Seu, TaskKind::Se | TaskKind::Seu) => {}
        (file, want) => {
            return Err(Error::RecipeDatasetMismatch(format!(
                "dataset is '{}' but the task is '{}'",
                file.as_str(),
                want.as_str()
            )))
        }
    }
    let mut out = Vec::new();
    for (p, q) in ds.questions() {
        if task == TaskKind::Se && q.is_impossible {
            continue;
        }
        out.push(encode_question(p, q, vocab, task, max_len)?);
    }
    Ok(out)
}

/// Unanswerable questions of a span file, as unlabeled always-answerable inputs.
pub fn encode_unlabeled(ds: &DatasetFile, vocab: &Vocab, max_len: usize) -> Result<Vec<Encoded>> {
    let mut out = Vec::new();
    for (p, q) in ds.questions().filter(|(_, q)| q.is_impossible) {
        let mut e = encode_question(p, q, vocab, TaskKind::Se, max_len)?;
        e.sample.target = None;
        out.push(e);
    }
    Ok(out)
}

pub fn encode_question(p: &Paragraph, q: &Question, vocab: &Vocab, task: TaskKind, max_len: usize) -> Result<Encoded> {
    let passage = tokenize(&p.context);
    let question = tokenize(&q.question);
    let p_ids = vocab.encode(&passage);
    let q_ids = vocab.encode(&question);
    let answers: Vec<String> = q.answers.iter().map(|a| tokenize(&a.text).join(" ")).collect();
    let mut truncated = false;
    let (input, target) = match task {
        TaskKind::Mc => {
            let sequences = q
                .options
                .iter()
                .map(|o| pack_choice(&p_ids, &q_ids, &vocab.encode(&tokenize(o)), max_len))
                .collect::<Result<Vec<_>>>()?;
            let label = q.label.ok_or_else(|| Error::InvalidDataset(format!("question '{}' has no label", q.id)))?;
            (ExampleInput { task, sequences }, Some(Target::Choice { option: label }))
        }
        TaskKind::Se | TaskKind::Seu => {
            let enc = pack_span(&q_ids, &p_ids, max_len)?;
            let span = q.answers.first().and_then(|a| {
                let len = tokenize(&a.text).len();
                let start = enc.passage_position(a.answer_start)?;
                let end = enc.passage_position(a.answer_start + len - 1)?;
                Some((start, end))
            });
            if !q.is_impossible && span.is_none() {
                truncated = true;
            }
            let target = match (task, span) {
                (_, None) if !q.is_impossible => None,
                (TaskKind::Se, Some((start, end))) => Some(Target::Span { start, end }),
                _ => Some(Target::span_or_na(span.filter(|_| !q.is_impossible))),
            };
            (
                ExampleInput {
                    task,
                    sequences: vec![enc],
                },
                target,
            )
        }
    };
    Ok(Encoded {
        sample: Sample {
            id: q.id.clone(),
            input,
            target,
        },
        passage,
        question,
        answers,
        no_answer: q.is_impossible,
        label: q.label,
        truncated,
    })
}

/// Samples with a training target.
pub fn labeled_samples(encoded: &[Encoded]) -> Vec<Sample> {
    encoded
        .iter()
        .filter(|e| e.sample.target.is_some())
        .map(|e| e.sample.clone())
        .collect()
}

/// Question counts by kind, for reports.
pub fn summary(ds: &DatasetFile) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    out.insert("articles", ds.data.len());
    out.insert("paragraphs", ds.data.iter().map(|a| a.paragraphs.len()).sum());
    out.insert("questions", ds.num_questions());
    out.insert("unanswerable", ds.questions().filter(|(_, q)| q.is_impossible).count());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetFile {
        DatasetFile {
            version: DATASET_VERSION.into(),
            task: TaskKind::Seu,
            data: vec![Article {
                id: "a0".into(),
                title: "t".into(),
                paragraphs: vec![Paragraph {
                    id: "p0".into(),
                    context: "The color of Ovra is deep red .".into(),
                    qas: vec![
                        Question {
                            id: "q0".into(),
                            question: "what is the color of ovra ?".into(),
                            is_impossible: false,
                            answers: vec![Answer {
                                text: "deep red".into(),
                                answer_start: 5,
                            }],
                            options: vec![],
                            label: None,
                        },
                        Question {
                            id: "q1".into(),
                            question: "what is the size of ovra ?".into(),
                            is_impossible: true,
                            answers: vec![],
                            options: vec![],
                            label: None,
                        },
                    ],
                }],
            }],
        }
    }

    #[test]
    fn roundtrip_and_validation() {
        let ds = tiny();
        ds.validate().unwrap();
        let back = DatasetFile::from_json(&ds.to_json()).unwrap();
        assert_eq!(back, ds);

        let mut bad = ds.clone();
        bad.data[0].paragraphs[0].qas[0].answers[0].answer_start = 4;
        assert!(matches!(bad.validate(), Err(Error::InvalidDataset(_))));
        let mut dup = ds.clone();
        dup.data[0].paragraphs[0].qas[1].id = "q0".into();
        assert!(dup.validate().is_err());
        let mut se = ds;
        se.task = TaskKind::Se;
        assert!(se.validate().is_err());
    }

    #[test]
    fn vocab_layout() {
        let v = Vocab::build(&tiny());
        assert_eq!(&v.words()[..4], &Vocab::SPECIALS.map(String::from));
        assert_eq!(v.id("the"), 4);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(Vocab::from_words(v.words().to_vec()).unwrap(), v);
    }

    #[test]
    fn encoding_places_gold_span() {
        let ds = tiny();
        let v = Vocab::build(&ds);
        let enc = encode_dataset(&ds, &v, TaskKind::Seu, 32).unwrap();
        assert_eq!(enc.len(), 2);
        let seq = &enc[0].sample.input.sequences[0];
        let Some(Target::SpanOrNa { span: Some((s, e)), no_answer: false }) = enc[0].sample.target else {
            panic!("expected answerable target")
        };
        assert_eq!(seq.token_ids[s], v.id("deep"));
        assert_eq!(seq.token_ids[e], v.id("red"));
        assert_eq!(enc[1].sample.target, Some(Target::span_or_na(None)));

        let se = encode_dataset(&ds, &v, TaskKind::Se, 32).unwrap();
        assert_eq!(se.len(), 1);
        assert!(matches!(se[0].sample.target, Some(Target::Span { .. })));

        let unl = encode_unlabeled(&ds, &v, 32).unwrap();
        assert_eq!(unl.len(), 1);
        assert_eq!(unl[0].sample.target, None);
        assert_eq!(unl[0].sample.input.task, TaskKind::Se);

        assert!(matches!(
            encode_dataset(&ds, &v, TaskKind::Mc, 32),
            Err(Error::RecipeDatasetMismatch(_))
        ));
    }

    #[test]
    fn truncated_answers_lose_their_target() {
        let ds = tiny();
        let v = Vocab::build(&ds);
        // question (7) + 3 specials leaves room for 4 passage tokens
        let enc = encode_dataset(&ds, &v, TaskKind::Seu, 14).unwrap();
        assert!(enc[0].truncated);
        assert_eq!(enc[0].sample.target, None);
        assert_eq!(labeled_samples(&enc).len(), 1);
    }
}
