//! Unanswerable-question augmentation.
//!
//! Two generators turn answerable questions into unanswerable ones:
//! pairing a question with a similar passage from the same article that
//! lacks its answer, and swapping an entity in the question for another
//! entity of the same type from the passage.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::data::{tokenize, Article, DatasetFile, Paragraph, Question};
use crate::error::{Error, Result};
use crate::model::TaskKind;

/// Okapi BM25 over tokenized documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    term_freqs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    avg_len: f64,
    doc_freq: HashMap<String, usize>,
    pub k1: f64,
    pub b: f64,
}

impl Bm25Index {
    pub const K1: f64 = 1.2;
    pub const B: f64 = 0.75;

    pub fn new(docs: &[Vec<String>]) -> Self {
        Self::with_params(docs, Self::K1, Self::B)
    }

    pub fn with_params(docs: &[Vec<String>], k1: f64, b: f64) -> Self {
        let mut term_freqs = Vec::with_capacity(docs.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in doc {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let lengths: Vec<usize> = docs.iter().map(Vec::len).collect();
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / docs.len() as f64
        };
        Bm25Index {
            term_freqs,
            lengths,
            avg_len,
            doc_freq,
            k1,
            b,
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Sum over query tokens of the BM25 term weight in document `doc`.
    pub fn score(&self, query: &[String], doc: usize) -> Result<f64> {
        let tf = self.term_freqs.get(doc).ok_or(Error::UnknownDocument(doc))?;
        let len_norm = if self.avg_len > 0.0 {
            self.lengths[doc] as f64 / self.avg_len
        } else {
            0.0
        };
        let mut total = 0.0;
        for term in query {
            let f = tf.get(term).copied().unwrap_or(0) as f64;
            if f == 0.0 {
                continue;
            }
            total += self.idf(term) * f * (self.k1 + 1.0) / (f + self.k1 * (1.0 - self.b + self.b * len_norm));
        }
        Ok(total)
    }
}

/// Whether `needle` occurs as a contiguous run of `hay`.
pub fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// A question re-attached to a passage that does not answer it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShuffleExample {
    pub question_id: String,
    pub question: String,
    pub source_paragraph: usize,
    pub target_paragraph: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ShuffleOutcome {
    pub examples: Vec<ShuffleExample>,
    pub skipped: usize,
}

/// For each answerable question, the best-scoring other passage of the
/// article that does not contain any of its answers. Ties go to the earlier
/// passage; questions with no such passage are skipped.
pub fn question_passage_shuffle(article: &Article) -> ShuffleOutcome {
    let passages: Vec<Vec<String>> = article.paragraphs.iter().map(|p| tokenize(&p.context)).collect();
    let index = Bm25Index::new(&passages);
    shuffle_with_index(article, &passages, &index)
}

pub fn shuffle_with_index(article: &Article, passages: &[Vec<String>], index: &Bm25Index) -> ShuffleOutcome {
    let mut out = ShuffleOutcome::default();
    for (pi, p) in article.paragraphs.iter().enumerate() {
        for q in p.qas.iter().filter(|q| !q.is_impossible) {
            let query = tokenize(&q.question);
            let answers: Vec<Vec<String>> = q.answers.iter().map(|a| tokenize(&a.text)).collect();
            let mut best: Option<(usize, f64)> = None;
            for (ci, candidate) in passages.iter().enumerate() {
                if ci == pi || answers.iter().any(|a| contains_run(candidate, a)) {
                    continue;
                }
                let s = index.score(&query, ci).expect("candidate is indexed");
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((ci, s));
                }
            }
            match best {
                Some((target, score)) => out.examples.push(ShuffleExample {
                    question_id: q.id.clone(),
                    question: q.question.clone(),
                    source_paragraph: pi,
                    target_paragraph: target,
                    score,
                }),
                None => out.skipped += 1,
            }
        }
    }
    out
}

/// Entity surface forms with their types, matched on lowercased tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityGazetteer {
    entries: BTreeMap<Vec<String>, String>,
    max_words: usize,
}

/// An entity mention: token offset, token length and surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub len: usize,
    pub surface: String,
}

impl EntityGazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, entity_type: &str) -> Result<()> {
        let words = tokenize(surface);
        if words.is_empty() || entity_type.trim().is_empty() {
            return Err(Error::InvalidDataset(format!("empty gazetteer entry '{surface}'")));
        }
        if let Some(prev) = self.entries.get(&words) {
            if prev != entity_type.trim() {
                return Err(Error::InvalidDataset(format!(
                    "entity '{surface}' has two types: '{prev}' and '{}'",
                    entity_type.trim()
                )));
            }
            return Ok(());
        }
        self.max_words = self.max_words.max(words.len());
        self.entries.insert(words, entity_type.trim().to_string());
        Ok(())
    }

    /// Parses `surface<TAB>type` lines; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((surface, ty)) = line.split_once('\t') else {
                return Err(Error::InvalidDataset(format!("gazetteer line {}: expected 'surface<TAB>type'", n + 1)));
            };
            g.insert(surface, ty)?;
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(w, t)| format!("{}\t{t}\n", w.join(" ")))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entity_type(&self, surface: &str) -> Option<&str> {
        self.entries.get(&tokenize(surface)).map(String::as_str)
    }

    /// Left-to-right longest-match scan without overlaps.
    pub fn mentions(&self, tokens: &[String]) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_words.min(tokens.len() - i))
                .rev()
                .find(|&n| self.entries.contains_key(&tokens[i..i + n]));
            match longest {
                Some(n) => {
                    out.push(Mention {
                        start: i,
                        len: n,
                        surface: tokens[i..i + n].join(" "),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Distinct entity surfaces of `tokens` in order of first mention.
    pub fn entities(&self, tokens: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in self.mentions(tokens) {
            if !out.contains(&m.surface) {
                out.push(m.surface);
            }
        }
        out
    }
}

/// A question whose entity was swapped for another of the same type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplacementExample {
    pub question_id: String,
    pub question: String,
    pub original: String,
    pub replacement: String,
    pub entity_type: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplacementOutcome {
    pub examples: Vec<ReplacementExample>,
    pub skipped: usize,
}

/// Entity-swapped unanswerable questions for one passage.
///
/// The entity swapped is the first mention in the question (after
/// tokenization) that belongs to the passage's entity set and has at least
/// one valid replacement. Replacements share its type, differ from it, and
/// do not occur as a substring of any unanswerable question of the passage.
pub fn entity_replacement<R: Rng + ?Sized>(paragraph: &Paragraph, gazetteer: &EntityGazetteer, rng: &mut R) -> ReplacementOutcome {
    let passage_entities = gazetteer.entities(&tokenize(&paragraph.context));
    let unanswerable: Vec<String> = paragraph
        .qas
        .iter()
        .filter(|q| q.is_impossible)
        .map(|q| tokenize(&q.question).join(" "))
        .collect();
    let usable = |e: &String| !unanswerable.iter().any(|q| q.contains(e.as_str()));

    let mut out = ReplacementOutcome::default();
    for q in paragraph.qas.iter().filter(|q| !q.is_impossible) {
        let tokens = tokenize(&q.question);
        let mentions: Vec<Mention> = gazetteer
            .mentions(&tokens)
            .into_iter()
            .filter(|m| passage_entities.contains(&m.surface))
            .collect();
        if mentions.is_empty() {
            continue;
        }
        let mut done = false;
        for m in &mentions {
            let ty = gazetteer.entity_type(&m.surface).expect("mention is in the gazetteer");
            let candidates: Vec<&String> = passage_entities
                .iter()
                .filter(|e| **e != m.surface && gazetteer.entity_type(e) == Some(ty) && usable(e))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let pick = candidates[rng.random_range(0..candidates.len())];
            let mut words: Vec<String> = tokens[..m.start].to_vec();
            words.extend(tokenize(pick));
            words.extend_from_slice(&tokens[m.start + m.len..]);
            out.examples.push(ReplacementExample {
                question_id: q.id.clone(),
                question: words.join(" "),
                original: m.surface.clone(),
                replacement: pick.clone(),
                entity_type: ty.to_string(),
            });
            done = true;
            break;
        }
        if !done {
            out.skipped += 1;
        }
    }
    out
}

/// How many examples each generator produced and how many were kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StrategyReport {
    pub available: usize,
    pub target: usize,
    pub taken: usize,
    pub shortfall: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentReport {
    pub shuffle: StrategyReport,
    pub replacement: StrategyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    /// The input dataset plus the added unanswerable questions.
    pub dataset: DatasetFile,
    pub report: AugmentReport,
}

fn subsample<T: Clone, R: Rng + ?Sized>(items: &[T], target: usize, skipped: usize, rng: &mut R) -> (Vec<T>, StrategyReport) {
    let taken = target.min(items.len());
    let mut picked = index::sample(rng, items.len(), taken).into_vec();
    picked.sort_unstable();
    let report = StrategyReport {
        available: items.len(),
        target,
        taken,
        shortfall: target - taken,
        skipped,
    };
    (picked.into_iter().map(|i| items[i].clone()).collect(), report)
}

fn unanswerable(id: String, text: String) -> Question {
    Question {
        id,
        question: text,
        is_impossible: true,
        answers: Vec::new(),
        options: Vec::new(),
        label: None,
    }
}

/// Runs both generators over every article and keeps a seeded uniform
/// subsample of each. Added questions get ids `<id>_shuffle` and `<id>_replace`.
pub fn build_augmentation_set<R: Rng + ?Sized>(
    ds: &DatasetFile,
    gazetteer: &EntityGazetteer,
    target_shuffle: usize,
    target_replace: usize,
    rng: &mut R,
) -> Result<AugmentOutcome> {
    if ds.task == TaskKind::Mc {
        return Err(Error::RecipeDatasetMismatch("augmentation needs a span dataset".into()));
    }
    // (article, paragraph, example)
    let mut shuffles = Vec::new();
    let mut replacements = Vec::new();
    let mut shuffle_skips = 0;
    let mut replace_skips = 0;
    for (ai, article) in ds.data.iter().enumerate() {
        let s = question_passage_shuffle(article);
        shuffle_skips += s.skipped;
        shuffles.extend(s.examples.into_iter().map(|e| (ai, e.target_paragraph, e)));
        for (pi, p) in article.paragraphs.iter().enumerate() {
            let r = entity_replacement(p, gazetteer, rng);
            replace_skips += r.skipped;
            replacements.extend(r.examples.into_iter().map(|e| (ai, pi, e)));
        }
    }
    let (shuffles, shuffle_report) = subsample(&shuffles, target_shuffle, shuffle_skips, rng);
    let (replacements, replace_report) = subsample(&replacements, target_replace, replace_skips, rng);

    let mut dataset = ds.clone();
    dataset.task = TaskKind::Seu;
    for (ai, pi, e) in shuffles {
        dataset.data[ai].paragraphs[pi]
            .qas
            .push(unanswerable(format!("{}_shuffle", e.question_id), e.question));
    }
    for (ai, pi, e) in replacements {
        dataset.data[ai].paragraphs[pi]
            .qas
            .push(unanswerable(format!("{}_replace", e.question_id), e.question));
    }
    dataset.validate()?;
    Ok(AugmentOutcome {
        dataset,
        report: AugmentReport {
            shuffle: shuffle_report,
            replacement: replace_report,
        },
    })
}

#[cfg(test)]
mod tests;
