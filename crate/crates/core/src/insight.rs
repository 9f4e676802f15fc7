//! Rare-word difficulty analysis.
//!
//! Examples are scored by the share of rare words in their passage and
//! question, grouped into difficulty buckets, and compared bucket by bucket
//! between two models.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::data::{tokenize, DatasetFile};
use crate::error::{Error, Result};

pub const DEFAULT_BOUNDARIES: [f64; 4] = [0.01, 0.02, 0.03, 0.05];
pub const DEFAULT_RARE_WORDS: usize = 10_000;

/// Word counts over a training file: each passage once, plus every question.
pub fn word_frequencies(ds: &DatasetFile) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for article in &ds.data {
        for p in &article.paragraphs {
            let texts = std::iter::once(&p.context).chain(p.qas.iter().map(|q| &q.question));
            for w in texts.flat_map(|t| tokenize(t)) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// The `k` least frequent words of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareWordSet {
    pub source: String,
    pub k: usize,
    pub words: BTreeSet<String>,
}

impl RareWordSet {
    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowest-frequency words, ties broken lexicographically; all words when
/// the vocabulary is smaller than `k`.
pub fn rare_words(counts: &BTreeMap<String, usize>, k: usize, source: &str) -> Result<RareWordSet> {
    if k == 0 {
        return Err(Error::InvalidConfig("rare word count must be >= 1".into()));
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&String, usize)> = counts.iter().map(|(w, &c)| (w, c)).collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(RareWordSet {
        source: source.to_string(),
        k,
        words: ranked.into_iter().take(k).map(|(w, _)| w.clone()).collect(),
    })
}

pub fn rare_word_set(ds: &DatasetFile, k: usize, source: &str) -> Result<RareWordSet> {
    rare_words(&word_frequencies(ds), k, source)
}

/// Rare-word occurrences over total words of passage and question.
pub fn difficulty(passage: &[String], question: &[String], rare: &RareWordSet) -> Result<f64> {
    let total = passage.len() + question.len();
    if total == 0 {
        return Err(Error::EmptyExample);
    }
    let hits = passage.iter().chain(question).filter(|w| rare.contains(w)).count();
    Ok(hits as f64 / total as f64)
}

/// One evaluated example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredExample {
    pub difficulty: f64,
    pub no_answer: bool,
    pub em: f64,
    pub f1: f64,
}

/// Per-example EM and F1 averaged over several models' runs on the same examples.
pub fn average_scores(runs: &[Vec<ScoredExample>]) -> Result<Vec<ScoredExample>> {
    let Some(first) = runs.first() else {
        return Err(Error::EmptyDevSet);
    };
    if let Some(r) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(Error::LengthMismatch(first.len(), r.len()));
    }
    let n = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| ScoredExample {
            em: runs.iter().map(|r| r[i].em).sum::<f64>() / n,
            f1: runs.iter().map(|r| r[i].f1).sum::<f64>() / n,
            ..first[i]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BucketStats {
    pub count: usize,
    /// Mean EM, `None` for an empty subset.
    pub em: Option<f64>,
    pub f1: Option<f64>,
}

impl BucketStats {
    fn from_examples<'a>(examples: impl Iterator<Item = &'a ScoredExample>) -> Self {
        let (mut count, mut em, mut f1) = (0usize, 0.0, 0.0);
        for e in examples {
            count += 1;
            em += e.em;
            f1 += e.f1;
        }
        if count == 0 {
            return BucketStats::default();
        }
        BucketStats {
            count,
            em: Some(em / count as f64),
            f1: Some(f1 / count as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub label: String,
    pub low: f64,
    pub high: f64,
    pub all: BucketStats,
    pub answerable: BucketStats,
    pub unanswerable: BucketStats,
}

impl Bucket {
    pub fn subsets(&self) -> [(&'static str, &BucketStats); 3] {
        [("all", &self.all), ("answerable", &self.answerable), ("unanswerable", &self.unanswerable)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub boundaries: Vec<f64>,
    pub buckets: Vec<Bucket>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    bucket: &'a str,
    subset: &'a str,
    count: usize,
    em: Option<f64>,
    f1: Option<f64>,
}

impl BucketReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Columns `bucket,subset,count,em,f1`; empty subsets leave the metrics blank.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.buckets {
            for (subset, s) in b.subsets() {
                w.serialize(CsvRow {
                    bucket: &b.label,
                    subset,
                    count: s.count,
                    em: s.em,
                    f1: s.f1,
                })
                .expect("in-memory csv write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }
}

/// Index of the bucket holding `d`: intervals `[low, high)`, the last closed at 1.
pub fn bucket_index(d: f64, boundaries: &[f64]) -> usize {
    boundaries.partition_point(|&b| b <= d)
}

fn check_boundaries(boundaries: &[f64]) -> Result<()> {
    if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedBoundaries);
    }
    Ok(())
}

fn bucket_label(low: f64, high: f64, last: bool) -> String {
    if last {
        format!("[{low}, {high}]")
    } else {
        format!("[{low}, {high})")
    }
}

pub fn bucketize(examples: &[ScoredExample], boundaries: &[f64]) -> Result<BucketReport> {
    check_boundaries(boundaries)?;
    let n = boundaries.len() + 1;
    let mut groups: Vec<Vec<&ScoredExample>> = vec![Vec::new(); n];
    for e in examples {
        groups[bucket_index(e.difficulty, boundaries)].push(e);
    }
    let buckets = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let low = if i == 0 { 0.0 } else { boundaries[i - 1] };
            let high = if i == n - 1 { 1.0 } else { boundaries[i] };
            Bucket {
                label: bucket_label(low, high, i == n - 1),
                low,
                high,
                all: BucketStats::from_examples(g.iter().copied()),
                answerable: BucketStats::from_examples(g.iter().copied().filter(|e| !e.no_answer)),
                unanswerable: BucketStats::from_examples(g.iter().copied().filter(|e| e.no_answer)),
            }
        })
        .collect();
    Ok(BucketReport {
        boundaries: boundaries.to_vec(),
        buckets,
    })
}

/// F1 change of a candidate over a baseline in one bucket and subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementRow {
    pub bucket: String,
    pub subset: String,
    pub baseline_f1: f64,
    pub candidate_f1: f64,
    pub relative: f64,
}

/// `(f1_b - f1_a) / f1_a` for every bucket and subset present in both reports.
pub fn relative_improvement(baseline: &BucketReport, candidate: &BucketReport) -> Result<Vec<ImprovementRow>> {
    if baseline.boundaries != candidate.boundaries {
        return Err(Error::BoundaryMismatch);
    }
    let mut rows = Vec::new();
    for (a, b) in baseline.buckets.iter().zip(&candidate.buckets) {
        for ((subset, sa), (_, sb)) in a.subsets().into_iter().zip(b.subsets()) {
            let (Some(fa), Some(fb)) = (sa.f1, sb.f1) else {
                continue;
            };
            if fa == 0.0 {
                return Err(Error::DivisionByZeroMetric(format!("{} {subset}", a.label)));
            }
            rows.push(ImprovementRow {
                bucket: a.label.clone(),
                subset: subset.to_string(),
                baseline_f1: fa,
                candidate_f1: fb,
                relative: (fb - fa) / fa,
            });
        }
    }
    Ok(rows)
}

pub fn improvement_csv(rows: &[ImprovementRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}
