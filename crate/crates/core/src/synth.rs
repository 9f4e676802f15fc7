//! Seeded synthetic reading-comprehension corpora.
//!
//! Passages list facts of the form `the <attr> of <entity> is <value> .`
//! with distinct attributes per passage. Questions ask `what is the <attr>
//! of <entity> ?`; unanswerable ones ask an attribute the passage lacks.
//! Entity names and values come from small common pools, except in a
//! controllable share of passages whose names are one-off rare words.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::EntityGazetteer;
use crate::data::{tokenize, Answer, Article, DatasetFile, Paragraph, Question};
use crate::error::{Error, Result};
use crate::model::TaskKind;

/// Attribute word in passages, its wording in questions, and the type of its values.
const ATTRIBUTES: [(&str, &str, &str); 12] = [
    ("color", "hue", "color"),
    ("home", "town", "city"),
    ("job", "occupation", "job"),
    ("pet", "animal", "animal"),
    ("car", "vehicle", "vehicle"),
    ("sport", "game", "sport"),
    ("food", "meal", "food"),
    ("drink", "beverage", "drink"),
    ("language", "tongue", "language"),
    ("school", "college", "school"),
    ("hobby", "pastime", "hobby"),
    ("instrument", "music", "instrument"),
];

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "sa", "tu", "vel", "do", "an", "bri", "cor", "eth", "fa", "gil", "hu", "ix", "jo", "ku",
    "mar", "no", "pel", "qua", "ros", "zen",
];

/// Sizes and rates of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: TaskKind,
    pub train_questions: usize,
    pub dev_questions: usize,
    pub passages_per_article: usize,
    pub facts_per_passage: usize,
    pub questions_per_passage: usize,
    /// Number of attributes in use, at most 12.
    pub attributes: usize,
    /// Common entity names shared across passages.
    pub entity_pool: usize,
    /// Common values per value type.
    pub value_pool: usize,
    /// Share of passages whose entities and values are one-off rare words.
    pub rare_fraction: f64,
    pub unanswerable_fraction: f64,
    /// Share of answerable training questions whose gold span is moved
    /// onto an adjacent token.
    pub label_noise: f64,
    /// Options per multiple-choice question.
    pub options: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task: TaskKind::Seu,
            train_questions: 2000,
            dev_questions: 500,
            passages_per_article: 3,
            facts_per_passage: 4,
            questions_per_passage: 2,
            attributes: 12,
            entity_pool: 40,
            value_pool: 8,
            rare_fraction: 0.2,
            unanswerable_fraction: 1.0 / 3.0,
            label_noise: 0.1,
            options: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.train_questions == 0 || self.dev_questions == 0 {
            return bad("question counts must be >= 1");
        }
        if self.passages_per_article == 0 || self.facts_per_passage == 0 || self.questions_per_passage == 0 {
            return bad("passages per article, facts and questions per passage must be >= 1");
        }
        if self.attributes < 2 || self.attributes > ATTRIBUTES.len() {
            return Err(Error::InvalidSpec(format!("attributes must be in [2, {}]", ATTRIBUTES.len())));
        }
        if self.facts_per_passage > self.attributes {
            return bad("more facts per passage than attributes");
        }
        if self.questions_per_passage > self.attributes {
            return bad("more questions per passage than attributes");
        }
        if self.entity_pool < 2 || self.value_pool < 2 {
            return bad("entity and value pools need at least 2 entries");
        }
        for (name, f) in [
            ("rare_fraction", self.rare_fraction),
            ("unanswerable_fraction", self.unanswerable_fraction),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidSpec(format!("{name} must be in [0, 1], got {f}")));
            }
        }
        if self.task == TaskKind::Mc && (self.options < 2 || self.options > self.value_pool) {
            return bad("options must be between 2 and the value pool size");
        }
        if self.unanswerable_fraction > 0.0 && self.facts_per_passage == self.attributes {
            return bad("unanswerable questions need an attribute missing from the passage");
        }
        Ok(())
    }
}

/// Train and dev files plus the gazetteer of every generated name.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: DatasetFile,
    pub dev: DatasetFile,
    pub gazetteer: EntityGazetteer,
}

struct Pools {
    entities: Vec<String>,
    /// Common values per value type, indexed like `value_types`.
    values: Vec<Vec<String>>,
    value_types: Vec<&'static str>,
}

struct Fact {
    attr: usize,
    entity: String,
    value: String,
}

struct Generator {
    rng: ChaCha8Rng,
    pools: Pools,
    gazetteer: EntityGazetteer,
    rare_counter: usize,
}

fn pseudo_word(rng: &mut impl Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("nonempty")).collect()
}

impl Generator {
    fn new(spec: &SynthSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut seen = std::collections::HashSet::new();
        let mut fresh = |rng: &mut ChaCha8Rng, syl: usize| {
            for tries in 0.. {
                let w = pseudo_word(rng, syl + tries / 32);
                if seen.insert(w.clone()) {
                    return w;
                }
            }
            unreachable!()
        };
        let entities: Vec<String> = (0..spec.entity_pool).map(|_| fresh(&mut rng, 2)).collect();
        let mut value_types: Vec<&'static str> = ATTRIBUTES[..spec.attributes].iter().map(|a| a.2).collect();
        value_types.sort_unstable();
        value_types.dedup();
        let values: Vec<Vec<String>> = value_types
            .iter()
            .map(|_| {
                (0..spec.value_pool)
                    .map(|i| {
                        let w = fresh(&mut rng, 2);
                        if i % 4 == 3 {
                            format!("{} {w}", fresh(&mut rng, 1))
                        } else {
                            w
                        }
                    })
                    .collect()
            })
            .collect();
        let mut gazetteer = EntityGazetteer::new();
        for e in &entities {
            gazetteer.insert(e, "person")?;
        }
        for (ty, vs) in value_types.iter().zip(&values) {
            for v in vs {
                gazetteer.insert(v, ty)?;
            }
        }
        Ok(Generator {
            rng,
            pools: Pools {
                entities,
                values,
                value_types,
            },
            gazetteer,
            rare_counter: 0,
        })
    }

    fn rare_word(&mut self) -> String {
        self.rare_counter += 1;
        let stem = pseudo_word(&mut self.rng, 2);
        format!("{stem}x{}", self.rare_counter)
    }

    fn type_index(&self, attr: usize) -> usize {
        let ty = ATTRIBUTES[attr].2;
        self.pools.value_types.iter().position(|t| *t == ty).expect("known type")
    }

    fn passage_facts(&mut self, spec: &SynthSpec) -> Result<Vec<Fact>> {
        let rare = self.rng.random_bool(spec.rare_fraction);
        let mut attrs: Vec<usize> = (0..spec.attributes).collect();
        attrs.shuffle(&mut self.rng);
        attrs.truncate(spec.facts_per_passage);
        let subjects: Vec<String> = if rare {
            vec![self.rare_word(), self.rare_word()]
        } else {
            self.pools.entities.choose_multiple(&mut self.rng, 2).cloned().collect()
        };
        for s in subjects.iter().filter(|_| rare) {
            self.gazetteer.insert(s, "person")?;
        }
        let mut facts = Vec::with_capacity(attrs.len());
        for attr in attrs {
            let entity = subjects.choose(&mut self.rng).expect("two subjects").clone();
            let ty = self.type_index(attr);
            let value = if rare && self.rng.random_bool(0.5) {
                let v = self.rare_word();
                self.gazetteer.insert(&v, self.pools.value_types[ty])?;
                v
            } else {
                self.pools.values[ty].choose(&mut self.rng).expect("value pool").clone()
            };
            facts.push(Fact { attr, entity, value });
        }
        Ok(facts)
    }

    fn options(&mut self, attr: usize, gold: &str, n: usize) -> (Vec<String>, usize) {
        let ty = self.type_index(attr);
        let mut opts: Vec<String> = self.pools.values[ty]
            .iter()
            .filter(|v| v.as_str() != gold)
            .cloned()
            .collect::<Vec<_>>()
            .choose_multiple(&mut self.rng, n - 1)
            .cloned()
            .collect();
        opts.push(gold.to_string());
        opts.shuffle(&mut self.rng);
        let label = opts.iter().position(|o| o == gold).expect("gold kept");
        (opts, label)
    }

    fn paragraph(&mut self, spec: &SynthSpec, id: &str, noisy: bool) -> Result<Paragraph> {
        let facts = self.passage_facts(spec)?;
        let mut context: Vec<String> = Vec::new();
        let mut value_at = Vec::with_capacity(facts.len());
        for f in &facts {
            context.extend(["the".into(), ATTRIBUTES[f.attr].0.into(), "of".into(), f.entity.clone(), "is".into()]);
            value_at.push(context.len());
            context.extend(tokenize(&f.value));
            context.push(".".into());
        }
        let present: Vec<usize> = facts.iter().map(|f| f.attr).collect();
        let absent: Vec<usize> = (0..spec.attributes).filter(|a| !present.contains(a)).collect();
        let mut asked_present: Vec<usize> = (0..facts.len()).collect();
        asked_present.shuffle(&mut self.rng);
        let mut asked_absent = absent.clone();
        asked_absent.shuffle(&mut self.rng);

        let mut qas = Vec::new();
        for k in 0..spec.questions_per_passage {
            let qid = format!("{id}q{k}");
            let unanswerable = spec.task != TaskKind::Mc && !asked_absent.is_empty() && self.rng.random_bool(spec.unanswerable_fraction);
            if unanswerable {
                let attr = asked_absent.pop().expect("checked nonempty");
                let entity = facts.choose(&mut self.rng).expect("facts").entity.clone();
                qas.push(Question {
                    id: qid,
                    question: format!("what is the {} of {entity} ?", ATTRIBUTES[attr].1),
                    is_impossible: true,
                    answers: vec![],
                    options: vec![],
                    label: None,
                });
                continue;
            }
            let Some(fi) = asked_present.pop() else {
                continue;
            };
            let f = &facts[fi];
            let question = format!("what is the {} of {} ?", ATTRIBUTES[f.attr].1, f.entity);
            if spec.task == TaskKind::Mc {
                let (options, label) = self.options(f.attr, &f.value.clone(), spec.options);
                qas.push(Question {
                    id: qid,
                    question,
                    is_impossible: false,
                    answers: vec![],
                    options,
                    label: Some(label),
                });
                continue;
            }
            let len = tokenize(&f.value).len();
            let mut start = value_at[fi];
            let mut end = start + len;
            if noisy && self.rng.random_bool(spec.label_noise) {
                // one step left onto "is" or right onto "."
                if self.rng.random_bool(0.5) {
                    start -= 1;
                    end -= 1;
                } else {
                    start += 1;
                    end += 1;
                }
            }
            qas.push(Question {
                id: qid,
                question,
                is_impossible: false,
                answers: vec![Answer {
                    text: context[start..end].join(" "),
                    answer_start: start,
                }],
                options: vec![],
                label: None,
            });
        }
        Ok(Paragraph {
            id: id.to_string(),
            context: context.join(" "),
            qas,
        })
    }

    fn split(&mut self, spec: &SynthSpec, name: &str, questions: usize, noisy: bool) -> Result<DatasetFile> {
        let file_task = if spec.task == TaskKind::Mc {
            TaskKind::Mc
        } else if spec.unanswerable_fraction > 0.0 {
            TaskKind::Seu
        } else {
            spec.task
        };
        let mut ds = DatasetFile::new(file_task);
        let mut count = 0;
        let mut a = 0;
        while count < questions {
            let mut article = Article {
                id: format!("{name}-a{a}"),
                title: format!("{name} article {a}"),
                paragraphs: Vec::new(),
            };
            for p in 0..spec.passages_per_article {
                if count >= questions {
                    break;
                }
                let mut para = self.paragraph(spec, &format!("{name}-a{a}p{p}"), noisy)?;
                para.qas.truncate(questions - count);
                count += para.qas.len();
                article.paragraphs.push(para);
            }
            ds.data.push(article);
            a += 1;
        }
        Ok(ds)
    }
}

/// Generates train and dev splits from disjoint articles. Label noise is
/// applied to the training split only.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut g = Generator::new(spec)?;
    let train = g.split(spec, "train", spec.train_questions, true)?;
    let dev = g.split(spec, "dev", spec.dev_questions, false)?;
    train.validate()?;
    dev.validate()?;
    Ok(SynthCorpus {
        train,
        dev,
        gazetteer: g.gazetteer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{build_augmentation_set, contains_run};

    fn passage_attr(question: &str) -> String {
        let syn = tokenize(question)[3].clone();
        ATTRIBUTES.iter().find(|a| a.1 == syn).expect("known synonym").0.to_string()
    }

    fn small(task: TaskKind) -> SynthSpec {
        SynthSpec {
            task,
            train_questions: 300,
            dev_questions: 60,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec { train_questions: 0, ..SynthSpec::default() },
            SynthSpec { rare_fraction: 1.5, ..SynthSpec::default() },
            SynthSpec { unanswerable_fraction: -0.1, ..SynthSpec::default() },
            SynthSpec { facts_per_passage: 13, ..SynthSpec::default() },
            SynthSpec { task: TaskKind::Mc, options: 1, ..SynthSpec::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn sizes_and_answer_spans() {
        let spec = SynthSpec { unanswerable_fraction: 0.0, label_noise: 0.0, ..small(TaskKind::Se) };
        let c = generate_synthetic(&spec).unwrap();
        assert_eq!(c.train.num_questions(), 300);
        assert_eq!(c.dev.num_questions(), 60);
        assert_eq!(c.train.task, TaskKind::Se);
        for (p, q) in c.train.questions() {
            assert!(!q.is_impossible);
            let ctx = tokenize(&p.context);
            let ans = tokenize(&q.answers[0].text);
            assert!(contains_run(&ctx, &ans));
            assert_eq!(ctx[q.answers[0].answer_start - 1], "is");
        }
    }

    #[test]
    fn unanswerable_share_and_noise() {
        let spec = SynthSpec { train_questions: 3000, ..small(TaskKind::Seu) };
        let c = generate_synthetic(&spec).unwrap();
        let na = c.train.questions().filter(|(_, q)| q.is_impossible).count() as f64 / 3000.0;
        assert!((na - 1.0 / 3.0).abs() < 0.04, "{na}");
        let mut shifted = 0;
        let mut answerable = 0;
        for (p, q) in c.train.questions().filter(|(_, q)| !q.is_impossible) {
            answerable += 1;
            let ctx = tokenize(&p.context);
            if ctx[q.answers[0].answer_start - 1] != "is" {
                shifted += 1;
            }
            assert!(ctx.contains(&passage_attr(&q.question)));
        }
        let rate = shifted as f64 / answerable as f64;
        assert!((rate - 0.1).abs() < 0.03, "{rate}");
        for (p, q) in c.dev.questions() {
            if !q.is_impossible {
                assert_eq!(tokenize(&p.context)[q.answers[0].answer_start - 1], "is");
            } else {
                assert!(!tokenize(&p.context).contains(&passage_attr(&q.question)));
            }
        }
    }

    #[test]
    fn choice_files_hold_gold_value() {
        let c = generate_synthetic(&small(TaskKind::Mc)).unwrap();
        assert_eq!(c.train.task, TaskKind::Mc);
        for (p, q) in c.train.questions() {
            assert_eq!(q.options.len(), 4);
            let gold = &q.options[q.label.unwrap()];
            let attr = passage_attr(&q.question);
            let entity = tokenize(&q.question)[5].clone();
            let fact = format!("the {attr} of {entity} is {gold} .");
            assert!(p.context.contains(&fact), "{fact}");
        }
    }

    #[test]
    fn seed_replay_is_identical() {
        let a = generate_synthetic(&small(TaskKind::Seu)).unwrap();
        let b = generate_synthetic(&small(TaskKind::Seu)).unwrap();
        assert_eq!(a.train.to_json(), b.train.to_json());
        assert_eq!(a.gazetteer.to_text(), b.gazetteer.to_text());
        let c = generate_synthetic(&SynthSpec { seed: 1, ..small(TaskKind::Seu) }).unwrap();
        assert_ne!(a.train.to_json(), c.train.to_json());
    }

    #[test]
    fn corpus_supports_augmentation() {
        let c = generate_synthetic(&small(TaskKind::Seu)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = build_augmentation_set(&c.train, &c.gazetteer, 50, 50, &mut rng).unwrap();
        assert_eq!(out.report.shuffle.taken, 50);
        assert_eq!(out.report.replacement.taken, 50);
    }
}
