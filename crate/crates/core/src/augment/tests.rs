use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Answer, DATASET_VERSION};

fn words(s: &str) -> Vec<String> {
    tokenize(s)
}

fn answerable(id: &str, question: &str, answer: &str, start: usize) -> Question {
    Question {
        id: id.into(),
        question: question.into(),
        is_impossible: false,
        answers: vec![Answer {
            text: answer.into(),
            answer_start: start,
        }],
        options: vec![],
        label: None,
    }
}

fn paragraph(id: &str, context: &str, qas: Vec<Question>) -> Paragraph {
    Paragraph {
        id: id.into(),
        context: context.into(),
        qas,
    }
}

fn article(paragraphs: Vec<Paragraph>) -> Article {
    Article {
        id: "a".into(),
        title: String::new(),
        paragraphs,
    }
}

fn bm25_oracle(docs: &[Vec<String>], query: &[String], doc: usize) -> f64 {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut s = 0.0;
    for t in query {
        let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let tf = docs[doc].iter().filter(|w| *w == t).count() as f64;
        s += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * docs[doc].len() as f64 / avg));
    }
    s
}

#[test]
fn bm25_worked_examples() {
    let docs = vec![words("alpha beta gamma")];
    let idx = Bm25Index::new(&docs);
    assert_eq!(idx.score(&words("delta"), 0).unwrap(), 0.0);
    let s = idx.score(&words("beta"), 0).unwrap();
    assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!((s - 0.2877).abs() < 1e-4);
    assert!(matches!(idx.score(&words("beta"), 1), Err(Error::UnknownDocument(1))));
}

#[test]
fn bm25_matches_direct_formula() {
    let docs = vec![
        words("the red fox runs over the hill"),
        words("a fox and a hound"),
        words("the hill is red in autumn and red in spring"),
    ];
    let idx = Bm25Index::new(&docs);
    let q = words("red fox hill");
    for d in 0..3 {
        let s = idx.score(&q, d).unwrap();
        assert!((s - bm25_oracle(&docs, &q, d)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn bm25_nondecreasing_in_term_frequency(tf in 0usize..20, filler in 1usize..20, others in 1usize..5) {
        // the doc grows with tf but the corpus average grows with it
        let make = |tf: usize| {
            let mut d = vec!["x".to_string(); tf];
            d.extend(vec!["y".to_string(); filler]);
            let mut docs = vec![d];
            docs.extend((0..others).map(|_| vec!["z".to_string(); filler + 10]));
            docs
        };
        let q = vec!["x".to_string()];
        let lo = Bm25Index::new(&make(tf)).score(&q, 0).unwrap();
        let hi = Bm25Index::new(&make(tf + 1)).score(&q, 0).unwrap();
        prop_assert!(hi >= lo);
    }
}

#[test]
fn shuffle_skips_when_answer_everywhere() {
    let a = article(vec![
        paragraph("p0", "the capital is paris", vec![answerable("q0", "what is the capital", "paris", 3)]),
        paragraph("p1", "Paris is big", vec![]),
    ]);
    let out = question_passage_shuffle(&a);
    assert!(out.examples.is_empty());
    assert_eq!(out.skipped, 1);
}

#[test]
fn shuffle_two_passages_takes_the_only_candidate() {
    let a = article(vec![
        paragraph("p0", "the capital is paris", vec![answerable("q0", "what is the capital", "paris", 3)]),
        paragraph("p1", "nothing shared here", vec![]),
    ]);
    let out = question_passage_shuffle(&a);
    assert_eq!(out.examples.len(), 1);
    assert_eq!(out.examples[0].target_paragraph, 1);
    assert_eq!(out.examples[0].score, 0.0);
}

#[test]
fn shuffle_matches_rank_and_filter_oracle() {
    let a = article(vec![
        paragraph(
            "p0",
            "the river flows north past the old mill",
            vec![
                answerable("q0", "which way does the river flow", "north", 3),
                answerable("q1", "what is past the river", "the old mill", 5),
            ],
        ),
        paragraph("p1", "the river is wide and flows north in spring", vec![]),
        paragraph("p2", "the river passes the old mill and the bridge", vec![]),
        paragraph("p3", "a mill stands by a river", vec![]),
    ]);
    let docs: Vec<Vec<String>> = a.paragraphs.iter().map(|p| words(&p.context)).collect();
    let out = question_passage_shuffle(&a);
    for (q, ex) in a.paragraphs[0].qas.iter().zip(&out.examples) {
        let qw = words(&q.question);
        let ans = words(&q.answers[0].text);
        let mut ranked: Vec<(usize, f64)> = (1..4).map(|d| (d, bm25_oracle(&docs, &qw, d))).collect();
        ranked.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        let expected = ranked
            .iter()
            .find(|(d, _)| !docs[*d].windows(ans.len()).any(|w| w == &ans[..]))
            .unwrap();
        assert_eq!(ex.target_paragraph, expected.0, "question {}", q.id);
        assert!(!contains_run(&docs[ex.target_paragraph], &ans));
    }
    assert_eq!(out.examples.len(), 2);
    assert_eq!(out.examples[0].target_paragraph, 2);
    assert_eq!(out.examples[1].target_paragraph, 1);
}

fn gazetteer() -> EntityGazetteer {
    EntityGazetteer::parse("Ovra\tperson\nTalvin\tperson\nMera Sol\tperson\nKestra\tcity\nnew kestra\tcity\n").unwrap()
}

#[test]
fn gazetteer_parsing_and_longest_match() {
    let g = gazetteer();
    assert_eq!(g.len(), 5);
    assert_eq!(g.entity_type("MERA sol"), Some("person"));
    let m = g.mentions(&words("mera sol left new kestra for kestra"));
    let surfaces: Vec<&str> = m.iter().map(|m| m.surface.as_str()).collect();
    assert_eq!(surfaces, ["mera sol", "new kestra", "kestra"]);
    assert_eq!(m[1].start, 3);
    assert_eq!(m[1].len, 2);
    assert!(EntityGazetteer::parse("no tab here").is_err());
    assert!(EntityGazetteer::parse("ovra\tperson\novra\tcity").is_err());
    assert_eq!(EntityGazetteer::parse(&g.to_text()).unwrap(), g);
}

#[test]
fn replacement_needs_a_second_entity_of_the_type() {
    let p = paragraph(
        "p",
        "ovra lives in kestra",
        vec![answerable("q0", "where does ovra live", "kestra", 3)],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = entity_replacement(&p, &gazetteer(), &mut rng);
    assert!(out.examples.is_empty());
    assert_eq!(out.skipped, 1);
}

#[test]
fn replacement_forced_choice() {
    let p = paragraph(
        "p",
        "ovra met talvin in kestra",
        vec![answerable("q0", "where did Ovra meet someone", "kestra", 4)],
    );
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = entity_replacement(&p, &gazetteer(), &mut rng);
        assert_eq!(out.examples.len(), 1);
        let e = &out.examples[0];
        assert_eq!(e.question, "where did talvin meet someone");
        assert_eq!((e.original.as_str(), e.replacement.as_str()), ("ovra", "talvin"));
    }
}

#[test]
fn replacement_excludes_entities_in_unanswerable_questions() {
    let mut na = answerable("q1", "what did Talvin eat", "x", 0);
    na.is_impossible = true;
    na.answers.clear();
    let p = paragraph(
        "p",
        "ovra met talvin and mera sol in kestra",
        vec![answerable("q0", "where did ovra go", "kestra", 7), na],
    );
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = entity_replacement(&p, &gazetteer(), &mut rng);
        assert_eq!(out.examples[0].replacement, "mera sol");
        assert_eq!(out.examples[0].question, "where did mera sol go");
    }
}

#[test]
fn replacement_replays_the_seeded_draw() {
    let p = paragraph(
        "p",
        "ovra talvin and mera sol visited kestra",
        vec![
            answerable("q0", "who did ovra visit with", "talvin", 1),
            answerable("q1", "where did mera sol go with talvin", "kestra", 6),
        ],
    );
    let seed = 42;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = entity_replacement(&p, &gazetteer(), &mut rng);

    let mut replay = ChaCha8Rng::seed_from_u64(seed);
    let first = ["talvin", "mera sol"][replay.random_range(0..2)];
    let second = ["ovra", "talvin"][replay.random_range(0..2)];
    assert_eq!(out.examples.len(), 2);
    assert_eq!(out.examples[0].question, format!("who did {first} visit with"));
    assert_eq!(out.examples[1].question, format!("where did {second} go with talvin"));
}

fn corpus() -> DatasetFile {
    let mut data = Vec::new();
    for a in 0..6 {
        let names = ["ovra", "talvin", "mera sol"];
        let paragraphs = (0..3)
            .map(|i| {
                let who = names[(a + i) % 3];
                let other = names[(a + i + 1) % 3];
                paragraph(
                    &format!("p{i}"),
                    &format!("{who} met {other} near kestra on day{a}x{i}"),
                    vec![answerable(
                        &format!("q{a}_{i}"),
                        &format!("when did {who} meet someone"),
                        &format!("day{a}x{i}"),
                        tokenize(who).len() + tokenize(other).len() + 4,
                    )],
                )
            })
            .collect();
        data.push(Article {
            id: format!("a{a}"),
            title: String::new(),
            paragraphs,
        });
    }
    DatasetFile {
        version: DATASET_VERSION.into(),
        task: TaskKind::Seu,
        data,
    }
}

#[test]
fn build_respects_targets_and_invariants() {
    let ds = corpus();
    ds.validate().unwrap();
    let g = gazetteer();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let none = build_augmentation_set(&ds, &g, 0, 0, &mut rng).unwrap();
    assert_eq!(none.dataset, ds);
    assert_eq!(none.report.shuffle.available, 18);
    assert_eq!(none.report.replacement.available, 18);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let some = build_augmentation_set(&ds, &g, 5, 100, &mut rng).unwrap();
    assert_eq!(some.report.shuffle.taken, 5);
    assert_eq!(some.report.replacement.taken, 18);
    assert_eq!(some.report.replacement.shortfall, 82);
    assert_eq!(some.dataset.num_questions(), 18 + 5 + 18);

    let originals: HashMap<&str, &Question> = ds.questions().map(|(_, q)| (q.id.as_str(), q)).collect();
    for (p, q) in some.dataset.questions().filter(|(_, q)| q.is_impossible) {
        if let Some(src) = q.id.strip_suffix("_shuffle") {
            let answer = words(&originals[src].answers[0].text);
            assert!(!contains_run(&words(&p.context), &answer));
        } else {
            let src = originals[q.id.strip_suffix("_replace").unwrap()];
            let (a, b) = (words(&src.question), words(&q.question));
            let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
            let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
            let old = a[prefix..a.len() - suffix].join(" ");
            let new = b[prefix..b.len() - suffix].join(" ");
            assert_ne!(old, new);
            assert_eq!(g.entity_type(&old), g.entity_type(&new));
            assert!(g.entity_type(&old).is_some());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let again = build_augmentation_set(&ds, &g, 5, 100, &mut rng).unwrap();
    assert_eq!(again.dataset.to_json(), some.dataset.to_json());
}

#[test]
fn build_rejects_choice_datasets() {
    let mut ds = corpus();
    ds.task = TaskKind::Mc;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        build_augmentation_set(&ds, &gazetteer(), 1, 1, &mut rng),
        Err(Error::RecipeDatasetMismatch(_))
    ));
}
