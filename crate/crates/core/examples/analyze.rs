//! Buckets dev questions by rare-word difficulty and compares a baseline
//! model with an adversarially trained one per bucket.
//!
//! `cargo run --release --example analyze`

use advreg::experiment::{evaluate_checkpoint, scored_examples, toy, train_and_evaluate, RunData};
use advreg::insight::{bucketize, improvement_csv, rare_word_set, relative_improvement, BucketReport, DEFAULT_BOUNDARIES};
use advreg::model::TaskKind;
use advreg::synth::{generate_synthetic, SynthSpec};

fn main() -> advreg::Result<()> {
    let corpus = generate_synthetic(&SynthSpec {
        train_questions: 1000,
        dev_questions: 200,
        facts_per_passage: 3,
        ..SynthSpec::default()
    })?;
    let data = RunData::prepare(TaskKind::Seu, &corpus.train, Some(&corpus.dev), None, toy::shape().max_seq_len)?;
    let rare = rare_word_set(&corpus.dev, 100, "dev")?;

    let mut reports: Vec<BucketReport> = Vec::new();
    for at in [false, true] {
        let mut recipe = toy::recipe(0);
        recipe.at = at;
        let run = train_and_evaluate(&data, &toy::shape(), &recipe, None)?;
        let (encoded, ev) = evaluate_checkpoint(&run.checkpoint, &corpus.dev, None, 30)?;
        let report = bucketize(&scored_examples(&encoded, &ev, &rare)?, &DEFAULT_BOUNDARIES)?;
        println!("{}", recipe.label());
        for b in &report.buckets {
            println!("  {:<14} n {:>3}  F1 {:?}", b.label, b.all.count, b.all.f1.map(|f| (f * 1000.0).round() / 1000.0));
        }
        reports.push(report);
    }
    match relative_improvement(&reports[0], &reports[1]) {
        Ok(rows) => print!("{}", improvement_csv(&rows)),
        Err(e) => println!("no improvement table: {e}"),
    }
    Ok(())
}
