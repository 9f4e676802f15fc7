//! Generates a synthetic span-extraction corpus with unanswerable questions
//! and prints its composition and one question.
//!
//! `cargo run --example generate_corpus -- [out_dir]`

use advreg::data::summary;
use advreg::synth::{generate_synthetic, SynthSpec};

fn main() -> advreg::Result<()> {
    let spec = SynthSpec {
        train_questions: 300,
        dev_questions: 100,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec)?;
    println!("train {:?}", summary(&corpus.train));
    println!("dev {:?}", summary(&corpus.dev));
    println!("gazetteer entries {}", corpus.gazetteer.len());
    if let Some((p, q)) = corpus.train.questions().next() {
        println!("passage: {}", p.context);
        println!("question: {} (unanswerable: {})", q.question, q.is_impossible);
        for a in &q.answers {
            println!("answer: '{}' at token {}", a.text, a.answer_start);
        }
    }
    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir).map_err(|e| advreg::Error::io(&dir, e))?;
        corpus.train.save(format!("{dir}/train.json"))?;
        corpus.dev.save(format!("{dir}/dev.json"))?;
        println!("wrote {dir}/train.json and {dir}/dev.json");
    }
    Ok(())
}
