//! Builds unanswerable questions by question-passage shuffling and entity
//! replacement, then shows one of each.
//!
//! `cargo run --example augment`

use advreg::augment::build_augmentation_set;
use advreg::synth::{generate_synthetic, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> advreg::Result<()> {
    let corpus = generate_synthetic(&SynthSpec {
        train_questions: 300,
        dev_questions: 50,
        ..SynthSpec::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = build_augmentation_set(&corpus.train, &corpus.gazetteer, 100, 100, &mut rng)?;
    println!("{:?}", out.report);
    let originals: std::collections::HashMap<_, _> = corpus.train.questions().map(|(_, q)| (q.id.clone(), q.question.clone())).collect();
    for suffix in ["_shuffle", "_replace"] {
        if let Some((p, q)) = out.dataset.questions().find(|(_, q)| q.id.ends_with(suffix)) {
            let source = &originals[q.id.trim_end_matches(suffix)];
            println!("{suffix}: '{source}' -> '{}'", q.question);
            println!("  attached to: {}", p.context);
        }
    }
    Ok(())
}
