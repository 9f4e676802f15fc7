//! Trains the toy span model under several regularization recipes and
//! reports median dev F1 and EM over seeds.
//!
//! `cargo run --release --example compare_recipes -- base at da da+nel+at vat-unlabeled`
//!
//! Recipes join `at`, `vat`, `vat-unlabeled`, `nel` and `da` with `+`.
//! `--se` trains the answerable questions only, with the unanswerable ones as
//! unlabeled data. `--seeds N` limits the number of seeds.

use std::time::Instant;

use advreg::augment::build_augmentation_set;
use advreg::experiment::{toy, train_and_evaluate, RunData};
use advreg::model::TaskKind;
use advreg::synth::generate_synthetic;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> advreg::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let se = args.iter().any(|a| a == "--se");
    let seeds = match args.iter().position(|a| a == "--seeds") {
        Some(i) => {
            let n = args.get(i + 1).and_then(|v| v.parse().ok()).unwrap_or(toy::SEEDS.len());
            args.drain(i..(i + 2).min(args.len()));
            n
        }
        None => toy::SEEDS.len(),
    };
    args.retain(|a| !a.starts_with("--"));
    if args.is_empty() {
        args = vec!["base".into(), "at".into()];
    }

    let corpus = generate_synthetic(&toy::corpus_spec())?;
    let task = if se { TaskKind::Se } else { TaskKind::Seu };
    let len = toy::shape().max_seq_len;
    let plain = RunData::prepare(task, &corpus.train, Some(&corpus.dev), Some(&corpus.train), len)?;
    let augmented = if se {
        None
    } else {
        let (shuffle, replace) = toy::AUGMENT;
        let out = build_augmentation_set(&corpus.train, &corpus.gazetteer, shuffle, replace, &mut ChaCha8Rng::seed_from_u64(0))?;
        println!("augmentation {:?}", out.report);
        Some(RunData::prepare(task, &out.dataset, Some(&corpus.dev), Some(&corpus.train), len)?)
    };

    for name in &args {
        let started = Instant::now();
        let (mut f1s, mut ems) = (Vec::new(), Vec::new());
        for &seed in toy::SEEDS.iter().take(seeds) {
            let mut recipe = toy::recipe(seed);
            for part in name.split('+') {
                match part {
                    "base" => {}
                    "at" => recipe.at = true,
                    "vat" => recipe.vat = true,
                    "vat-unlabeled" => recipe.vat_unlabeled = true,
                    "nel" => recipe.nel = true,
                    "da" => recipe.da = true,
                    other => return Err(advreg::Error::InvalidConfig(format!("unknown recipe part '{other}'"))),
                }
            }
            let data = match (&augmented, recipe.da) {
                (Some(a), true) => a,
                (None, true) => return Err(advreg::Error::InvalidConfig("da needs the span-or-no-answer task".into())),
                _ => &plain,
            };
            let metrics = train_and_evaluate(data, &toy::shape(), &recipe, None)?.dev.expect("dev set given").metrics;
            f1s.push(metrics.f1.unwrap_or(f64::NAN));
            ems.push(metrics.em.unwrap_or(f64::NAN));
        }
        println!(
            "{name:<16} median F1 {:.4} EM {:.4} over {} seeds ({:.0}s)",
            toy::median(&f1s),
            toy::median(&ems),
            f1s.len(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
