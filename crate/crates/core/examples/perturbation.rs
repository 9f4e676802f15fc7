//! Adversarial and virtual adversarial perturbations of one example's input
//! embeddings on an untrained model.
//!
//! `cargo run --example perturbation`

use advreg::adversary::{frozen_forward, probe_at, vat_perturb, PerturbationConfig, Sample};
use advreg::model::{pack_span, ExampleInput, ModelConfig, RcModel, TaskKind};
use advreg::numeric;
use advreg::objectives::Target;
use advreg::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> advreg::Result<()> {
    let model = RcModel::new(ModelConfig {
        vocab_size: 40,
        hidden_dim: 16,
        max_seq_len: 24,
        num_encoder_blocks: 1,
        seed: 1,
    })?;
    let enc = pack_span(&[7, 8, 9], &[10, 11, 12, 13, 14, 15, 16, 17], 24)?;
    let start = enc.passage_start + 2;
    let input = ExampleInput {
        task: TaskKind::Seu,
        sequences: vec![enc],
    };
    let sample = Sample {
        id: "example".into(),
        input: input.clone(),
        target: Some(Target::span_or_na(Some((start, start + 1)))),
    };

    for eps in [1e-3, 1e-2, 1e-1] {
        let (clean, adv) = probe_at(&model, &sample, eps)?;
        println!("AT eps {eps:<6} clean loss {clean:.5} adversarial loss {adv:.5}");
    }

    let mut tape = Tape::new();
    let pv = model.register(&mut tape, false);
    let x = model.embed_example(&mut tape, &pv, &input)?;
    let x = tape.tensor(x);
    let mut forward = frozen_forward(&model, &input);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = PerturbationConfig::span();
    let moved = vat_perturb(&x, &input.row_mask(), &mut forward, &config, &mut rng)?;
    let shift: Vec<f64> = moved.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
    println!(
        "VAT ||r|| {:.6} = eps * ||x|| {:.6} (no label used)",
        numeric::norm(&shift),
        config.epsilon * x.frobenius_norm()
    );
    Ok(())
}
