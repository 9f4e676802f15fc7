//! Span decoding, the answerability score and the dev threshold search on
//! hand-made model outputs.
//!
//! `cargo run --example decode`

use advreg::decoder::{best_span, is_no_answer, na_score, threshold_search, ThresholdPoint};

fn main() -> advreg::Result<()> {
    // position 0 is the question marker, the rest is passage
    let mask = [false, true, true, true, true, true];
    let p_s = [0.30, 0.05, 0.50, 0.05, 0.05, 0.05];
    let p_e = [0.30, 0.05, 0.05, 0.10, 0.45, 0.05];
    for max_len in [1, 2, 3] {
        let span = best_span(&p_s, &p_e, &mask, max_len)?;
        println!("max_answer_len {max_len}: span ({}, {}) prob {:.4}", span.start, span.end, span.prob);
    }

    let span = best_span(&p_s, &p_e, &mask, 30)?;
    for p_na in [0.05, 0.5, 0.9] {
        let score = na_score(p_na, span.prob);
        println!("p_na {p_na}: score {score:+.4}, no answer at threshold 0: {}", is_no_answer(score, 0.0));
    }

    let dev = [
        ThresholdPoint { score: -0.20, no_answer: false, f1_if_answered: 1.0 },
        ThresholdPoint { score: -0.05, no_answer: false, f1_if_answered: 0.5 },
        ThresholdPoint { score: 0.10, no_answer: true, f1_if_answered: 0.0 },
        ThresholdPoint { score: 0.02, no_answer: true, f1_if_answered: 0.0 },
        ThresholdPoint { score: 0.30, no_answer: false, f1_if_answered: 1.0 },
    ];
    let choice = threshold_search(&dev)?;
    println!("dev threshold {:.3} gives F1 {:.3}", choice.threshold, choice.f1);
    Ok(())
}
