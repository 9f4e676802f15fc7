use super::*;
use crate::tensor::{Tensor, Var};

fn small_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        hidden_dim: 8,
        max_seq_len: 16,
        num_encoder_blocks: 1,
        seed: 7,
    }
}

fn model() -> RcModel {
    RcModel::new(small_config()).unwrap()
}

#[test]
fn config_validation() {
    let mut c = small_config();
    c.hidden_dim = 7;
    assert!(RcModel::new(c.clone()).is_err());
    c.hidden_dim = 8;
    c.max_seq_len = 3;
    assert!(RcModel::new(c).is_err());
}

#[test]
fn embed_rejects_empty_and_long() {
    let m = model();
    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    assert!(matches!(m.embed(&mut tape, &pv, &[], &[]), Err(Error::SequenceTooLong { .. })));
    let long = vec![5; 17];
    assert!(matches!(
        m.embed(&mut tape, &pv, &long, &[0; 17]),
        Err(Error::SequenceTooLong { .. })
    ));
    assert!(matches!(
        m.embed(&mut tape, &pv, &[25], &[0]),
        Err(Error::TokenOutOfVocab { id: 25, .. })
    ));
}

#[test]
fn embed_rows_are_normalized_and_position_aware() {
    let m = model();
    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let x = m.embed(&mut tape, &pv, &[5, 5, 6, 7], &[0, 0, 1, 1]).unwrap();
    let value = tape.tensor(x);
    assert_ne!(value.row(0), value.row(1));
    for r in 0..4 {
        let row = value.row(r);
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12, "row {r} mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "row {r} var {var}");
    }
}

#[test]
fn single_position_attention_is_self() {
    let m = model();
    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let x = m.embed(&mut tape, &pv, &[9], &[0]).unwrap();
    let h = m.encode(&mut tape, &pv, x, &[true]).unwrap();
    assert_eq!(tape.shape(h), &[1, 8]);
    assert!(tape.value(h).iter().all(|v| v.is_finite()));
}

fn encode_rows(m: &RcModel, x: &Tensor, mask: &[bool]) -> Tensor {
    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let h = m.encode(&mut tape, &pv, xv, mask).unwrap();
    tape.tensor(h)
}

fn random_rows(rows: usize, cols: usize, seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn masked_input_isolates_unmasked_position() {
    let m = model();
    let x = random_rows(4, 8, 1);
    let mask = [false, false, true, false];
    let base = encode_rows(&m, &x, &mask);
    let mut other = random_rows(4, 8, 2);
    other.data_mut()[16..24].copy_from_slice(x.row(2));
    let changed = encode_rows(&m, &other, &mask);
    assert_eq!(base.row(2), changed.row(2));
}

#[test]
fn encoder_is_permutation_equivariant() {
    let m = model();
    let x = random_rows(5, 8, 3);
    let mut swapped = x.clone();
    swapped.data_mut()[8..16].copy_from_slice(x.row(3));
    swapped.data_mut()[24..32].copy_from_slice(x.row(1));
    let mask = [true; 5];
    let a = encode_rows(&m, &x, &mask);
    let b = encode_rows(&m, &swapped, &mask);
    for (i, j) in [(0, 0), (1, 3), (2, 2), (3, 1), (4, 4)] {
        for (u, v) in a.row(i).iter().zip(b.row(j)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn pooler_properties() {
    let mut m = model();
    // zero input and zero bias give a zero pooled vector
    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let zeros = tape.constant(Tensor::zeros(vec![3, 8]));
    let b = m.pool(&mut tape, &pv, zeros).unwrap();
    assert!(tape.value(b).iter().all(|&v| v == 0.0));

    let h = random_rows(3, 8, 4);
    let mut h2 = h.clone();
    h2.data_mut()[8..].iter_mut().for_each(|v| *v += 3.0);
    m.params.pooler_bias.data_mut().iter_mut().for_each(|v| *v = 0.3);
    let pool = |h: &Tensor| {
        let mut tape = Tape::new();
        let pv = m.register(&mut tape, false);
        let hv = tape.constant(h.clone());
        let b = m.pool(&mut tape, &pv, hv).unwrap();
        tape.value(b).to_vec()
    };
    let b1 = pool(&h);
    assert!(b1.iter().all(|v| v.abs() < 1.0));
    assert_eq!(b1, pool(&h2));
}

#[test]
fn span_head_distributions() {
    let mut m = model();
    let h = random_rows(6, 8, 5);
    let run = |m: &RcModel, mask: &[bool]| {
        let mut tape = Tape::new();
        let pv = m.register(&mut tape, false);
        let hv = tape.constant(h.clone());
        let (s, e) = m.span_head(&mut tape, &pv, hv, mask).unwrap();
        (tape.value(s).to_vec(), tape.value(e).to_vec())
    };
    let (s, _) = run(&m, &[false, false, false, true, false, false]);
    assert_eq!(s, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    let (s, e) = run(&m, &[true; 6]);
    assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    m.params.span_start.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let (s, _) = run(&m, &[false, true, true, true, true, false]);
    assert_eq!(s, vec![0.0, 0.25, 0.25, 0.25, 0.25, 0.0]);

    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let hv = tape.constant(h.clone());
    assert!(matches!(
        m.span_head(&mut tape, &pv, hv, &[false; 6]),
        Err(Error::AllPositionsMasked)
    ));
}

#[test]
fn na_head_values_and_slope() {
    let mut m = model();
    let na = |m: &RcModel, b: &Tensor| {
        let mut tape = Tape::new();
        let pv = m.register(&mut tape, true);
        let bv = tape.constant(b.clone());
        let p = m.na_head(&mut tape, &pv, bv).unwrap();
        let grads = tape.backward(p).unwrap();
        (tape.scalar_value(p), grads.get(pv.na_bias).unwrap()[0])
    };
    let zero = Tensor::zeros(vec![8]);
    let (p, slope) = na(&m, &zero);
    assert_eq!(p, 0.5);
    assert_eq!(slope, 0.25);

    let b = random_rows(1, 8, 6).reshape(vec![8]).unwrap();
    let mut last = 0.0;
    for bias in [-4.0, -1.0, 0.0, 2.0, 10.0, 30.0] {
        m.params.na_bias.data_mut()[0] = bias;
        let (p, _) = na(&m, &b);
        assert!(p > last && p < 1.0);
        last = p;
    }
    assert!(last > 0.999_999);
}

#[test]
fn mc_head_symmetry() {
    let m = model();
    let run = |rows: &[Tensor]| {
        let mut tape = Tape::new();
        let pv = m.register(&mut tape, false);
        let vars: Vec<Var> = rows.iter().map(|r| tape.constant(r.clone())).collect();
        let p = m.mc_head(&mut tape, &pv, &vars).unwrap();
        tape.value(p).to_vec()
    };
    let b = random_rows(1, 8, 8).reshape(vec![8]).unwrap();
    let uniform = run(&[b.clone(), b.clone(), b.clone(), b.clone()]);
    assert_eq!(uniform.len(), 4);
    for p in &uniform {
        assert!((p - 0.25).abs() < 1e-15);
    }

    let opts: Vec<Tensor> = (0..4).map(|i| random_rows(1, 8, 10 + i).reshape(vec![8]).unwrap()).collect();
    let p = run(&opts);
    let swapped = run(&[opts[2].clone(), opts[1].clone(), opts[0].clone(), opts[3].clone()]);
    assert_eq!(p[0], swapped[2]);
    assert_eq!(p[2], swapped[0]);
    assert_eq!(p[1], swapped[1]);

    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let one = tape.constant(b);
    assert!(matches!(m.mc_head(&mut tape, &pv, &[one]), Err(Error::TooFewOptions(1))));
}

fn seu_input() -> ExampleInput {
    ExampleInput {
        task: TaskKind::Seu,
        sequences: vec![pack_span(&[5, 6, 7], &[8, 9, 10, 11, 12, 13], 16).unwrap()],
    }
}

#[test]
fn forward_is_valid_and_gradient_reaches_embedding() {
    let m = model();
    let input = seu_input();
    let out = m.predict(&input).unwrap();
    assert!((out.start.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((out.end.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let na = out.na.unwrap();
    assert!(na > 0.0 && na < 1.0);

    let mut tape = Tape::new();
    let pv = m.register(&mut tape, false);
    let x = m.embed_example(&mut tape, &pv, &input).unwrap();
    let x_leaf = tape.input(tape.tensor(x), true);
    let out = m.heads(&mut tape, &pv, &input, x_leaf).unwrap();
    let Outputs::SpanNa { start, .. } = out else { panic!("expected span/na outputs") };
    let p = tape.pick(start, 5).unwrap();
    let loss = tape.log(p).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(x_leaf).unwrap();
    assert!(g.iter().any(|&v| v != 0.0));
}

#[test]
fn seeded_init_is_reproducible() {
    assert_eq!(model().params, model().params);
    let mut c = small_config();
    c.seed = 8;
    assert_ne!(RcModel::new(c).unwrap().params, model().params);
}

#[test]
fn multi_choice_forward() {
    let m = model();
    let seqs = (0..4)
        .map(|i| pack_choice(&[8, 9, 10], &[5, 6], &[11 + i], 16).unwrap())
        .collect();
    let input = ExampleInput {
        task: TaskKind::Mc,
        sequences: seqs,
    };
    let out = m.predict(&input).unwrap();
    assert_eq!(out.options.len(), 4);
    assert!((out.options.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let m = model();
    let ckpt = Checkpoint {
        model: m,
        task: TaskKind::Seu,
        vocab: (0..20).map(|i| format!("w{i}")).collect(),
        na_threshold: Some(f64::INFINITY),
    };
    let text = ckpt.to_json();
    assert!(text.contains(CHECKPOINT_FORMAT));
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_json(), text);

    let bad = text.replace(CHECKPOINT_FORMAT, "advreg-ckpt-v0");
    assert!(matches!(Checkpoint::from_json(&bad), Err(Error::Checkpoint(_))));
}
