//! Seeded finite-difference checks of every tape primitive, every training
//! objective and one end-to-end model pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adversary::kl_span;
use crate::error::{Error, Result};
use crate::model::{pack_span, ExampleInput, ModelConfig, Outputs, RcModel, TaskKind, LAYER_NORM_EPS};
use crate::objectives::{
    batch_mean, mc_loss, na_loss, negative_entropy_loss, seu_loss, span_loss, task_loss, SpanWeighting, Target,
};
use crate::tensor::{finite_difference_grad, max_relative_error, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            instances: 100,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&CaseReport> {
        self.cases.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

type Eval = Box<dyn Fn(&[Tensor], bool) -> Result<(f64, Vec<Vec<f64>>)> + Send + Sync>;

struct Case {
    inputs: Vec<Tensor>,
    eval: Eval,
}

type Builder = fn(&mut ChaCha8Rng) -> Result<Case>;

fn finish(tape: &Tape<'_>, loss: Var, vars: &[Var], grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let value = tape.scalar_value(loss);
    if !grad {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.get_or_zeros(v, tape.value(v).len())).collect()))
}

fn case<F>(inputs: Vec<Tensor>, body: F) -> Result<Case>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    Ok(Case {
        inputs,
        eval: Box::new(move |xs, grad| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone(), grad)).collect();
            let loss = body(&mut tape, &vars)?;
            finish(&tape, loss, &vars, grad)
        }),
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    uniform(rng, shape, -2.0, 2.0)
}

/// Values bounded away from zero, for primitives with a kink or pole there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    let mut t = uniform(rng, shape, 0.1, 2.0)?;
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    Ok(t)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(2..6))
}

fn some_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let keep = rng.random_range(0..n);
    m[keep] = true;
    m
}

fn valid_index(rng: &mut ChaCha8Rng, mask: &[bool]) -> usize {
    let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    valid[rng.random_range(0..valid.len())]
}

/// `sum(w * y)` for a fixed random `w`, reducing any output to a scalar.
fn contract(tape: &mut Tape<'_>, y: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(Tensor::new(tape.shape(y).to_vec(), w.data().to_vec())?);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn weights_for(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    normal(rng, shape)
}

fn unary(rng: &mut ChaCha8Rng, x: Tensor, op: fn(&mut Tape<'_>, Var) -> Result<Var>) -> Result<Case> {
    let w = weights_for(rng, x.shape())?;
    case(vec![x], move |t, v| {
        let y = op(t, v[0])?;
        contract(t, y, &w)
    })
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&mut Tape<'_>, Var, Var) -> Result<Var>) -> Result<Case> {
    let (m, n) = dims(rng);
    let a = normal(rng, &[m, n])?;
    let b = normal(rng, &[m, n])?;
    let w = weights_for(rng, &[m, n])?;
    case(vec![a, b], move |t, v| {
        let y = op(t, v[0], v[1])?;
        contract(t, y, &w)
    })
}

fn matrix(rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let (m, n) = dims(rng);
    normal(rng, &[m, n])
}

fn primitive_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("add", |r| binary(r, |t, a, b| t.add(a, b))),
        ("sub", |r| binary(r, |t, a, b| t.sub(a, b))),
        ("mul", |r| binary(r, |t, a, b| t.mul(a, b))),
        ("affine", |r| {
            let x = matrix(r)?;
            let (s, c) = (r.random_range(-2.0..2.0), r.random_range(-1.0..1.0));
            let w = weights_for(r, x.shape())?;
            case(vec![x], move |t, v| {
                let y = t.affine(v[0], s, c)?;
                contract(t, y, &w)
            })
        }),
        ("scale", |r| {
            let x = matrix(r)?;
            let s = r.random_range(-3.0..3.0);
            let w = weights_for(r, x.shape())?;
            case(vec![x], move |t, v| {
                let y = t.scale(v[0], s)?;
                contract(t, y, &w)
            })
        }),
        ("matmul", |r| {
            let (m, k) = dims(r);
            let n = r.random_range(1..5);
            let (a, b) = (normal(r, &[m, k])?, normal(r, &[k, n])?);
            let w = weights_for(r, &[m, n])?;
            case(vec![a, b], move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                contract(t, y, &w)
            })
        }),
        ("matvec", |r| {
            let (m, k) = dims(r);
            let (a, x) = (normal(r, &[m, k])?, normal(r, &[k])?);
            let w = weights_for(r, &[m])?;
            case(vec![a, x], move |t, v| {
                let y = t.matvec(v[0], v[1])?;
                contract(t, y, &w)
            })
        }),
        ("dot", |r| {
            let n = r.random_range(1..8);
            case(vec![normal(r, &[n])?, normal(r, &[n])?], |t, v| t.dot(v[0], v[1]))
        }),
        ("transpose", |r| {
            let x = matrix(r)?;
            let w = weights_for(r, &[x.shape()[1], x.shape()[0]])?;
            case(vec![x], move |t, v| {
                let y = t.transpose(v[0])?;
                contract(t, y, &w)
            })
        }),
        ("reshape", |r| {
            let x = matrix(r)?;
            let n = x.len();
            let w = weights_for(r, &[n])?;
            case(vec![x], move |t, v| {
                let y = t.reshape(v[0], vec![n])?;
                contract(t, y, &w)
            })
        }),
        ("add_row", |r| {
            let (m, n) = dims(r);
            let w = weights_for(r, &[m, n])?;
            case(vec![normal(r, &[m, n])?, normal(r, &[n])?], move |t, v| {
                let y = t.add_row(v[0], v[1])?;
                contract(t, y, &w)
            })
        }),
        ("mul_row", |r| {
            let (m, n) = dims(r);
            let w = weights_for(r, &[m, n])?;
            case(vec![normal(r, &[m, n])?, normal(r, &[n])?], move |t, v| {
                let y = t.mul_row(v[0], v[1])?;
                contract(t, y, &w)
            })
        }),
        ("softmax", |r| {
            let x = matrix(r)?;
            unary(r, x, |t, v| t.softmax(v))
        }),
        ("softmax_masked", |r| {
            let x = matrix(r)?;
            let mask = some_mask(r, x.shape()[1]);
            let w = weights_for(r, x.shape())?;
            case(vec![x], move |t, v| {
                let y = t.softmax_masked(v[0], Some(&mask))?;
                contract(t, y, &w)
            })
        }),
        ("log", |r| {
            let (m, n) = dims(r);
            let x = uniform(r, &[m, n], 0.2, 3.0)?;
            unary(r, x, |t, v| t.log(v))
        }),
        ("sigmoid", |r| {
            let x = matrix(r)?;
            unary(r, x, |t, v| t.sigmoid(v))
        }),
        ("tanh", |r| {
            let x = matrix(r)?;
            unary(r, x, |t, v| t.tanh(v))
        }),
        ("relu", |r| {
            let (m, n) = dims(r);
            let x = away_from_zero(r, &[m, n])?;
            unary(r, x, |t, v| t.relu(v))
        }),
        ("xlogx", |r| {
            let (m, n) = dims(r);
            let x = uniform(r, &[m, n], 0.05, 3.0)?;
            unary(r, x, |t, v| t.xlogx(v))
        }),
        ("layer_norm", |r| {
            let m = r.random_range(1..5);
            let n = r.random_range(3..9);
            let x = normal(r, &[m, n])?;
            unary(r, x, |t, v| t.layer_norm(v, LAYER_NORM_EPS))
        }),
        ("sum", |r| {
            let x = matrix(r)?;
            case(vec![x], |t, v| t.sum(v[0]))
        }),
        ("mean", |r| {
            let x = matrix(r)?;
            case(vec![x], |t, v| t.mean(v[0]))
        }),
        ("concat", |r| {
            let n = r.random_range(1..5);
            let (a, b) = (r.random_range(1..4), r.random_range(1..4));
            let w = weights_for(r, &[a + b, n])?;
            case(vec![normal(r, &[a, n])?, normal(r, &[b, n])?], move |t, v| {
                let y = t.concat(&[v[0], v[1]])?;
                contract(t, y, &w)
            })
        }),
        ("slice", |r| {
            let x = matrix(r)?;
            let m = x.shape()[0];
            let s = r.random_range(0..m);
            let e = r.random_range(s + 1..=m);
            let w = weights_for(r, &[e - s, x.shape()[1]])?;
            case(vec![x], move |t, v| {
                let y = t.slice(v[0], s, e)?;
                contract(t, y, &w)
            })
        }),
        ("pick", |r| {
            let n = r.random_range(1..8);
            let i = r.random_range(0..n);
            case(vec![normal(r, &[n])?], move |t, v| t.pick(v[0], i))
        }),
        ("embedding_lookup", |r| {
            let (vocab, h) = (r.random_range(2..6), r.random_range(1..5));
            let ids: Vec<usize> = (0..r.random_range(1..7)).map(|_| r.random_range(0..vocab)).collect();
            let w = weights_for(r, &[ids.len(), h])?;
            case(vec![normal(r, &[vocab, h])?], move |t, v| {
                let y = t.embedding_lookup(v[0], &ids)?;
                contract(t, y, &w)
            })
        }),
        ("kl_from_const", |r| {
            let n = r.random_range(2..8);
            let mask = some_mask(r, n);
            let raw: Vec<f64> = mask.iter().map(|&m| if m { r.random_range(0.1..1.0) } else { 0.0 }).collect();
            let total: f64 = raw.iter().sum();
            let target: Vec<f64> = raw.iter().map(|v| v / total).collect();
            case(vec![normal(r, &[n])?], move |t, v| {
                let q = t.softmax(v[0])?;
                t.kl_from_const(&target, q)
            })
        }),
    ]
}

fn span_dists(t: &mut Tape<'_>, s: Var, e: Var, mask: &[bool]) -> Result<(Var, Var)> {
    Ok((t.softmax_masked(s, Some(mask))?, t.softmax_masked(e, Some(mask))?))
}

fn objective_cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("span_loss", |r| {
            let n = r.random_range(2..10);
            let mask = some_mask(r, n);
            let (s, e) = (valid_index(r, &mask), valid_index(r, &mask));
            case(vec![normal(r, &[n])?, normal(r, &[n])?], move |t, v| {
                let (ps, pe) = span_dists(t, v[0], v[1], &mask)?;
                span_loss(t, ps, pe, s, e)
            })
        }),
        ("na_loss", |r| {
            let na = r.random_bool(0.5);
            case(vec![normal(r, &[])?], move |t, v| {
                let p = t.sigmoid(v[0])?;
                na_loss(t, p, na)
            })
        }),
        ("seu_loss", |r| {
            let n = r.random_range(2..10);
            let mask = some_mask(r, n);
            let span = r.random_bool(0.6).then(|| (valid_index(r, &mask), valid_index(r, &mask)));
            let target = Target::span_or_na(span);
            case(vec![normal(r, &[n])?, normal(r, &[n])?, normal(r, &[])?], move |t, v| {
                let (ps, pe) = span_dists(t, v[0], v[1], &mask)?;
                let p = t.sigmoid(v[2])?;
                seu_loss(t, ps, pe, p, &target, SpanWeighting::Answerable)
            })
        }),
        ("mc_loss", |r| {
            let n = r.random_range(2..6);
            let o = r.random_range(0..n);
            case(vec![normal(r, &[n])?], move |t, v| {
                let p = t.softmax(v[0])?;
                mc_loss(t, p, o)
            })
        }),
        ("negative_entropy_loss", |r| {
            let n = r.random_range(2..10);
            let mask = some_mask(r, n);
            let na = r.random_bool(0.8);
            case(vec![normal(r, &[n])?, normal(r, &[n])?], move |t, v| {
                let (ps, pe) = span_dists(t, v[0], v[1], &mask)?;
                negative_entropy_loss(t, ps, pe, na, &mask)
            })
        }),
        ("task_loss", |r| {
            let n = r.random_range(2..8);
            let mask = some_mask(r, n);
            let kind = r.random_range(0..3);
            let (s, e) = (valid_index(r, &mask), valid_index(r, &mask));
            let target = match kind {
                0 => Target::Span { start: s, end: e },
                1 => Target::span_or_na(r.random_bool(0.5).then_some((s, e))),
                _ => Target::Choice { option: r.random_range(0..n) },
            };
            case(vec![normal(r, &[n])?, normal(r, &[n])?, normal(r, &[])?], move |t, v| {
                let outputs = match kind {
                    0 => {
                        let (start, end) = span_dists(t, v[0], v[1], &mask)?;
                        Outputs::Span { start, end }
                    }
                    1 => {
                        let (start, end) = span_dists(t, v[0], v[1], &mask)?;
                        let na = t.sigmoid(v[2])?;
                        Outputs::SpanNa { start, end, na }
                    }
                    _ => Outputs::Choice { options: t.softmax(v[0])? },
                };
                task_loss(t, &outputs, &target, SpanWeighting::Answerable)
            })
        }),
        ("batch_mean", |r| {
            let k = r.random_range(1..5);
            let inputs = (0..k).map(|_| normal(r, &[])).collect::<Result<Vec<_>>>()?;
            case(inputs, |t, v| {
                let sq = v.iter().map(|&x| t.mul(x, x)).collect::<Result<Vec<_>>>()?;
                batch_mean(t, &sq)
            })
        }),
        ("virtual_adversarial_kl", |r| {
            let n = r.random_range(2..8);
            let clean: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                })
                .collect();
            case(vec![normal(r, &[n])?, normal(r, &[n])?], move |t, v| {
                let p = [t.softmax(v[0])?, t.softmax(v[1])?];
                kl_span(t, &clean, &p)
            })
        }),
        ("model_input_embedding", model_case),
    ]
}

/// Gradient of the span-or-no-answer loss of a small model with respect to
/// its input embeddings.
fn model_case(r: &mut ChaCha8Rng) -> Result<Case> {
    let config = ModelConfig {
        vocab_size: 12,
        hidden_dim: 6,
        max_seq_len: 16,
        num_encoder_blocks: 1,
        seed: r.random(),
    };
    let model = RcModel::new(config)?;
    let q: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(4..12)).collect();
    let p: Vec<usize> = (0..r.random_range(2..7)).map(|_| r.random_range(4..12)).collect();
    let seq = pack_span(&q, &p, 16)?;
    let span = r.random_bool(0.6).then(|| {
        let s = seq.passage_start + r.random_range(0..p.len());
        (s, s + r.random_range(0..seq.passage_start + p.len() - s))
    });
    let target = Target::span_or_na(span);
    let input = ExampleInput {
        task: TaskKind::Seu,
        sequences: vec![seq],
    };
    let x = {
        let mut tape = Tape::new();
        let pv = model.register(&mut tape, false);
        let x = model.embed_example(&mut tape, &pv, &input)?;
        tape.tensor(x)
    };
    Ok(Case {
        inputs: vec![x],
        eval: Box::new(move |xs, grad| {
            let mut tape = Tape::new();
            let pv = model.register(&mut tape, false);
            let x = tape.input(xs[0].clone(), grad);
            let outputs = model.heads(&mut tape, &pv, &input, x)?;
            let loss = task_loss(&mut tape, &outputs, &target, SpanWeighting::Answerable)?;
            finish(&tape, loss, &[x], grad)
        }),
    })
}

fn check_case(c: &Case, step: f64) -> Result<f64> {
    let (_, analytic) = (c.eval)(&c.inputs, true)?;
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = finite_difference_grad(
            |probe| {
                let mut xs = c.inputs.clone();
                xs[i] = probe.clone();
                Ok((c.eval)(&xs, false)?.0)
            },
            &c.inputs[i],
            step,
        )?;
        worst = worst.max(max_relative_error(a, numeric.data()));
    }
    Ok(worst)
}

/// Names of every checked case, primitives first.
pub fn case_names() -> Vec<&'static str> {
    primitive_cases().into_iter().chain(objective_cases()).map(|(n, _)| n).collect()
}

/// Runs every case on `config.instances` seeded random instances.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if config.instances == 0 {
        return Err(Error::InvalidConfig("gradient check needs at least one instance".into()));
    }
    if config.tolerance.is_nan() || config.tolerance <= 0.0 {
        return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {}", config.tolerance)));
    }
    let mut cases = Vec::new();
    for (k, (name, build)) in primitive_cases().into_iter().chain(objective_cases()).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut worst = 0.0f64;
        for _ in 0..config.instances {
            let c = build(&mut rng)?;
            worst = worst.max(check_case(&c, config.step)?);
        }
        cases.push(CaseReport {
            name: name.to_string(),
            instances: config.instances,
            max_relative_error: worst,
            passed: worst <= config.tolerance,
        });
    }
    Ok(SuiteReport {
        config: config.clone(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_suite(&SuiteConfig {
            instances: 5,
            ..SuiteConfig::default()
        })
        .unwrap();
        assert_eq!(report.cases.len(), case_names().len());
        assert!(report.passed(), "{:?}", report.failures());
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let c = case(vec![Tensor::vector(vec![0.5, -1.0]).unwrap()], |t, v| t.sum(v[0])).unwrap();
        let bad = Case {
            inputs: c.inputs.clone(),
            eval: Box::new(move |xs, grad| {
                let (v, g) = (c.eval)(xs, grad)?;
                Ok((v, g.into_iter().map(|g| g.iter().map(|x| x * 1.01).collect()).collect()))
            }),
        };
        assert!(check_case(&bad, 1e-5).unwrap() > 1e-3);
    }

    #[test]
    fn rejects_empty_runs() {
        assert!(run_suite(&SuiteConfig {
            instances: 0,
            ..SuiteConfig::default()
        })
        .is_err());
    }
}
