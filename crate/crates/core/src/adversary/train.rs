use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{at_perturbation, kl_span, mask_rows, vat_perturbation, PerturbationConfig};
use crate::error::{Error, Result};
use crate::model::{ExampleInput, ModelParams, Outputs, RcModel};
use crate::numeric;
use crate::objectives::{negative_entropy_loss, task_loss, SpanWeighting, Target};
use crate::tensor::{Tape, Tensor, Var};

/// One encoded example. Unlabeled examples have no target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub input: ExampleInput,
    pub target: Option<Target>,
}

/// Multipliers on the regularization terms of the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub at: f64,
    pub vat: f64,
    pub vat_unlabeled: f64,
    pub nel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            at: 1.0,
            vat: 1.0,
            vat_unlabeled: 1.0,
            nel: 1.0,
        }
    }
}

/// Which regularizers are active and how the loop is run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecipe {
    pub at: bool,
    pub vat: bool,
    pub vat_unlabeled: bool,
    pub nel: bool,
    /// Training data includes augmentation questions. The loop itself does not
    /// change; the flag records how the training set was built.
    pub da: bool,
    /// Score the negative-entropy penalty on the clean pass even when an
    /// adversarial pass exists.
    pub nel_on_clean: bool,
    pub labeled_batch_size: usize,
    pub unlabeled_batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Fraction of steps with linearly rising learning rate before a linear
    /// decay to zero. `None` keeps the rate constant.
    pub warmup: Option<f64>,
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub weights: LossWeights,
    pub span_weighting: SpanWeighting,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            at: false,
            vat: false,
            vat_unlabeled: false,
            nel: false,
            da: false,
            nel_on_clean: false,
            labeled_batch_size: 24,
            unlabeled_batch_size: 12,
            epochs: 3,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            warmup: None,
            seed: 0,
            perturbation: PerturbationConfig::default(),
            weights: LossWeights::default(),
            span_weighting: SpanWeighting::Answerable,
        }
    }
}

impl TrainRecipe {
    pub fn validate(&self) -> Result<()> {
        self.perturbation.validate()?;
        if self.labeled_batch_size == 0 || self.unlabeled_batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if let Some(w) = self.warmup {
            if !(0.0..1.0).contains(&w) {
                return Err(Error::InvalidConfig(format!("warmup fraction must be in [0, 1), got {w}")));
            }
        }
        Ok(())
    }

    /// Learning rate at `step` of `total` steps.
    pub fn learning_rate_at(&self, step: u64, total: u64) -> f64 {
        let Some(w) = self.warmup else { return self.learning_rate };
        let warm = (w * total as f64).ceil().max(1.0);
        let t = step as f64 + 1.0;
        let factor = if t <= warm { t / warm } else { (total as f64 - t + 1.0) / (total as f64 - warm + 1.0) };
        self.learning_rate * factor.clamp(0.0, 1.0)
    }

    /// Short label such as `at+nel`, or `base` when nothing is enabled.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.da, "da"),
            (self.nel, "nel"),
            (self.at, "at"),
            (self.vat, "vat"),
            (self.vat_unlabeled, "vat-unlabeled"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            "base".into()
        } else {
            parts.join("+")
        }
    }
}

/// Update rule applied after each batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn build(self, learning_rate: f64) -> Box<dyn Optimizer> {
        match self {
            OptimizerKind::Sgd => Box::new(Sgd::new(learning_rate)),
            OptimizerKind::Adam => Box::new(Adam::new(learning_rate)),
        }
    }
}

/// Applies accumulated gradients to the parameters.
pub trait Optimizer: Send {
    fn step(&mut self, params: &mut ModelParams);
    fn set_learning_rate(&mut self, learning_rate: f64);
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Self {
        Sgd { learning_rate }
    }
}

impl Optimizer for Sgd {
    fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    /// `p -= lr * grad` for every parameter holding a gradient.
    fn step(&mut self, params: &mut ModelParams) {
        for (_, t) in params.entries_mut() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            for (p, g) in t.data_mut().iter_mut().zip(g) {
                *p -= self.learning_rate * g;
            }
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    fn step(&mut self, params: &mut ModelParams) {
        let mut entries = params.entries_mut();
        if self.m.len() != entries.len() {
            self.m = entries.iter().map(|(_, t)| vec![0.0; t.data().len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (_, t)) in entries.iter_mut().enumerate() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (p, g)) in t.data_mut().iter_mut().zip(g).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                *p -= self.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Loss components of one optimizer step, each a mean over its batch.
/// Components that were not computed are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub epoch: usize,
    pub loss_clean: f64,
    pub loss_at: Option<f64>,
    pub loss_vat: Option<f64>,
    pub loss_vat_unlabeled: Option<f64>,
    pub loss_nel: Option<f64>,
    /// Model forward passes run during the step.
    #[serde(skip)]
    pub forward_passes: usize,
    /// Per labeled example: `(||x_adv - x||, epsilon * ||x||)` of the adversarial pass.
    #[serde(skip)]
    pub at_norms: Vec<(f64, f64)>,
    #[serde(skip)]
    pub labeled_count: usize,
    #[serde(skip)]
    pub unlabeled_count: usize,
}

impl StepReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Mixes `seed` with a sequence of counters into a fresh 64-bit seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

const SALT_LABELED: u64 = 1;
const SALT_UNLABELED: u64 = 2;
const SALT_SHUFFLE: u64 = 3;

#[derive(Default)]
struct Work {
    grads: Vec<Vec<f64>>,
    clean: f64,
    at: Option<f64>,
    vat: Option<f64>,
    nel: Option<f64>,
    vat_unlabeled: Option<f64>,
    forward_passes: usize,
    at_norm: Option<(f64, f64)>,
}

fn param_grads(tape: &Tape<'_>, loss: Var, model: &RcModel, pv: &crate::model::ParamVars) -> Result<Vec<Vec<f64>>> {
    let grads = tape.backward(loss)?;
    Ok(pv
        .entries()
        .into_iter()
        .zip(model.params.entries())
        .map(|((_, &var), (_, t))| grads.get_or_zeros(var, t.len()))
        .collect())
}

fn weighted_sum(tape: &mut Tape<'_>, terms: &[(f64, Var)], scale: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(w, v) in terms {
        let v = if w == 1.0 { v } else { tape.scale(v, w)? };
        total = Some(match total {
            None => v,
            Some(t) => tape.add(t, v)?,
        });
    }
    let total = total.ok_or(Error::EmptyBatch)?;
    tape.scale(total, scale)
}

fn add_const(tape: &mut Tape<'_>, x: Var, r: Option<&Tensor>) -> Var {
    match r {
        Some(r) => {
            let rv = tape.constant(r.clone());
            tape.add(x, rv).expect("perturbation has the embedding shape")
        }
        None => x,
    }
}

fn distribution_values(tape: &mut Tape<'_>, out: &Outputs) -> Result<Vec<Vec<f64>>> {
    let dists = out.distributions(tape)?;
    Ok(dists.iter().map(|&d| tape.value(d).to_vec()).collect())
}

/// Maps an embedding value to the model's output distributions with the
/// parameters frozen; the `forward` argument of the VAT helpers.
pub fn frozen_forward<'m>(
    model: &'m RcModel,
    input: &'m ExampleInput,
) -> impl FnMut(&mut Tape<'m>, Var) -> Result<Vec<Var>> + 'm {
    move |tape, x| {
        let pv = model.register(tape, false);
        let out = model.heads(tape, &pv, input, x)?;
        out.distributions(tape)
    }
}

fn labeled_work(model: &RcModel, sample: &Sample, recipe: &TrainRecipe, scale: f64, seed: u64) -> Result<Work> {
    let target = sample.target.as_ref().ok_or_else(|| {
        Error::RecipeDatasetMismatch(format!("labeled batch holds unlabeled example '{}'", sample.id))
    })?;
    let input = &sample.input;
    let row_mask = input.row_mask();
    let eps = recipe.perturbation.epsilon;
    let mut work = Work::default();

    let mut tape = Tape::new();
    let pv = model.register(&mut tape, true);
    let x = model.embed_example(&mut tape, &pv, input)?;
    let x_val = tape.tensor(x);
    let clean_out = model.heads(&mut tape, &pv, input, x)?;
    work.forward_passes += 1;
    let clean = task_loss(&mut tape, &clean_out, target, recipe.span_weighting)?;
    work.clean = tape.scalar_value(clean);
    let mut terms = vec![(1.0, clean)];

    let mut adv_out = None;
    if recipe.at {
        let g = tape.backward(clean)?.get_or_zeros(x, x_val.len());
        let mut g = Tensor::new(x_val.shape().to_vec(), g)?;
        mask_rows(&mut g, &row_mask)?;
        let r = at_perturbation(&x_val, &g, eps)?;
        let x_adv = add_const(&mut tape, x, r.as_ref());
        let shift: Vec<f64> = tape.value(x_adv).iter().zip(x_val.data()).map(|(a, b)| a - b).collect();
        work.at_norm = Some((numeric::norm(&shift), eps * numeric::norm(x_val.data())));
        let out = model.heads(&mut tape, &pv, input, x_adv)?;
        work.forward_passes += 1;
        let l = task_loss(&mut tape, &out, target, recipe.span_weighting)?;
        work.at = Some(tape.scalar_value(l));
        terms.push((recipe.weights.at, l));
        adv_out = Some(out);
    }

    if recipe.nel {
        let out = match adv_out {
            Some(out) if !recipe.nel_on_clean => out,
            _ => clean_out,
        };
        let l = match out {
            Outputs::SpanNa { start, end, .. } | Outputs::Span { start, end } => {
                let no_answer = target.no_answer_flag() == 1.0;
                negative_entropy_loss(&mut tape, start, end, no_answer, &input.sequences[0].span_mask)?
            }
            Outputs::Choice { .. } => {
                return Err(Error::RecipeDatasetMismatch(
                    "negative entropy needs span outputs, not multiple choice".into(),
                ))
            }
        };
        work.nel = Some(tape.scalar_value(l));
        terms.push((recipe.weights.nel, l));
    }

    if recipe.vat {
        let p_clean = distribution_values(&mut tape, &clean_out)?;
        let mut forward = frozen_forward(model, input);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = vat_perturbation(&x_val, &row_mask, Some(&p_clean), &mut forward, &recipe.perturbation, &mut rng)?;
        work.forward_passes += 1;
        let x_v = add_const(&mut tape, x, r.as_ref());
        let out = model.heads(&mut tape, &pv, input, x_v)?;
        work.forward_passes += 1;
        let dists = out.distributions(&mut tape)?;
        let l = kl_span(&mut tape, &p_clean, &dists)?;
        work.vat = Some(tape.scalar_value(l));
        terms.push((recipe.weights.vat, l));
    }

    let total = weighted_sum(&mut tape, &terms, scale)?;
    work.grads = param_grads(&tape, total, model, &pv)?;
    Ok(work)
}

fn unlabeled_work(model: &RcModel, sample: &Sample, recipe: &TrainRecipe, scale: f64, seed: u64) -> Result<Work> {
    let input = &sample.input;
    let row_mask = input.row_mask();
    let mut work = Work::default();
    let mut tape = Tape::new();
    let pv = model.register(&mut tape, true);
    let x = model.embed_example(&mut tape, &pv, input)?;
    let x_val = tape.tensor(x);

    let mut forward = frozen_forward(model, input);
    let p_clean = super::clean_distributions(&x_val, &mut forward)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = vat_perturbation(&x_val, &row_mask, Some(&p_clean), &mut forward, &recipe.perturbation, &mut rng)?;
    work.forward_passes += 2;
    let x_v = add_const(&mut tape, x, r.as_ref());
    let out = model.heads(&mut tape, &pv, input, x_v)?;
    work.forward_passes += 1;
    let dists = out.distributions(&mut tape)?;
    let l = kl_span(&mut tape, &p_clean, &dists)?;
    work.vat_unlabeled = Some(tape.scalar_value(l));
    let total = weighted_sum(&mut tape, &[(recipe.weights.vat_unlabeled, l)], scale)?;
    work.grads = param_grads(&tape, total, model, &pv)?;
    Ok(work)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// One optimizer update on a labeled batch (and an unlabeled batch when the
/// recipe uses unlabeled VAT).
///
/// Examples are processed in parallel; gradients are summed in batch order so
/// the update is bitwise reproducible.
pub fn train_step(
    model: &mut RcModel,
    labeled: &[&Sample],
    unlabeled: &[&Sample],
    recipe: &TrainRecipe,
    optimizer: &mut dyn Optimizer,
    step: u64,
    epoch: usize,
) -> Result<StepReport> {
    if labeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if recipe.vat_unlabeled && unlabeled.is_empty() {
        return Err(Error::RecipeDatasetMismatch("unlabeled VAT needs unlabeled examples".into()));
    }
    let unlabeled = if recipe.vat_unlabeled { unlabeled } else { &[] };
    let lab_scale = 1.0 / labeled.len() as f64;
    let unl_scale = if unlabeled.is_empty() { 0.0 } else { 1.0 / unlabeled.len() as f64 };

    let shared: &RcModel = model;
    let jobs: Vec<(bool, usize, &Sample)> = labeled
        .iter()
        .enumerate()
        .map(|(i, s)| (true, i, *s))
        .chain(unlabeled.iter().enumerate().map(|(i, s)| (false, i, *s)))
        .collect();
    let works = jobs
        .par_iter()
        .map(|&(is_labeled, i, sample)| {
            if is_labeled {
                let seed = derive_seed(recipe.seed, &[SALT_LABELED, step, i as u64]);
                labeled_work(shared, sample, recipe, lab_scale, seed)
            } else {
                let seed = derive_seed(recipe.seed, &[SALT_UNLABELED, step, i as u64]);
                unlabeled_work(shared, sample, recipe, unl_scale, seed)
            }
        })
        .collect::<Result<Vec<Work>>>()?;

    model.params.zero_grad();
    {
        let mut slots = model.params.entries_mut();
        for work in &works {
            for ((_, t), g) in slots.iter_mut().zip(&work.grads) {
                t.accumulate_grad(g)?;
            }
        }
    }
    optimizer.step(&mut model.params);
    model.params.zero_grad();

    let lab = &works[..labeled.len()];
    let unl = &works[labeled.len()..];
    Ok(StepReport {
        step,
        epoch,
        loss_clean: lab.iter().map(|w| w.clean).sum::<f64>() / labeled.len() as f64,
        loss_at: mean_of(lab.iter().map(|w| w.at)),
        loss_vat: mean_of(lab.iter().map(|w| w.vat)),
        loss_vat_unlabeled: mean_of(unl.iter().map(|w| w.vat_unlabeled)),
        loss_nel: mean_of(lab.iter().map(|w| w.nel)),
        forward_passes: works.iter().map(|w| w.forward_passes).sum(),
        at_norms: lab.iter().filter_map(|w| w.at_norm).collect(),
        labeled_count: labeled.len(),
        unlabeled_count: unl.len(),
    })
}

/// Clean and adversarial task loss of one labeled example at the current
/// parameters.
pub fn probe_at(model: &RcModel, sample: &Sample, epsilon: f64) -> Result<(f64, f64)> {
    let target = sample.target.as_ref().ok_or_else(|| Error::RecipeDatasetMismatch("probe needs a target".into()))?;
    let input = &sample.input;
    let mut tape = Tape::new();
    let pv = model.register(&mut tape, false);
    let x0 = model.embed_example(&mut tape, &pv, input)?;
    let x_val = tape.tensor(x0);
    let x = tape.input(x_val.clone(), true);
    let out = model.heads(&mut tape, &pv, input, x)?;
    let clean = task_loss(&mut tape, &out, target, SpanWeighting::Answerable)?;
    let mut g = Tensor::new(x_val.shape().to_vec(), tape.backward(clean)?.get_or_zeros(x, x_val.len()))?;
    mask_rows(&mut g, &input.row_mask())?;
    let x_adv = super::at_perturb(&x_val, &g, epsilon)?;
    let xa = tape.constant(x_adv);
    let out = model.heads(&mut tape, &pv, input, xa)?;
    let adv = task_loss(&mut tape, &out, target, SpanWeighting::Answerable)?;
    Ok((tape.scalar_value(clean), tape.scalar_value(adv)))
}

/// Dev-set evaluation result used for checkpoint selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevScore {
    /// Selection score; higher is better.
    pub score: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub loss_clean: f64,
    pub loss_at: Option<f64>,
    pub loss_vat: Option<f64>,
    pub loss_vat_unlabeled: Option<f64>,
    pub loss_nel: Option<f64>,
    pub dev: Option<DevScore>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the best dev epoch, or of the last epoch without a dev set.
    pub model: RcModel,
    pub best_epoch: Option<usize>,
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepReport>,
}

/// Trains `model` for `recipe.epochs` epochs over `train`.
///
/// Labeled examples are reshuffled every epoch; unlabeled examples are
/// consumed round-robin across epochs. `evaluate` runs after every epoch and
/// may return `None` when there is no dev set. Each step report is written
/// as one JSON line to `log` when given.
pub fn fit<E>(
    mut model: RcModel,
    train: &[Sample],
    unlabeled: &[Sample],
    recipe: &TrainRecipe,
    mut evaluate: E,
    mut log: Option<&mut dyn Write>,
) -> Result<FitOutcome>
where
    E: FnMut(&RcModel) -> Result<Option<DevScore>>,
{
    recipe.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if recipe.vat_unlabeled && unlabeled.is_empty() {
        return Err(Error::RecipeDatasetMismatch("unlabeled VAT needs unlabeled examples".into()));
    }
    let mut optimizer = recipe.optimizer.build(recipe.learning_rate);
    let total_steps = (recipe.epochs * train.len().div_ceil(recipe.labeled_batch_size)) as u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = 0usize;
    let mut step = 0u64;
    let mut epochs = Vec::with_capacity(recipe.epochs);
    let mut steps = Vec::new();
    let mut best: Option<(f64, usize, RcModel)> = None;

    for epoch in 0..recipe.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(recipe.seed, &[SALT_SHUFFLE, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let first_step = steps.len();
        for chunk in order.chunks(recipe.labeled_batch_size) {
            let labeled: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut extra = Vec::new();
            if recipe.vat_unlabeled {
                for _ in 0..recipe.unlabeled_batch_size {
                    extra.push(&unlabeled[cursor % unlabeled.len()]);
                    cursor += 1;
                }
            }
            optimizer.set_learning_rate(recipe.learning_rate_at(step, total_steps));
            let report = train_step(&mut model, &labeled, &extra, recipe, optimizer.as_mut(), step, epoch)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", report.to_json_line()).map_err(|e| Error::io("metrics log", e))?;
            }
            steps.push(report);
            step += 1;
        }
        let reports = &steps[first_step..];
        let dev = evaluate(&model)?;
        if let Some(d) = &dev {
            if best.as_ref().is_none_or(|(s, _, _)| d.score > *s) {
                best = Some((d.score, epoch, model.clone()));
            }
        }
        epochs.push(EpochMetrics {
            epoch,
            steps: reports.len(),
            loss_clean: reports.iter().map(|r| r.loss_clean).sum::<f64>() / reports.len() as f64,
            loss_at: mean_of(reports.iter().map(|r| r.loss_at)),
            loss_vat: mean_of(reports.iter().map(|r| r.loss_vat)),
            loss_vat_unlabeled: mean_of(reports.iter().map(|r| r.loss_vat_unlabeled)),
            loss_nel: mean_of(reports.iter().map(|r| r.loss_nel)),
            dev,
        });
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    };
    Ok(FitOutcome {
        model,
        best_epoch,
        epochs,
        steps,
    })
}
