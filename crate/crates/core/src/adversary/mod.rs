//! Embedding-space perturbations and the regularized training loop.
//!
//! Perturbations are built from the gradient of a loss with respect to the
//! embedding tensor `x` (shape `l x h`), renormalized so that
//! `||x_adv - x|| = epsilon * ||x||` under the Frobenius norm.

mod train;

pub use train::{
    derive_seed, fit, frozen_forward, probe_at, train_step, DevScore, EpochMetrics, FitOutcome, LossWeights, Sample, Adam, Optimizer, OptimizerKind, Sgd, StepReport, TrainRecipe,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric;
use crate::tensor::{Tape, Tensor, Var};

/// Strength of embedding perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig {
    /// Perturbation size relative to `||x||`.
    pub epsilon: f64,
    /// Radius of the random probe used to find the virtual adversarial direction.
    pub xi: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig::span()
    }
}

impl PerturbationConfig {
    pub const DEFAULT_XI: f64 = 1e-5;

    /// Default for span extraction tasks.
    pub fn span() -> Self {
        PerturbationConfig {
            epsilon: 1e-2,
            xi: Self::DEFAULT_XI,
        }
    }

    /// Default for multiple-choice tasks.
    pub fn choice() -> Self {
        PerturbationConfig {
            epsilon: 1e-3,
            xi: Self::DEFAULT_XI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidConfig(format!("xi must be > 0, got {}", self.xi)));
        }
        Ok(())
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `epsilon * ||x|| * g / ||g||`, or `None` when `g` is zero or `epsilon` is zero.
pub fn at_perturbation(x: &Tensor, g: &Tensor, epsilon: f64) -> Result<Option<Tensor>> {
    check_same_shape("at_perturb", x, g)?;
    let x_norm = numeric::norm(x.data());
    if x_norm == 0.0 {
        return Err(Error::ZeroInputNorm);
    }
    if epsilon == 0.0 {
        return Ok(None);
    }
    let Some(unit) = numeric::unit_direction(g.data()) else {
        return Ok(None);
    };
    let radius = epsilon * x_norm;
    let r = unit.into_iter().map(|u| radius * u).collect();
    Ok(Some(Tensor::new(x.shape().to_vec(), r)?))
}

/// Adversarial embeddings `x + epsilon * ||x|| * g / ||g||`.
///
/// `g` should be the gradient of the task loss at `x` with the parameters
/// held fixed. Returns `x` unchanged when `g` is zero or `epsilon` is zero.
pub fn at_perturb(x: &Tensor, g: &Tensor, epsilon: f64) -> Result<Tensor> {
    Ok(match at_perturbation(x, g, epsilon)? {
        None => x.clone(),
        Some(r) => add_tensors(x, &r)?,
    })
}

fn add_tensors(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
}

/// Zeroes the rows of an `l x h` tensor whose mask entry is false.
pub fn mask_rows(t: &mut Tensor, row_mask: &[bool]) -> Result<()> {
    let rows = t.shape().first().copied().unwrap_or(0);
    if rows != row_mask.len() || t.shape().len() != 2 {
        return Err(Error::shape("mask_rows", format!("{:?} vs mask {}", t.shape(), row_mask.len())));
    }
    let cols = t.shape()[1];
    for (row, &keep) in t.data_mut().chunks_mut(cols).zip(row_mask) {
        if !keep {
            row.fill(0.0);
        }
    }
    Ok(())
}

/// `sum_k KL(p_clean_k || p_pert_k)` with the clean distributions held constant.
pub fn kl_span(tape: &mut Tape<'_>, p_clean: &[Vec<f64>], p_pert: &[Var]) -> Result<Var> {
    if p_clean.len() != p_pert.len() {
        return Err(Error::SupportMismatch(p_clean.len(), p_pert.len()));
    }
    let mut total: Option<Var> = None;
    for (p, &q) in p_clean.iter().zip(p_pert) {
        let kl = tape.kl_from_const(p, q)?;
        total = Some(match total {
            None => kl,
            Some(t) => tape.add(t, kl)?,
        });
    }
    total.ok_or(Error::SupportMismatch(0, 0))
}

/// KL divergence between two plain distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::vector(q.to_vec())?);
    let kl = tape.kl_from_const(p, qv)?;
    Ok(tape.scalar_value(kl))
}

/// Unit-Frobenius-norm Gaussian direction supported on the unmasked rows.
pub fn random_unit_direction<R: Rng + ?Sized>(shape: &[usize], row_mask: &[bool], rng: &mut R) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    let raw: Vec<f64> = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
    let mut d = Tensor::new(shape.to_vec(), raw)?;
    mask_rows(&mut d, row_mask)?;
    let unit = numeric::unit_direction(d.data()).ok_or(Error::AllPositionsMasked)?;
    Tensor::new(shape.to_vec(), unit)
}

/// Gradient of `KL(p_clean || p(x + xi * d))` with respect to the offset, at `xi * d`.
///
/// `forward` maps an embedding value on the given tape to the model's
/// predicted distributions; it must not require parameter gradients.
pub fn vat_gradient<'a, F>(x: &Tensor, p_clean: &[Vec<f64>], d: &Tensor, xi: f64, forward: &mut F) -> Result<Tensor>
where
    F: FnMut(&mut Tape<'a>, Var) -> Result<Vec<Var>>,
{
    check_same_shape("vat_perturb", x, d)?;
    let mut tape = Tape::new();
    let base = tape.constant(x.clone());
    let offset = d.data().iter().map(|v| xi * v).collect();
    let offset = tape.input(Tensor::new(d.shape().to_vec(), offset)?, true);
    let probe = tape.add(base, offset)?;
    let dists = forward(&mut tape, probe)?;
    let kl = kl_span(&mut tape, p_clean, &dists)?;
    let grads = tape.backward(kl)?;
    Tensor::new(x.shape().to_vec(), grads.get_or_zeros(offset, x.len()))
}

/// Clean distributions of `forward` at `x`, as plain values.
pub fn clean_distributions<'a, F>(x: &Tensor, forward: &mut F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Tape<'a>, Var) -> Result<Vec<Var>>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let dists = forward(&mut tape, xv)?;
    Ok(dists.iter().map(|&d| tape.value(d).to_vec()).collect())
}

/// Virtual adversarial perturbation `r_vat` (no label needed).
///
/// One power-iteration step: draw a random unit direction `d` on the
/// unmasked rows, take the KL gradient at `x + xi * d`, and rescale it to
/// `epsilon * ||x||`. `p_clean` may be passed in when the clean
/// distributions are already known. Returns `None` when the KL gradient
/// vanishes or `epsilon` is zero.
pub fn vat_perturbation<'a, F, R>(
    x: &Tensor,
    row_mask: &[bool],
    p_clean: Option<&[Vec<f64>]>,
    forward: &mut F,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<Option<Tensor>>
where
    F: FnMut(&mut Tape<'a>, Var) -> Result<Vec<Var>>,
    R: Rng + ?Sized,
{
    config.validate()?;
    if numeric::norm(x.data()) == 0.0 {
        return Err(Error::ZeroInputNorm);
    }
    let d = random_unit_direction(x.shape(), row_mask, rng)?;
    let owned;
    let p_clean = match p_clean {
        Some(p) => p,
        None => {
            owned = clean_distributions(x, forward)?;
            &owned
        }
    };
    let mut g = vat_gradient(x, p_clean, &d, config.xi, forward)?;
    mask_rows(&mut g, row_mask)?;
    at_perturbation(x, &g, config.epsilon)
}

/// `x + r_vat`; see [`vat_perturbation`].
pub fn vat_perturb<'a, F, R>(
    x: &Tensor,
    row_mask: &[bool],
    forward: &mut F,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<Tensor>
where
    F: FnMut(&mut Tape<'a>, Var) -> Result<Vec<Var>>,
    R: Rng + ?Sized,
{
    Ok(match vat_perturbation(x, row_mask, None, forward, config, rng)? {
        None => x.clone(),
        Some(r) => add_tensors(x, &r)?,
    })
}
