//! White-box input attacks: FGSM and projected gradient ascent under ℓ∞ or
//! ℓ2 budgets, plus robust accuracy.
//!
//! Attacks ascend the mean cross-entropy of the model. `sign(0)` is taken as
//! 0, so coordinates with a zero input gradient stay where they are.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{bind_params, predict_logits, Classifier};
use crate::rng::{streams, SeedStream};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Linf,
    L2,
}

impl Norm {
    pub fn name(&self) -> &'static str {
        match self {
            Norm::Linf => "linf",
            Norm::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linf" => Ok(Norm::Linf),
            "l2" => Ok(Norm::L2),
            other => Err(Error::InvalidConfig(format!("unknown norm `{other}`"))),
        }
    }

    /// Norm of one sample's perturbation.
    pub fn measure(&self, delta: &[f64]) -> f64 {
        match self {
            Norm::Linf => delta.iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::L2 => delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Perturbation budget and step schedule of an attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackBudget {
    pub norm: Norm,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    /// Box every adversarial input is clipped into. Clean inputs are expected
    /// to lie inside it.
    pub clip: Option<(f64, f64)>,
    /// Feature columns the attacker may not change (for example a discrete
    /// robust feature).
    pub frozen_features: Vec<usize>,
}

impl AttackBudget {
    /// ℓ∞ PGD with step `epsilon / 4`.
    pub fn linf(epsilon: f64, steps: usize) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon,
            alpha: epsilon / 4.0,
            steps,
            random_start: false,
            clip: None,
            frozen_features: Vec::new(),
        }
    }

    /// ℓ2 PGD with step `epsilon / 4`.
    pub fn l2(epsilon: f64, steps: usize) -> Self {
        Self {
            norm: Norm::L2,
            ..Self::linf(epsilon, steps)
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            alpha: epsilon,
            ..Self::linf(epsilon, 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack epsilon = {} must be non-negative",
                self.epsilon
            )));
        }
        if self.epsilon > 0.0 && self.steps > 0 && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack alpha = {} must be positive",
                self.alpha
            )));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::InvalidConfig(format!("clip range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

/// Adversarial inputs and their perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Tensor,
    pub delta: Tensor,
    /// Samples misclassified at `x_adv`.
    pub success_mask: Vec<bool>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the mean cross-entropy with respect to the inputs.
pub fn input_gradient(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    classes: &[usize],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let params = bind_params(model, &mut tape, false);
    let xv = tape.param(x.clone());
    let logits = predict_logits(model, &mut tape, &params, xv)?;
    let loss = tape.softmax_cross_entropy(logits, classes)?;
    let mut grads = tape.backward(loss)?;
    Ok(grads.take(xv).expect("input gradient"))
}

/// Cross-entropy of every sample.
pub fn per_sample_loss(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    classes: &[usize],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let params = bind_params(model, &mut tape, false);
    let xv = tape.constant(x.clone());
    let logits = predict_logits(model, &mut tape, &params, xv)?;
    let z = tape.value(logits);
    let (rows, _) = z.dims2().expect("matrix logits");
    Ok((0..rows)
        .map(|i| {
            let row = z.row(i);
            let shift = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = shift + row.iter().map(|v| (v - shift).exp()).sum::<f64>().ln();
            lse - row[classes[i]]
        })
        .collect())
}

/// Projects each sample's perturbation (each row) onto the `eps`-ball.
///
/// ℓ∞ clamps every entry to `[-eps, eps]`; ℓ2 rescales a row by
/// `eps / ||row||` only when the row lies outside the ball.
pub fn project(delta: &Tensor, norm: Norm, eps: f64) -> Tensor {
    let mut out = delta.clone();
    let cols = delta.dims2().map_or(delta.numel(), |(_, c)| c);
    match norm {
        Norm::Linf => {
            for v in out.data_mut() {
                *v = v.clamp(-eps, eps);
            }
        }
        Norm::L2 => {
            for row in out.data_mut().chunks_mut(cols) {
                let len = Norm::L2.measure(row);
                if len > eps {
                    let s = eps / len;
                    row.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
    out
}

fn check_inputs(model: &(impl Classifier + ?Sized), x: &Tensor, classes: &[usize]) -> Result<()> {
    match x.dims2() {
        Some((rows, d)) if d == model.input_dim() && rows == classes.len() => Ok(()),
        _ => Err(Error::ShapeMismatch {
            op: "attack",
            left: x.shape().to_vec(),
            right: vec![classes.len(), model.input_dim()],
        }),
    }
}

fn finish(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    x_adv: Tensor,
    classes: &[usize],
) -> Result<AttackResult> {
    let delta: Vec<f64> = x_adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
    let delta = Tensor::new(x.shape().to_vec(), delta)?;
    let pred = model.predict(&x_adv)?;
    let success_mask = pred.iter().zip(classes).map(|(p, c)| p != c).collect();
    Ok(AttackResult {
        x_adv,
        delta,
        success_mask,
    })
}

/// Fast gradient sign method: `x + eps * sign(grad_x L)`, clipped.
pub fn fgsm(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    classes: &[usize],
    budget: &AttackBudget,
) -> Result<AttackResult> {
    if budget.norm != Norm::Linf {
        return Err(Error::InvalidConfig("FGSM is defined for the linf norm only".into()));
    }
    let single = AttackBudget {
        alpha: budget.epsilon,
        steps: 1,
        random_start: false,
        ..budget.clone()
    };
    pgd(model, x, classes, &single, 0)
}

/// Projected gradient ascent. `seed` only matters with `random_start`.
pub fn pgd(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    classes: &[usize],
    budget: &AttackBudget,
    seed: u64,
) -> Result<AttackResult> {
    pgd_observed(model, x, classes, budget, seed, |_, _| {})
}

/// [`pgd`] that hands every iterate (including the start point, as step 0)
/// to `observer`.
pub fn pgd_observed(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    classes: &[usize],
    budget: &AttackBudget,
    seed: u64,
    mut observer: impl FnMut(usize, &Tensor),
) -> Result<AttackResult> {
    budget.validate()?;
    check_inputs(model, x, classes)?;
    let (rows, cols) = x.dims2().expect("checked");
    let eps = budget.epsilon;
    let mut movable = vec![true; cols];
    for &f in &budget.frozen_features {
        if f >= cols {
            return Err(Error::InvalidConfig(format!(
                "frozen feature {f} out of range for {cols} features"
            )));
        }
        movable[f] = false;
    }

    let clip = |data: &mut [f64]| {
        if let Some((lo, hi)) = budget.clip {
            data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        }
    };

    let mut delta = Tensor::zeros(x.shape().to_vec());
    if budget.random_start && eps > 0.0 {
        let mut rng = SeedStream::new(seed, streams::ATTACK_START);
        for row in delta.data_mut().chunks_mut(cols) {
            match budget.norm {
                Norm::Linf => {
                    for (v, &m) in row.iter_mut().zip(&movable) {
                        *v = if m { rng.uniform_in(-eps, eps) } else { 0.0 };
                    }
                }
                Norm::L2 => {
                    for (v, &m) in row.iter_mut().zip(&movable) {
                        *v = if m { rng.normal() } else { 0.0 };
                    }
                    let len = Norm::L2.measure(row);
                    let radius = eps * rng.uniform();
                    if len > 0.0 {
                        row.iter_mut().for_each(|v| *v *= radius / len);
                    }
                }
            }
        }
    }
    let mut x_adv = x.clone();
    for (a, d) in x_adv.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
    clip(x_adv.data_mut());
    observer(0, &x_adv);

    if eps == 0.0 {
        return finish(model, x, x.clone(), classes);
    }

    for step in 1..=budget.steps {
        let grad = input_gradient(model, &x_adv, classes)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite { op: "pgd input gradient" });
        }
        let mut moved = x_adv.clone();
        for (r, g_row) in grad.data().chunks(cols).enumerate() {
            let row = &mut moved.data_mut()[r * cols..(r + 1) * cols];
            match budget.norm {
                Norm::Linf => {
                    for ((v, &g), &m) in row.iter_mut().zip(g_row).zip(&movable) {
                        if m {
                            *v += budget.alpha * sign(g);
                        }
                    }
                }
                Norm::L2 => {
                    let len = g_row
                        .iter()
                        .zip(&movable)
                        .filter(|(_, &m)| m)
                        .map(|(g, _)| g * g)
                        .sum::<f64>()
                        .sqrt()
                        .max(1e-12);
                    for ((v, &g), &m) in row.iter_mut().zip(g_row).zip(&movable) {
                        if m {
                            *v += budget.alpha * g / len;
                        }
                    }
                }
            }
        }
        let raw: Vec<f64> = moved.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let projected = project(&Tensor::new(x.shape().to_vec(), raw)?, budget.norm, eps);
        for ((a, &base), &d) in x_adv
            .data_mut()
            .iter_mut()
            .zip(x.data())
            .zip(projected.data())
        {
            *a = base + d;
        }
        clip(x_adv.data_mut());
        observer(step, &x_adv);
    }
    debug_assert_eq!(x_adv.data().len(), rows * cols);
    finish(model, x, x_adv, classes)
}

/// Fraction of samples still classified correctly after a PGD attack.
pub fn robust_accuracy(
    model: &(impl Classifier + ?Sized),
    dataset: &Dataset,
    budget: &AttackBudget,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Precondition("empty dataset".into()));
    }
    let classes = dataset.classes();
    let result = pgd(model, &dataset.x, &classes, budget, seed)?;
    let survived = result.success_mask.iter().filter(|&&s| !s).count();
    Ok(survived as f64 / dataset.len() as f64)
}
