//! First-order optimizers and the sharpness-aware (SAM) wrapper.
//!
//! Weight decay `lambda` is the gradient of an explicit `lambda * ||w||^2`
//! term, so every base step uses `g + 2 lambda w`. SAM computes its weight
//! perturbation from the data loss alone and only the outer step sees the
//! decay term.

use crate::error::{Error, Result};
use crate::models::{loss_and_grads, Classifier, Param};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("sgd lr = {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "sgd momentum = {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("adam lr = {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("adam {name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps_hat > 0.0) {
            return Err(Error::InvalidConfig("adam eps_hat must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// The descent rule applied after any perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseOptimizer {
    Sgd(SgdConfig),
    Adam(AdamConfig),
}

impl BaseOptimizer {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaseOptimizer::Sgd(c) => c.validate(),
            BaseOptimizer::Adam(c) => c.validate(),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            BaseOptimizer::Sgd(c) => c.lr,
            BaseOptimizer::Adam(c) => c.lr,
        }
    }

    /// Copy with a different learning rate (for step schedules).
    pub fn with_lr(&self, lr: f64) -> Self {
        match *self {
            BaseOptimizer::Sgd(c) => BaseOptimizer::Sgd(SgdConfig { lr, ..c }),
            BaseOptimizer::Adam(c) => BaseOptimizer::Adam(AdamConfig { lr, ..c }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamConfig {
    /// Radius of the weight-perturbation ball.
    pub rho: f64,
    pub base: BaseOptimizer,
    /// Below this gradient norm the perturbation is skipped.
    pub grad_norm_floor: f64,
}

impl SamConfig {
    pub fn new(rho: f64, base: BaseOptimizer) -> Self {
        Self {
            rho,
            base,
            grad_norm_floor: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("sam rho = {} must be non-negative", self.rho)));
        }
        if !(self.grad_norm_floor > 0.0) {
            return Err(Error::InvalidConfig("grad_norm_floor must be positive".into()));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd(SgdState),
    Adam(AdamState),
}

impl OptimizerState {
    pub fn for_base(base: &BaseOptimizer) -> Self {
        match base {
            BaseOptimizer::Sgd(_) => OptimizerState::Sgd(SgdState::default()),
            BaseOptimizer::Adam(_) => OptimizerState::Adam(AdamState::default()),
        }
    }
}

fn check_grads(params: &[Param], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidConfig(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                left: p.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    Ok(())
}

fn zeros_like(params: &[Param]) -> Vec<Vec<f64>> {
    params.iter().map(|p| vec![0.0; p.value.numel()]).collect()
}

/// `v <- momentum * v + (g + 2 lambda w)`, then `w <- w - lr * v`.
pub fn sgd_step(params: &mut [Param], grads: &[Tensor], state: &mut SgdState, cfg: &SgdConfig) -> Result<()> {
    check_grads(params, grads)?;
    if state.velocity.is_empty() {
        state.velocity = zeros_like(params);
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            let total = gi + 2.0 * cfg.weight_decay * *w;
            *vi = cfg.momentum * *vi + total;
            *w -= cfg.lr * *vi;
        }
    }
    Ok(())
}

/// Adam with bias-corrected moments on `g + 2 lambda w`.
pub fn adam_step(params: &mut [Param], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    check_grads(params, grads)?;
    if state.m.is_empty() {
        state.m = zeros_like(params);
        state.v = zeros_like(params);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((w, &gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let total = gi + 2.0 * cfg.weight_decay * *w;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * total;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * total * total;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_hat);
        }
    }
    Ok(())
}

/// Dispatches to [`sgd_step`] or [`adam_step`].
pub fn base_step(
    params: &mut [Param],
    grads: &[Tensor],
    state: &mut OptimizerState,
    base: &BaseOptimizer,
) -> Result<()> {
    match (base, state) {
        (BaseOptimizer::Sgd(cfg), OptimizerState::Sgd(s)) => sgd_step(params, grads, s, cfg),
        (BaseOptimizer::Adam(cfg), OptimizerState::Adam(s)) => adam_step(params, grads, s, cfg),
        _ => Err(Error::InvalidConfig("optimizer state does not match its config".into())),
    }
}

/// Global L2 norm over all tensors jointly.
pub fn global_norm(tensors: &[Tensor]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// What one SAM step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamStepInfo {
    /// Data loss at the unperturbed weights.
    pub loss: f64,
    /// Data loss at `w + eps_hat` (equals `loss` when the perturbation was skipped).
    pub perturbed_loss: f64,
    /// `||g1||_2` over all parameters.
    pub grad_norm: f64,
    pub perturbed: bool,
}

/// One SAM update against an arbitrary differentiable loss.
///
/// `loss_grad` evaluates the data loss and its gradient at the current
/// parameters. The steps are: `g1 = grad L(w)`;
/// `eps_hat = rho * g1 / ||g1||_2`; `g2 = grad L(w + eps_hat)`; restore `w`;
/// base step with `g2`. If `||g1|| < grad_norm_floor` the perturbation is
/// skipped and `g1` is used.
pub fn sam_update<F>(
    params: &mut [Param],
    mut loss_grad: F,
    cfg: &SamConfig,
    state: &mut OptimizerState,
) -> Result<SamStepInfo>
where
    F: FnMut(&[Param]) -> Result<(f64, Vec<Tensor>)>,
{
    let (loss, g1) = loss_grad(params)?;
    check_grads(params, &g1)?;
    let grad_norm = global_norm(&g1);
    if grad_norm < cfg.grad_norm_floor {
        base_step(params, &g1, state, &cfg.base)?;
        return Ok(SamStepInfo {
            loss,
            perturbed_loss: loss,
            grad_norm,
            perturbed: false,
        });
    }

    let saved: Vec<Vec<f64>> = params.iter().map(|p| p.value.data().to_vec()).collect();
    let scale = cfg.rho / grad_norm;
    for (p, g) in params.iter_mut().zip(&g1) {
        for (w, gi) in p.value.data_mut().iter_mut().zip(g.data()) {
            *w += scale * gi;
        }
    }
    let perturbed = loss_grad(params);
    for (p, orig) in params.iter_mut().zip(&saved) {
        p.value.data_mut().copy_from_slice(orig);
    }
    let (perturbed_loss, g2) = perturbed?;
    if !perturbed_loss.is_finite() {
        return Err(Error::NonFinite { op: "sam perturbed loss" });
    }
    base_step(params, &g2, state, &cfg.base)?;
    Ok(SamStepInfo {
        loss,
        perturbed_loss,
        grad_norm,
        perturbed: true,
    })
}

/// SAM update of a classifier on one mini-batch (both passes use the same batch).
pub fn sam_step<M: Classifier + ?Sized>(
    model: &mut M,
    x: &Tensor,
    classes: &[usize],
    cfg: &SamConfig,
    state: &mut OptimizerState,
) -> Result<SamStepInfo> {
    if classes.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut params = model.params().to_vec();
    let info = sam_update(
        &mut params,
        |current| {
            let view = ParamView {
                model: &*model,
                params: current,
            };
            loss_and_grads(&view, x, classes)
        },
        cfg,
        state,
    )?;
    for (dst, src) in model.params_mut().iter_mut().zip(params) {
        dst.value = src.value;
    }
    Ok(info)
}

/// Plain base-optimizer update of a classifier on one mini-batch. Returns the
/// batch loss before the step.
pub fn plain_step<M: Classifier + ?Sized>(
    model: &mut M,
    x: &Tensor,
    classes: &[usize],
    base: &BaseOptimizer,
    state: &mut OptimizerState,
) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let (loss, grads) = loss_and_grads(model, x, classes)?;
    base_step(model.params_mut(), &grads, state, base)?;
    Ok(loss)
}

/// A model's architecture evaluated with substitute parameters.
struct ParamView<'a, M: ?Sized> {
    model: &'a M,
    params: &'a [Param],
}

impl<M: Classifier + ?Sized> Classifier for ParamView<'_, M> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn params(&self) -> &[Param] {
        self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        unreachable!("parameter views are read-only")
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.model.forward(tape, params, x)
    }

    fn predict(&self, _x: &Tensor) -> Result<Vec<usize>> {
        unreachable!("parameter views are only used for losses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, MlpModel};
    use crate::rng::SeedStream;

    fn scalar_param(w: f64) -> Vec<Param> {
        vec![Param::new("w", Tensor::vector(vec![w]).unwrap())]
    }

    fn grad(g: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![g]).unwrap()]
    }

    fn quadratic(params: &[Param]) -> Result<(f64, Vec<Tensor>)> {
        let w = params[0].value.data()[0];
        Ok((w * w, grad(2.0 * w)))
    }

    #[test]
    fn sgd_vanilla_step() {
        let mut p = scalar_param(1.0);
        let mut s = SgdState::default();
        sgd_step(&mut p, &grad(2.0), &mut s, &SgdConfig::new(0.1)).unwrap();
        assert!((p[0].value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let cfg = SgdConfig {
            momentum: 0.9,
            ..SgdConfig::new(0.1)
        };
        let mut p = scalar_param(0.0);
        let mut s = SgdState::default();
        for _ in 0..2 {
            sgd_step(&mut p, &grad(1.0), &mut s, &cfg).unwrap();
        }
        assert!((p[0].value.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar_param(0.3);
        sgd_step(&mut p, &grad(0.0), &mut SgdState::default(), &SgdConfig::new(0.1)).unwrap();
        adam_step(&mut p, &grad(0.0), &mut AdamState::default(), &AdamConfig::new(0.1)).unwrap();
        assert_eq!(p[0].value.data()[0], 0.3);
    }

    #[test]
    fn weight_decay_adds_two_lambda_w() {
        let cfg = SgdConfig {
            weight_decay: 0.25,
            ..SgdConfig::new(0.1)
        };
        let mut p = scalar_param(2.0);
        sgd_step(&mut p, &grad(0.0), &mut SgdState::default(), &cfg).unwrap();
        assert!((p[0].value.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        let cfg = AdamConfig::new(1e-3);
        let mut p = vec![Param::new("w", Tensor::vector(vec![0.5, -2.0]).unwrap())];
        let g = vec![Tensor::vector(vec![1.0, 1.0]).unwrap()];
        let mut s = AdamState::default();
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        let expected = -1e-3 / (1.0 + cfg.eps_hat);
        assert!((p[0].value.data()[0] - 0.5 - expected).abs() < 1e-15);
        assert!((p[0].value.data()[1] + 2.0 - expected).abs() < 1e-15);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_two_steps_match_scalar_recurrence() {
        let cfg = AdamConfig::new(0.01);
        let g = 0.7;
        let mut p = scalar_param(1.0);
        let mut s = AdamState::default();
        for _ in 0..2 {
            adam_step(&mut p, &grad(g), &mut s, &cfg).unwrap();
        }
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p[0].value.data()[0] - w).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_param(1.0);
        let mut g = grad(0.0);
        g[0].data_mut()[0] = f64::NAN;
        let err = sgd_step(&mut p, &g, &mut SgdState::default(), &SgdConfig::new(0.1))
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
    }

    #[test]
    fn sam_on_quadratic() {
        let cfg = SamConfig::new(0.5, BaseOptimizer::Sgd(SgdConfig::new(0.1)));
        let mut p = scalar_param(1.0);
        let mut state = OptimizerState::for_base(&cfg.base);
        let info = sam_update(&mut p, quadratic, &cfg, &mut state).unwrap();
        assert!(info.perturbed);
        assert_eq!(info.grad_norm, 2.0);
        assert_eq!(info.perturbed_loss, 2.25);
        assert!((p[0].value.data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn sam_guard_skips_perturbation() {
        let cfg = SamConfig::new(0.5, BaseOptimizer::Sgd(SgdConfig::new(0.1)));
        let mut p = scalar_param(0.0);
        let mut state = OptimizerState::for_base(&cfg.base);
        let info = sam_update(&mut p, quadratic, &cfg, &mut state).unwrap();
        assert!(!info.perturbed);
        assert_eq!(p[0].value.data()[0], 0.0);
    }

    #[test]
    fn sam_perturbation_norm_and_restore() {
        let cfg = SamConfig::new(0.3, BaseOptimizer::Sgd(SgdConfig::new(0.1)));
        let start = vec![
            Param::new("a", Tensor::vector(vec![1.0, -2.0]).unwrap()),
            Param::new("b", Tensor::vector(vec![0.5]).unwrap()),
        ];
        let a = [3.0, 1.0, 2.0];
        let mut calls = 0;
        let mut seen = Vec::new();
        let mut params = start.clone();
        let mut state = OptimizerState::for_base(&cfg.base);
        let info = sam_update(
            &mut params,
            |ps| {
                calls += 1;
                let flat: Vec<f64> = ps.iter().flat_map(|p| p.value.data().to_vec()).collect();
                seen.push(flat.clone());
                let loss = flat.iter().zip(a).map(|(w, ai)| ai * w * w).sum::<f64>();
                let g: Vec<f64> = flat.iter().zip(a).map(|(w, ai)| 2.0 * ai * w).collect();
                Ok((
                    loss,
                    vec![
                        Tensor::vector(g[..2].to_vec()).unwrap(),
                        Tensor::vector(g[2..].to_vec()).unwrap(),
                    ],
                ))
            },
            &cfg,
            &mut state,
        )
        .unwrap();
        assert_eq!(calls, 2);
        let shift: Vec<f64> = seen[1].iter().zip(&seen[0]).map(|(p, w)| p - w).collect();
        let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 0.3).abs() < 1e-12);
        assert!(info.perturbed_loss >= info.loss);

        let mut restored = start.clone();
        let mut s2 = OptimizerState::for_base(&cfg.base);
        let g2: Vec<f64> = seen[1].iter().zip(a).map(|(w, ai)| 2.0 * ai * w).collect();
        base_step(
            &mut restored,
            &[
                Tensor::vector(g2[..2].to_vec()).unwrap(),
                Tensor::vector(g2[2..].to_vec()).unwrap(),
            ],
            &mut s2,
            &cfg.base,
        )
        .unwrap();
        assert_eq!(restored, params);
    }

    #[test]
    fn sam_rho_zero_equals_plain_step() {
        let mut rng = SeedStream::new(9, 0);
        let x = Tensor::matrix(8, 3, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let classes: Vec<usize> = (0..8).map(|i| i % 2).collect();
        for base in [
            BaseOptimizer::Sgd(SgdConfig {
                momentum: 0.9,
                weight_decay: 5e-4,
                lr: 0.05,
            }),
            BaseOptimizer::Adam(AdamConfig::new(1e-3)),
        ] {
            let mut a = MlpModel::init(&[3, 5, 2], Activation::Tanh, 4).unwrap();
            let mut b = a.clone();
            let cfg = SamConfig::new(0.0, base);
            let mut sa = OptimizerState::for_base(&base);
            let mut sb = OptimizerState::for_base(&base);
            for _ in 0..3 {
                sam_step(&mut a, &x, &classes, &cfg, &mut sa).unwrap();
                plain_step(&mut b, &x, &classes, &base, &mut sb).unwrap();
            }
            assert_eq!(a.params(), b.params());
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let mut m = MlpModel::init(&[3, 2], Activation::Relu, 1).unwrap();
        let x = Tensor::zeros(vec![1, 3]);
        let base = BaseOptimizer::Sgd(SgdConfig::new(0.1));
        let mut s = OptimizerState::for_base(&base);
        assert!(sam_step(&mut m, &x, &[], &SamConfig::new(0.1, base), &mut s).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::new(0.0).validate().is_err());
        assert!(SgdConfig { momentum: 1.0, ..SgdConfig::new(0.1) }.validate().is_err());
        assert!(AdamConfig { beta2: 1.0, ..AdamConfig::new(0.1) }.validate().is_err());
        let base = BaseOptimizer::Sgd(SgdConfig::new(0.1));
        assert!(SamConfig::new(-0.1, base).validate().is_err());
        assert!(SamConfig::new(0.0, base).validate().is_ok());
    }
}
