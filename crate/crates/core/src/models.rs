//! Classifiers built on the tape: a linear scorer and a multilayer perceptron.
//!
//! Binary labels are handled through class ids (`-1 -> 0`, `+1 -> 1`). A
//! linear model emits one score `s = w . x` per row; its two-class logits are
//! `[0, s]`, so cross-entropy reduces to the logistic loss `ln(1 + e^{-y s})`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{streams, SeedStream};
use crate::tensor::{Tape, Tensor, Var};

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

/// A differentiable classifier.
pub trait Classifier {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn params(&self) -> &[Param];

    fn params_mut(&mut self) -> &mut [Param];

    /// Raw model output for `x` given already-recorded parameters: `[batch, 1]`
    /// scores for a linear model, `[batch, classes]` logits otherwise.
    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var>;

    /// Predicted class ids for each row of `x`.
    fn predict(&self, x: &Tensor) -> Result<Vec<usize>>;
}

/// Records the model's parameters on `tape`, as differentiable leaves when
/// `track` is set.
pub fn bind_params(model: &(impl Classifier + ?Sized), tape: &mut Tape, track: bool) -> Vec<Var> {
    model
        .params()
        .iter()
        .map(|p| tape.leaf(p.value.clone().with_requires_grad(track)))
        .collect()
}

fn check_input(model: &(impl Classifier + ?Sized), x: &Tensor) -> Result<()> {
    match x.dims2() {
        Some((_, d)) if d == model.input_dim() => Ok(()),
        _ => Err(Error::ShapeMismatch {
            op: "predict_logits",
            left: x.shape().to_vec(),
            right: vec![model.input_dim()],
        }),
    }
}

/// Class logits `[batch, classes]` for `x`.
pub fn predict_logits(
    model: &(impl Classifier + ?Sized),
    tape: &mut Tape,
    params: &[Var],
    x: Var,
) -> Result<Var> {
    check_input(model, tape.get(x)?)?;
    let out = model.forward(tape, params, x)?;
    if tape.value(out).shape()[1] == model.num_classes() {
        return Ok(out);
    }
    // Single score column: logits [0, s].
    let lift = tape.constant(Tensor::matrix(1, 2, vec![0.0, 1.0])?);
    tape.matmul(out, lift)
}

/// The scalar pieces of a recorded loss.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub params: Vec<Var>,
    /// Mean cross-entropy over the batch.
    pub data_loss: Var,
    /// `data_loss + weight_decay * ||w||^2` (equals `data_loss` when decay is 0).
    pub total: Var,
}

/// Records the mean cross-entropy of `model` on `(x, classes)`.
///
/// With `weight_decay > 0` the explicit penalty `weight_decay * sum ||w||^2`
/// over all parameters is added. Optimizers apply decay on their own, so
/// training loops pass 0 here.
pub fn loss(
    model: &(impl Classifier + ?Sized),
    tape: &mut Tape,
    x: &Tensor,
    classes: &[usize],
    track_params: bool,
    weight_decay: f64,
) -> Result<LossGraph> {
    check_input(model, x)?;
    if let Some(&bad) = classes.iter().find(|&&c| c >= model.num_classes()) {
        return Err(Error::InvalidLabel {
            label: bad as i64,
            reason: format!("model has {} classes", model.num_classes()),
        });
    }
    let params = bind_params(model, tape, track_params);
    let xv = tape.constant(x.clone());
    let logits = predict_logits(model, tape, &params, xv)?;
    let data_loss = tape.softmax_cross_entropy(logits, classes)?;
    let mut total = data_loss;
    if weight_decay > 0.0 {
        for &p in &params {
            let sq = tape.squared_norm(p)?;
            let pen = tape.scale(sq, weight_decay)?;
            total = tape.add(total, pen)?;
        }
    }
    Ok(LossGraph {
        params,
        data_loss,
        total,
    })
}

/// Mean loss and parameter gradients on one batch, without weight decay.
pub fn loss_and_grads(
    model: &(impl Classifier + ?Sized),
    x: &Tensor,
    classes: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let graph = loss(model, &mut tape, x, classes, true, 0.0)?;
    let value = tape.value(graph.total).item().expect("scalar loss");
    let mut grads = tape.backward(graph.total)?;
    let grads = graph
        .params
        .iter()
        .map(|&p| grads.take(p).expect("parameter gradient"))
        .collect();
    Ok((value, grads))
}

/// Fraction of rows of `x` whose predicted class equals `classes`.
pub fn accuracy(model: &(impl Classifier + ?Sized), x: &Tensor, classes: &[usize]) -> Result<f64> {
    let pred = model.predict(x)?;
    let hits = pred.iter().zip(classes).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / classes.len().max(1) as f64)
}

fn uniform_init(rng: &mut SeedStream, fan_in: usize, shape: Vec<usize>) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::new(shape, data)
}

/// Linear scorer `s = w . x (+ b)`; predicts class 1 when `s > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    params: Vec<Param>,
    include_bias: bool,
}

impl LinearModel {
    /// All-zero weights.
    pub fn zeros(dim: usize, include_bias: bool) -> Self {
        let mut params = vec![Param::new("w", Tensor::zeros(vec![dim]))];
        if include_bias {
            params.push(Param::new("b", Tensor::zeros(vec![1])));
        }
        Self {
            params,
            include_bias,
        }
    }

    /// Uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn init(dim: usize, include_bias: bool, seed: u64) -> Result<Self> {
        let mut rng = SeedStream::new(seed, streams::INIT);
        let mut params = vec![Param::new("w", uniform_init(&mut rng, dim, vec![dim])?)];
        if include_bias {
            params.push(Param::new("b", uniform_init(&mut rng, dim, vec![1])?));
        }
        Ok(Self {
            params,
            include_bias,
        })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        Ok(Self {
            params: vec![Param::new("w", Tensor::vector(weights)?)],
            include_bias: false,
        })
    }

    pub fn include_bias(&self) -> bool {
        self.include_bias
    }

    pub fn weights(&self) -> &[f64] {
        self.params[0].value.data()
    }

    pub fn bias(&self) -> Option<f64> {
        self.params.get(1).map(|p| p.value.data()[0])
    }

    /// Scores `w . x (+ b)` for each row.
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        check_input(self, x)?;
        let (rows, _) = x.dims2().expect("checked");
        let b = self.bias().unwrap_or(0.0);
        Ok((0..rows)
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(self.weights())
                    .map(|(a, w)| a * w)
                    .sum::<f64>()
                    + b
            })
            .collect())
    }
}

impl Classifier for LinearModel {
    fn input_dim(&self) -> usize {
        self.params[0].value.numel()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let d = self.input_dim();
        let w = tape.reshape(params[0], vec![d, 1])?;
        let s = tape.matmul(x, w)?;
        match params.get(1) {
            Some(&b) => tape.add(s, b),
            None => Ok(s),
        }
    }

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self
            .scores(x)?
            .into_iter()
            .map(|s| usize::from(s > 0.0))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected network `layer_sizes[0] -> ... -> layer_sizes[last]` with
/// the activation between layers and raw logits at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<Param>,
}

impl MlpModel {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let mut rng = SeedStream::new(seed, streams::INIT);
        let mut params = Vec::new();
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            params.push(Param::new(
                format!("w{l}"),
                uniform_init(&mut rng, fan_in, vec![fan_in, fan_out])?,
            ));
            params.push(Param::new(
                format!("b{l}"),
                uniform_init(&mut rng, fan_in, vec![fan_out])?,
            ));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let mut model = Self::init(layer_sizes, activation, 0)?;
        for p in &mut model.params {
            p.value.data_mut().fill(0.0);
        }
        Ok(model)
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes {layer_sizes:?} need at least two positive entries"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Logits computed directly, without a tape.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = bind_params(self, &mut tape, false);
        let xv = tape.constant(x.clone());
        let out = predict_logits(self, &mut tape, &params, xv)?;
        Ok(tape.value(out).clone())
    }
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let layers = params.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, params[2 * l])?;
            h = tape.add(z, params[2 * l + 1])?;
            if l + 1 < layers {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        let (rows, _) = logits.dims2().expect("matrix logits");
        Ok((0..rows)
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Either model kind; the unit of checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::Linear(m) => m,
            Model::Mlp(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Model::Linear(m) => m,
            Model::Mlp(m) => m,
        }
    }

    /// Topology line of the checkpoint header.
    fn topology(&self) -> String {
        match self {
            Model::Linear(m) => format!("linear input={} bias={}", m.input_dim(), m.include_bias),
            Model::Mlp(m) => format!(
                "mlp layers={} activation={}",
                m.layer_sizes
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
                m.activation.name()
            ),
        }
    }

    /// Text checkpoint: a header with the topology, then one `param` line
    /// (name and shape) followed by the flat values for each parameter.
    /// Values use 17 significant digits, so reloading is exact.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::from("# samlab checkpoint v1\n");
        let _ = writeln!(out, "model {}", self.topology());
        for p in self.params() {
            let shape = p
                .value
                .shape()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x");
            let _ = writeln!(out, "param {} {}", p.name, shape);
            let values = p
                .value
                .data()
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(out, "{values}");
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: "<checkpoint>".into(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (ln, header) = lines.next().ok_or_else(|| err(0, "empty checkpoint".into()))?;
        let mut words = header.split_whitespace();
        if words.next() != Some("model") {
            return Err(err(ln, "expected `model` header".into()));
        }
        let kind = words.next().ok_or_else(|| err(ln, "missing model kind".into()))?;
        let mut fields = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| err(ln, format!("malformed field `{w}`")))?;
            fields.insert(k, v);
        }
        let field = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| err(ln, format!("missing `{k}`")))
        };
        let mut model = match kind {
            "linear" => {
                let dim: usize = field("input")?
                    .parse()
                    .map_err(|_| err(ln, "bad input dimension".into()))?;
                let bias: bool = field("bias")?
                    .parse()
                    .map_err(|_| err(ln, "bad bias flag".into()))?;
                Model::Linear(LinearModel::zeros(dim, bias))
            }
            "mlp" => {
                let sizes = field("layers")?
                    .split(',')
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<usize>, _>>()
                    .map_err(|_| err(ln, "bad layer sizes".into()))?;
                let act = Activation::parse(field("activation")?)?;
                Model::Mlp(MlpModel::zeros(&sizes, act)?)
            }
            other => return Err(err(ln, format!("unknown model kind `{other}`"))),
        };

        let expected = model.params().len();
        for slot in 0..expected {
            let (ln, decl) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing parameter {slot}")))?;
            let parts: Vec<&str> = decl.split_whitespace().collect();
            let param = &model.params()[slot];
            let shape = param
                .value
                .shape()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x");
            if parts.len() != 3 || parts[0] != "param" || parts[1] != param.name || parts[2] != shape {
                return Err(err(
                    ln,
                    format!("expected `param {} {}`, found `{decl}`", param.name, shape),
                ));
            }
            let (ln, values) = lines
                .next()
                .ok_or_else(|| err(ln, format!("missing values for `{}`", parts[1])))?;
            let data = values
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(ln, format!("bad value `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let target = model.params_mut()[slot].value.data_mut();
            if data.len() != target.len() {
                return Err(err(
                    ln,
                    format!("expected {} values, found {}", target.len(), data.len()),
                ));
            }
            target.copy_from_slice(&data);
        }
        if let Some((ln, extra)) = lines.next() {
            return Err(err(ln, format!("unexpected trailing content `{extra}`")));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }
}

impl Classifier for Model {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }

    fn params(&self) -> &[Param] {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut [Param] {
        self.inner_mut().params_mut()
    }

    fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.inner().forward(tape, params, x)
    }

    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.inner().predict(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_logit_is_dot_product() {
        let m = LinearModel::from_weights(vec![1.0, -1.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![2.0, 1.0]).unwrap();
        assert_eq!(m.scores(&x).unwrap(), vec![1.0]);

        let mut tape = Tape::new();
        let params = bind_params(&m, &mut tape, false);
        let xv = tape.constant(x);
        let out = m.forward(&mut tape, &params, xv).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0]);
        let logits = predict_logits(&m, &mut tape, &params, xv).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.0, 1.0]);
    }

    #[test]
    fn zero_mlp_gives_zero_logits() {
        let m = MlpModel::zeros(&[3, 4, 4, 2], Activation::Relu).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert!(m.logits(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = LinearModel::zeros(3, false);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(m.predict(&x).is_err());
        let mut tape = Tape::new();
        assert!(loss(&m, &mut tape, &x, &[1], true, 0.0).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln2() {
        let m = LinearModel::zeros(2, false);
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let (l, _) = loss_and_grads(&m, &x, &[0, 1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logit_has_vanishing_loss() {
        let m = LinearModel::from_weights(vec![500.0]).unwrap();
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let (l, _) = loss_and_grads(&m, &x, &[1]).unwrap();
        assert!(l < 1e-200);
    }

    #[test]
    fn invalid_class_is_rejected() {
        let m = LinearModel::zeros(2, false);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            loss(&m, &mut tape, &x, &[2], true, 0.0),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn weight_decay_term_is_added() {
        let m = LinearModel::from_weights(vec![1.0, 2.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let g = loss(&m, &mut tape, &x, &[1], true, 0.1).unwrap();
        let total = tape.value(g.total).item().unwrap();
        assert!((total - (std::f64::consts::LN_2 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mlp = Model::Mlp(MlpModel::init(&[2, 5, 3], Activation::Tanh, 11).unwrap());
        let back = Model::from_checkpoint(&mlp.to_checkpoint()).unwrap();
        assert_eq!(mlp, back);

        let lin = Model::Linear(LinearModel::init(4, true, 5).unwrap());
        assert_eq!(lin, Model::from_checkpoint(&lin.to_checkpoint()).unwrap());
    }

    #[test]
    fn checkpoint_rejects_mismatch() {
        let text = Model::Linear(LinearModel::zeros(3, false)).to_checkpoint();
        let tampered = text.replace("input=3", "input=4");
        assert!(Model::from_checkpoint(&tampered).is_err());
        assert!(Model::from_checkpoint("model conv\n").is_err());
    }
}
