//! Dense `f64` tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Tape`] records every primitive executed on it. Values are looked up by
//! [`Var`] handles, and [`Tape::backward`] runs one reverse sweep from a
//! scalar output, accumulating vector-Jacobian products into every node that
//! depends on a `requires_grad` leaf.
//!
//! Broadcasting is limited to adding a row vector (bias) to every row of a
//! matrix. Every other primitive requires exactly matching shapes.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};

/// Dense row-major array of finite `f64` values with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero-sized dimensions, length mismatches and
    /// non-finite entries. An empty shape denotes a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "entry {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the values. Callers are responsible for keeping the
    /// entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("row() on a non-matrix tensor");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

/// The primitive operations understood by the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Elementwise sum; the right operand may also be a row vector (`[c]` or
    /// `[1, c]`) added to every row of an `[r, c]` left operand.
    Add,
    Sub,
    Mul,
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    Relu,
    Tanh,
    /// Mean over rows of `logsumexp(z_i) - z_i[label_i]` for `[batch, classes]` logits.
    SoftmaxCrossEntropy { labels: Vec<usize> },
    ScalarMul(f64),
    Sum,
    Mean,
    SquaredNorm,
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Primitive::ScalarMul(_) => "scalar_mul",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SquaredNorm => "squared_norm",
            Primitive::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Primitive>,
    operands: Vec<usize>,
    /// Softmax probabilities for the cross-entropy primitive.
    saved: Vec<f64>,
    needs_grad: bool,
}

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Ordered record of executed primitives. Operands always precede their
/// results, so a single reverse pass visits each entry once.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// [`Tape::backward`] reports a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad;
        self.push(Node {
            value: tensor,
            op: None,
            operands: Vec::new(),
            saved: Vec::new(),
            needs_grad,
        })
    }

    /// Records a differentiable input.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn index(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.index)
    }

    pub fn get(&self, var: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.index(var)?].value)
    }

    /// Value of a variable. Panics if `var` came from another tape.
    pub fn value(&self, var: Var) -> &Tensor {
        self.get(var).expect("variable belongs to a different tape")
    }

    /// Executes `op` on `operands` and records the result.
    pub fn forward(&mut self, op: Primitive, operands: &[Var]) -> Result<Var> {
        if operands.len() != op.arity() {
            return Err(Error::InvalidTensor(format!(
                "{} expects {} operand(s), got {}",
                op.name(),
                op.arity(),
                operands.len()
            )));
        }
        let idx: Vec<usize> = operands
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<_>>()?;
        let a = &self.nodes[idx[0]].value;
        let b = idx.get(1).map(|&i| &self.nodes[i].value);
        let (value, saved) = eval(&op, a, b)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = idx.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(Node {
            value,
            op: Some(op),
            operands: idx,
            saved,
            needs_grad,
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(Primitive::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward(Primitive::MatMul, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.forward(Primitive::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.forward(Primitive::Tanh, &[a])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.forward(
            Primitive::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward(Primitive::ScalarMul(c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.forward(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.forward(Primitive::Mean, &[a])
    }

    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        self.forward(Primitive::SquaredNorm, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.forward(Primitive::Reshape(shape), &[a])
    }

    /// Reverse sweep from a single-element `output`.
    ///
    /// Returns the gradient of `output` with respect to every `requires_grad`
    /// leaf on the tape (zeros for leaves the output does not depend on) and
    /// also stores it in each leaf tensor's gradient slot.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        let out = self.index(output)?;
        if self.nodes[out].value.numel() != 1 {
            return Err(Error::NotScalar(self.nodes[out].value.shape.clone()));
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[out] = Some(vec![1.0]);

        for i in (0..=out).rev() {
            let Some(upstream) = adj[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                adj[i] = Some(upstream);
                continue;
            };
            for (slot, grad) in vjp(op, node, &self.nodes, &upstream)
                .into_iter()
                .enumerate()
            {
                let j = node.operands[slot];
                if !self.nodes[j].needs_grad {
                    continue;
                }
                match &mut adj[j] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    empty => *empty = Some(grad),
                }
            }
        }

        let mut grads = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.op.is_none() && node.value.requires_grad {
                let g = adj[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.grad = Some(g.clone());
                grads[i] = Some(Tensor::from_parts(node.value.shape.clone(), g));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Gradients of one backward pass, keyed by leaf [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Removes and returns the gradient for `var`.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

fn mismatch(op: &Primitive, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

/// Shape `[c]` or `[1, c]` broadcast over the rows of an `[r, c]` matrix.
fn is_row_bias(a: &Tensor, b: &Tensor) -> bool {
    match (a.dims2(), &b.shape[..]) {
        (Some((_, c)), [bc]) | (Some((_, c)), [1, bc]) => c == *bc,
        _ => false,
    }
}

fn eval(op: &Primitive, a: &Tensor, b: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
    let unary = |f: &dyn Fn(f64) -> f64| Tensor::from_parts(a.shape.clone(), a.data.iter().map(|&v| f(v)).collect());
    let out = match op {
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let b = b.expect("binary operand");
            let f: fn(f64, f64) -> f64 = match op {
                Primitive::Add => |x, y| x + y,
                Primitive::Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            if a.shape == b.shape {
                Tensor::from_parts(
                    a.shape.clone(),
                    a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
                )
            } else if *op == Primitive::Add && is_row_bias(a, b) {
                let c = b.numel();
                Tensor::from_parts(
                    a.shape.clone(),
                    a.data
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x + b.data[i % c])
                        .collect(),
                )
            } else {
                return Err(mismatch(op, a, b));
            }
        }
        Primitive::MatMul => {
            let b = b.expect("binary operand");
            let (Some((m, k)), Some((k2, n))) = (a.dims2(), b.dims2()) else {
                return Err(mismatch(op, a, b));
            };
            if k != k2 {
                return Err(mismatch(op, a, b));
            }
            Tensor::from_parts(vec![m, n], matmul(&a.data, &b.data, m, k, n))
        }
        Primitive::Relu => unary(&|v| if v > 0.0 { v } else { 0.0 }),
        Primitive::Tanh => unary(&f64::tanh),
        Primitive::ScalarMul(c) => unary(&|v| c * v),
        Primitive::Sum => Tensor::from_parts(Vec::new(), vec![a.data.iter().sum()]),
        Primitive::Mean => Tensor::from_parts(
            Vec::new(),
            vec![a.data.iter().sum::<f64>() / a.numel() as f64],
        ),
        Primitive::SquaredNorm => {
            Tensor::from_parts(Vec::new(), vec![a.data.iter().map(|v| v * v).sum()])
        }
        Primitive::Reshape(shape) => {
            if shape.iter().product::<usize>() != a.numel() || shape.contains(&0) {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: a.shape.clone(),
                    right: shape.clone(),
                });
            }
            Tensor::from_parts(shape.clone(), a.data.clone())
        }
        Primitive::SoftmaxCrossEntropy { labels } => {
            let Some((rows, classes)) = a.dims2() else {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: a.shape.clone(),
                    right: vec![labels.len()],
                });
            };
            if labels.len() != rows {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: a.shape.clone(),
                    right: vec![labels.len()],
                });
            }
            let mut probs = vec![0.0; rows * classes];
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(Error::InvalidLabel {
                        label: label as i64,
                        reason: format!("class index out of range for {classes} classes"),
                    });
                }
                let z = &a.data[r * classes..(r + 1) * classes];
                let shift = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = z.iter().map(|v| (v - shift).exp()).sum();
                let lse = shift + sum_exp.ln();
                total += lse - z[label];
                for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(z) {
                    *p = (v - lse).exp();
                }
            }
            return Ok((
                Tensor::from_parts(Vec::new(), vec![total / rows as f64]),
                probs,
            ));
        }
    };
    Ok((out, Vec::new()))
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a^T b` for `a: [m, k]`, `b: [m, n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a b^T` for `a: [m, n]`, `b: [k, n]`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = ar.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Vector-Jacobian products of `node` with respect to each of its operands.
fn vjp(op: &Primitive, node: &Node, nodes: &[Node], up: &[f64]) -> Vec<Vec<f64>> {
    let a = &nodes[node.operands[0]].value;
    let b = node.operands.get(1).map(|&i| &nodes[i].value);
    match op {
        Primitive::Add | Primitive::Sub => {
            let b = b.expect("binary operand");
            let sign = if *op == Primitive::Sub { -1.0 } else { 1.0 };
            let gb = if a.shape == b.shape {
                up.iter().map(|u| sign * u).collect()
            } else {
                let c = b.numel();
                let mut acc = vec![0.0; c];
                for (i, u) in up.iter().enumerate() {
                    acc[i % c] += u;
                }
                acc
            };
            vec![up.to_vec(), gb]
        }
        Primitive::Mul => {
            let b = b.expect("binary operand");
            vec![
                up.iter().zip(&b.data).map(|(u, y)| u * y).collect(),
                up.iter().zip(&a.data).map(|(u, x)| u * x).collect(),
            ]
        }
        Primitive::MatMul => {
            let b = b.expect("binary operand");
            let (m, k) = a.dims2().expect("matrix");
            let (_, n) = b.dims2().expect("matrix");
            vec![
                matmul_nt(up, &b.data, m, n, k),
                matmul_tn(&a.data, up, m, k, n),
            ]
        }
        // Subgradient 0 at the kink.
        Primitive::Relu => vec![up
            .iter()
            .zip(&a.data)
            .map(|(u, &x)| if x > 0.0 { *u } else { 0.0 })
            .collect()],
        Primitive::Tanh => vec![up
            .iter()
            .zip(&node.value.data)
            .map(|(u, t)| u * (1.0 - t * t))
            .collect()],
        Primitive::ScalarMul(c) => vec![up.iter().map(|u| c * u).collect()],
        Primitive::Sum => vec![vec![up[0]; a.numel()]],
        Primitive::Mean => vec![vec![up[0] / a.numel() as f64; a.numel()]],
        Primitive::SquaredNorm => vec![a.data.iter().map(|x| 2.0 * x * up[0]).collect()],
        Primitive::Reshape(_) => vec![up.to_vec()],
        Primitive::SoftmaxCrossEntropy { labels } => {
            let (rows, classes) = a.dims2().expect("matrix");
            let scale = up[0] / rows as f64;
            let mut g: Vec<f64> = node.saved.iter().map(|p| p * scale).collect();
            for (r, &label) in labels.iter().enumerate() {
                g[r * classes + label] -= scale;
            }
            vec![g]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, 1.5]).unwrap());
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn add_rejects_transposed_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 2]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0).unwrap());
        let y = tape.mul(w, w).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().item(), Some(6.0));
        assert_eq!(tape.value(w).grad(), Some(&[6.0][..]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = [0.3, -1.2, 2.5, 0.7, 0.1, -0.4];
        let b = [1.1, -0.6, 0.9];
        let mut tape = Tape::new();
        let av = tape.constant(Tensor::matrix(2, 3, a.to_vec()).unwrap());
        let bv = tape.constant(Tensor::matrix(3, 1, b.to_vec()).unwrap());
        let c = tape.matmul(av, bv).unwrap();
        for i in 0..2 {
            let mut expect = 0.0;
            for p in 0..3 {
                expect += a[i * 3 + p] * b[p];
            }
            assert!((tape.value(c).data()[i] - expect).abs() < 1e-15);
        }
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn bias_broadcast_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.param(Tensor::vector(vec![10.0, 20.0]).unwrap());
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_outputs() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));

        let mut other = Tape::new();
        let y = other.param(Tensor::scalar(1.0).unwrap());
        assert!(matches!(tape.backward(y), Err(Error::ForeignVar)));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0).unwrap());
        let unused = tape.param(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let y = tape.mul(a, a).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1e200).unwrap());
        let y = tape.mul(x, x);
        assert!(matches!(y, Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(3, 2, vec![0.5; 6]).unwrap());
        let l = tape.softmax_cross_entropy(z, &[0, 1, 1]).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(1, 2, vec![800.0, -800.0]).unwrap());
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_rejects_label_out_of_range() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert!(matches!(
            tape.softmax_cross_entropy(z, &[2]),
            Err(Error::InvalidLabel { .. })
        ));
    }
}
