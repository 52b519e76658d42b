//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Primitives
//! append a node holding the output value and the inputs needed to
//! differentiate it; [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients into every node that requires one.
//!
//! With recording disabled the same kernels run, but nodes do not require
//! gradients and the tape can be truncated back to a mark to reuse memory.

use crate::error::{Error, Result};
use crate::gamma::{self, GammaParams};
use crate::tensor::{self, gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    LinComb(Vec<(f64, Var)>),
    Tanh(Var),
    Relu(Var),
    Positive(Var),
    Exp(Var),
    Log(Var),
    ConcatCols(Var, Var),
    Column(Var, usize),
    Sum(Var),
    Softmax(Var),
    LogSoftmaxPick(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    SquaredError(Var, Tensor),
    GammaLogPdf { t: f64, alpha: Var, beta: Var },
    GammaKl { alpha: Var, beta: Var, prior: GammaParams },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Floor added to softplus outputs so Gamma parameters stay strictly positive.
pub const POSITIVE_FLOOR: f64 = 1e-6;

/// Ordered record of primitive applications.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape whose primitives never record derivative information.
    pub fn unrecorded() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    /// Run `f` with recording suppressed, restoring the previous mode after.
    pub fn no_record<T>(&mut self, f: impl FnOnce(&mut Tape) -> T) -> T {
        let prev = self.recording;
        self.recording = false;
        let out = f(self);
        self.recording = prev;
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node created after `len`; handles past it become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Tape::backward`] call; retained for
    /// leaves only.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: requires_grad && self.recording,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, vars: &[Var]) -> Error {
        let shapes: Vec<_> = vars.iter().map(|v| self.value(*v).shape().to_vec()).collect();
        Error::Shape {
            op,
            detail: format!("operand shapes {shapes:?}"),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(Op::MatMul(a, b), out, "matmul", &[a, b])
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (Some((m, k)), Some((k2, n))) = (vx.dims2(), vw.dims2()) else {
            return Err(self.shape_err("affine", &[x, w, b]));
        };
        if k != k2 || vw.rank() != 2 || vb.shape() != [n] {
            return Err(self.shape_err("affine", &[x, w, b]));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(vb.data());
        }
        gemm(m, k, n, vx.data(), false, vw.data(), false, 1.0, &mut out);
        let out = Tensor::matrix(m, n, out)?;
        self.push(Op::Affine(x, w, b), out, "affine", &[x, w, b])
    }

    /// Elementwise sum; a rank-1 `b` whose length matches `a`'s columns is
    /// broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            let out = Tensor::new(va.shape().to_vec(), data)?;
            return self.push(Op::Add(a, b), out, "add", &[a, b]);
        }
        match (va.shape(), vb.shape()) {
            ([_, c], [n]) if c == n => {
                let mut data = va.data().to_vec();
                for row in data.chunks_mut(*c) {
                    for (x, y) in row.iter_mut().zip(vb.data()) {
                        *x += y;
                    }
                }
                let out = Tensor::new(va.shape().to_vec(), data)?;
                self.push(Op::AddRowBroadcast(a, b), out, "add", &[a, b])
            }
            _ => Err(self.shape_err("add", &[a, b])),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("sub", &[a, b]));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Sub(a, b), out, "sub", &[a, b])
    }

    /// Elementwise product of equal shapes, or `a` scaled by a one-element `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
            let out = Tensor::new(va.shape().to_vec(), data)?;
            return self.push(Op::Mul(a, b), out, "mul", &[a, b]);
        }
        if let Some(s) = vb.item() {
            let data = va.data().iter().map(|x| x * s).collect();
            let out = Tensor::new(va.shape().to_vec(), data)?;
            return self.push(Op::MulScalarVar(a, b), out, "mul", &[a, b]);
        }
        Err(self.shape_err("mul", &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| c * x).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Scale(a, c), out, "scale", &[a])
    }

    /// `sum_j c_j * x_j` over equally shaped operands.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::contract("lincomb needs at least one term"))?;
        let shape = self.value(first.1).shape().to_vec();
        if terms.iter().any(|(_, v)| self.value(*v).shape() != shape.as_slice()) {
            let vars: Vec<_> = terms.iter().map(|t| t.1).collect();
            return Err(self.shape_err("lincomb", &vars));
        }
        let slices: Vec<(f64, &[f64])> = terms.iter().map(|(c, v)| (*c, self.value(*v).data())).collect();
        let out = Tensor::new(shape, tensor::lincomb(&slices))?;
        let vars: Vec<_> = terms.iter().map(|t| t.1).collect();
        self.push(Op::LinComb(terms.to_vec()), out, "lincomb", &vars)
    }

    fn unary(&mut self, a: Var, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, out, name, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", Op::Tanh(a), tensor::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// `softplus(x) + POSITIVE_FLOOR`, the map from unconstrained to positive reals.
    pub fn positive(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "positive", Op::Positive(a), |x| tensor::softplus(x) + POSITIVE_FLOOR)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", Op::Log(a), f64::ln)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (Some((ra, ca)), Some((rb, cb))) = (va.dims2(), vb.dims2()) else {
            return Err(self.shape_err("concat", &[a, b]));
        };
        if ra != rb || va.rank() != 2 || vb.rank() != 2 {
            return Err(self.shape_err("concat", &[a, b]));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&va.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb.data()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::matrix(ra, ca + cb, data)?;
        self.push(Op::ConcatCols(a, b), out, "concat", &[a, b])
    }

    /// Column `j` of a matrix as a rank-1 tensor.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = match va.shape() {
            [r, c] if j < *c => (*r, *c),
            _ => return Err(self.shape_err("column", &[a])),
        };
        let data = (0..r).map(|i| va.data()[i * c + j]).collect();
        self.push(Op::Column(a, j), Tensor::vector(data), "column", &[a])
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum", &[a])
    }

    /// Row-wise softmax of a `[rows, classes]` matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let [_, c] = *va.shape() else {
            return Err(self.shape_err("softmax", &[a]));
        };
        let out = Tensor::new(va.shape().to_vec(), tensor::softmax_rows(va.data(), c))?;
        self.push(Op::Softmax(a), out, "softmax", &[a])
    }

    /// Log-probability of each row's target class under a softmax over logits.
    pub fn log_softmax_pick(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let [r, c] = *v.shape() else {
            return Err(self.shape_err("log_softmax_pick", &[logits]));
        };
        check_targets("log_softmax_pick", r, c, targets)?;
        let lsm = tensor::log_softmax_rows(v.data(), c);
        let data = targets.iter().enumerate().map(|(i, &t)| lsm[i * c + t]).collect();
        self.push(
            Op::LogSoftmaxPick(logits, targets.to_vec()),
            Tensor::vector(data),
            "log_softmax_pick",
            &[logits],
        )
    }

    /// Entry `targets[i]` of row `i`.
    pub fn pick(&mut self, a: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let [r, c] = *v.shape() else {
            return Err(self.shape_err("pick", &[a]));
        };
        check_targets("pick", r, c, targets)?;
        let data = targets.iter().enumerate().map(|(i, &t)| v.data()[i * c + t]).collect();
        self.push(Op::Pick(a, targets.to_vec()), Tensor::vector(data), "pick", &[a])
    }

    /// Per-row sum of squared residuals against a constant target.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let v = self.value(pred);
        if v.shape() != target.shape() {
            return Err(Error::Shape {
                op: "squared_error",
                detail: format!("prediction {:?} vs target {:?}", v.shape(), target.shape()),
            });
        }
        let (r, c) = v.dims2().ok_or_else(|| self.shape_err("squared_error", &[pred]))?;
        let data = (0..r)
            .map(|i| {
                v.data()[i * c..(i + 1) * c]
                    .iter()
                    .zip(&target.data()[i * c..(i + 1) * c])
                    .map(|(p, y)| (p - y) * (p - y))
                    .sum()
            })
            .collect();
        self.push(
            Op::SquaredError(pred, target.clone()),
            Tensor::vector(data),
            "squared_error",
            &[pred],
        )
    }

    /// Elementwise Gamma log-density at a fixed time `t`.
    pub fn gamma_log_pdf(&mut self, t: f64, alpha: Var, beta: Var) -> Result<Var> {
        if !(t > 0.0) {
            return Err(Error::domain("gamma_log_pdf", format!("t = {t} must be positive")));
        }
        let (va, vb) = (self.value(alpha), self.value(beta));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("gamma_log_pdf", &[alpha, beta]));
        }
        check_positive("gamma_log_pdf", va, vb)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&a, &b)| gamma::log_pdf_unchecked(t, a, b))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::GammaLogPdf { t, alpha, beta }, out, "gamma_log_pdf", &[alpha, beta])
    }

    /// Elementwise KL(Gamma(alpha, beta) ‖ prior).
    pub fn gamma_kl(&mut self, alpha: Var, beta: Var, prior: GammaParams) -> Result<Var> {
        let (va, vb) = (self.value(alpha), self.value(beta));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("gamma_kl", &[alpha, beta]));
        }
        check_positive("gamma_kl", va, vb)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&a, &b)| gamma::kl_unchecked(a, b, prior.alpha(), prior.beta()))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::GammaKl { alpha, beta, prior }, out, "gamma_kl", &[alpha, beta])
    }

    /// Reverse sweep from a scalar output; fills [`Tape::grad`] for every
    /// node that requires a gradient and lies upstream of `output`.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if self.value(output).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        let shape = self.value(output).shape().to_vec();
        self.nodes[output.0].grad = Some(Tensor::full(&shape, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(idx, &op, &g)?;
            // Only leaves keep their gradient; interior ones are spent.
            if matches!(op, Op::Leaf) {
                self.nodes[idx].grad = Some(g);
            }
            self.nodes[idx].op = op;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.data_mut().iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            None => {
                node.grad = Some(Tensor::new(node.value.shape().to_vec(), delta).expect("gradient shape"));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &Tensor) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matmul operand");
                let n = self.value(*b).dims2().expect("matmul operand").1;
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, 0.0, &mut da);
                    self.accumulate(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, 0.0, &mut db);
                    self.accumulate(*b, db);
                }
            }
            Op::Affine(x, w, b) => {
                let (m, k) = self.value(*x).dims2().expect("affine operand");
                let n = self.value(*b).numel();
                if self.wants(*x) {
                    let mut dx = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*w).data(), true, 0.0, &mut dx);
                    self.accumulate(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*x).data(), true, gd, false, 0.0, &mut dw);
                    self.accumulate(*w, dw);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    self.accumulate(*b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, gd.to_vec());
                self.accumulate(*b, gd.to_vec());
            }
            Op::AddRowBroadcast(a, b) => {
                self.accumulate(*a, gd.to_vec());
                if self.wants(*b) {
                    let c = self.value(*b).numel();
                    let mut db = vec![0.0; c];
                    for row in gd.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    self.accumulate(*b, db);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, gd.to_vec());
                self.accumulate(*b, gd.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = gd.iter().zip(self.value(*b).data()).map(|(g, y)| g * y).collect();
                    self.accumulate(*a, d);
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).collect();
                    self.accumulate(*b, d);
                }
            }
            Op::MulScalarVar(a, s) => {
                let sv = self.value(*s).data()[0];
                if self.wants(*a) {
                    self.accumulate(*a, gd.iter().map(|g| g * sv).collect());
                }
                if self.wants(*s) {
                    let d: f64 = gd.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    self.accumulate(*s, vec![d]);
                }
            }
            Op::Scale(a, c) => self.accumulate(*a, gd.iter().map(|x| c * x).collect()),
            Op::LinComb(terms) => {
                for (c, v) in terms {
                    if self.wants(*v) {
                        self.accumulate(*v, gd.iter().map(|x| c * x).collect());
                    }
                }
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(*a, d);
            }
            Op::Relu(a) => {
                let y = self.nodes[idx].value.data();
                let d = gd.iter().zip(y).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(*a, d);
            }
            Op::Positive(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| g * tensor::sigmoid(*x)).collect();
                self.accumulate(*a, d);
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                self.accumulate(*a, d);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                self.accumulate(*a, d);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.value(*a).dims2().expect("concat operand");
                let cb = self.value(*b).dims2().expect("concat operand").1;
                let w = ca + cb;
                if self.wants(*a) {
                    let d = (0..r).flat_map(|i| gd[i * w..i * w + ca].iter().copied()).collect();
                    self.accumulate(*a, d);
                }
                if self.wants(*b) {
                    let d = (0..r).flat_map(|i| gd[i * w + ca..(i + 1) * w].iter().copied()).collect();
                    self.accumulate(*b, d);
                }
            }
            Op::Column(a, j) => {
                let (r, c) = self.value(*a).dims2().expect("column operand");
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + j] = gd[i];
                }
                self.accumulate(*a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(*a, vec![gd[0]; n]);
            }
            Op::Softmax(a) => {
                let y = self.nodes[idx].value.data();
                let c = self.nodes[idx].value.dims2().expect("softmax output").1;
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), grow) in d.chunks_mut(c).zip(y.chunks(c)).zip(gd.chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for ((dv, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = yv * (gv - dot);
                    }
                }
                self.accumulate(*a, d);
            }
            Op::LogSoftmaxPick(a, targets) => {
                let v = self.value(*a);
                let c = v.dims2().expect("logits").1;
                let p = tensor::softmax_rows(v.data(), c);
                let mut d = vec![0.0; p.len()];
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        d[i * c + j] = gd[i] * (onehot - p[i * c + j]);
                    }
                }
                self.accumulate(*a, d);
            }
            Op::Pick(a, targets) => {
                let (r, c) = self.value(*a).dims2().expect("pick operand");
                let mut d = vec![0.0; r * c];
                for (i, &t) in targets.iter().enumerate() {
                    d[i * c + t] = gd[i];
                }
                self.accumulate(*a, d);
            }
            Op::SquaredError(a, target) => {
                let c = target.dims2().expect("target").1;
                let d = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(target.data())
                    .enumerate()
                    .map(|(k, (p, y))| 2.0 * (p - y) * gd[k / c])
                    .collect();
                self.accumulate(*a, d);
            }
            Op::GammaLogPdf { t, alpha, beta } => {
                let (va, vb) = (self.value(*alpha).data().to_vec(), self.value(*beta).data().to_vec());
                if self.wants(*alpha) {
                    let d = gd
                        .iter()
                        .zip(va.iter().zip(&vb))
                        .map(|(g, (a, b))| g * (b.ln() - gamma::digamma_positive(*a) + t.ln()))
                        .collect();
                    self.accumulate(*alpha, d);
                }
                if self.wants(*beta) {
                    let d = gd
                        .iter()
                        .zip(va.iter().zip(&vb))
                        .map(|(g, (a, b))| g * (a / b - t))
                        .collect();
                    self.accumulate(*beta, d);
                }
            }
            Op::GammaKl { alpha, beta, prior } => {
                let grads: Vec<(f64, f64)> = self
                    .value(*alpha)
                    .data()
                    .iter()
                    .zip(self.value(*beta).data())
                    .map(|(&a, &b)| gamma::kl_grad_unchecked(a, b, prior.alpha(), prior.beta()))
                    .collect();
                if self.wants(*alpha) {
                    let d = gd.iter().zip(&grads).map(|(g, (da, _))| g * da).collect();
                    self.accumulate(*alpha, d);
                }
                if self.wants(*beta) {
                    let d = gd.iter().zip(&grads).map(|(g, (_, db))| g * db).collect();
                    self.accumulate(*beta, d);
                }
            }
        }
        Ok(())
    }
}

fn check_targets(op: &'static str, rows: usize, classes: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::Shape {
            op,
            detail: format!("{} targets for {} rows", targets.len(), rows),
        });
    }
    if let Some(t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::contract(format!("{op}: target class {t} out of range for {classes} classes")));
    }
    Ok(())
}

fn check_positive(func: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.data().iter().chain(b.data()).any(|v| !(*v > 0.0)) {
        return Err(Error::domain(func, "Gamma parameters must be positive"));
    }
    Ok(())
}
