//! Tape-based reverse-mode differentiation over small dense `f64` tensors.
//!
//! Only the kernels the goal network needs are provided. Parameters live
//! outside the tape and are borrowed, so building a tape per scene does
//! not copy weights.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("cannot pool an empty sequence")]
    EmptyPool,
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
}

fn shape_err(op: &'static str, detail: String) -> AdError {
    AdError::Shape { op, detail }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AdError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("tensor", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Conv1d { input: Var, weight: Var, bias: Var, dilation: usize },
    Linear { x: Var, w: Var, b: Var },
    Gather { table: Var, row: usize },
    Gap(Var),
    Concat(Var, Var),
    Reshape(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    RowSum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    PairRepulsion { mu: Var, tau: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Conv1d { .. } => "conv1d_causal",
            Op::Linear { .. } => "linear",
            Op::Gather { .. } => "embedding_gather",
            Op::Gap(_) => "global_average_pool",
            Op::Concat(..) => "concat",
            Op::Reshape(_) => "reshape",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Clamp(..) => "clamp",
            Op::Sum(_) => "sum",
            Op::RowSum(_) => "row_sum",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LogSumExp(_) => "logsumexp",
            Op::PairRepulsion { .. } => "pair_repulsion",
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameters, which are read from the borrowed store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss: one tensor per parameter (zero when the
/// parameter did not take part) plus any leaves created with
/// [`Tape::input`] and `requires_grad`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    inputs: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.inputs.get(&v)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, nodes: Vec::with_capacity(64) }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    fn grad_flag(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var, AdError> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(AdError::NonFinite(op.name()));
        }
        self.nodes.push(Node { op, value: Some(value), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter {index} out of range");
        self.nodes.push(Node { op: Op::Param(index), value: None, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Some(t), requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Some(t), requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Causal dilated convolution over `[C_in, T]`, weight `[C_out, C_in, k]`
    /// where tap `j` multiplies `x[t - j*dilation]`; zero left padding keeps
    /// the output length at `T`.
    pub fn conv1d_causal(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var, AdError> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
            return Err(shape_err("conv1d_causal", format!("input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        if ws[2] == 0 || dilation == 0 {
            return Err(AdError::Argument { op: "conv1d_causal", detail: "kernel and dilation must be >= 1".into() });
        }
        let (c_in, t_len, c_out, k) = (xs[0], xs[1], ws[0], ws[2]);
        let (x, w, b) = (&self.value(input).data, &self.value(weight).data, &self.value(bias).data);
        let mut out = vec![0.0; c_out * t_len];
        for o in 0..c_out {
            let row = &mut out[o * t_len..(o + 1) * t_len];
            row.fill(b[o]);
            for c in 0..c_in {
                let xr = &x[c * t_len..(c + 1) * t_len];
                for j in 0..k {
                    let shift = j * dilation;
                    if shift >= t_len {
                        break;
                    }
                    let wv = w[(o * c_in + c) * k + j];
                    for (r, xv) in row[shift..].iter_mut().zip(&xr[..t_len - shift]) {
                        *r += wv * xv;
                    }
                }
            }
        }
        let rg = self.grad_flag(input) || self.grad_flag(weight) || self.grad_flag(bias);
        self.push(Op::Conv1d { input, weight, bias, dilation }, Tensor { shape: vec![c_out, t_len], data: out }, rg)
    }

    /// `w x + b` for `x: [n]`, `w: [m, n]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AdError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
            return Err(shape_err("linear", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let out: Vec<f64> = (0..m)
            .map(|i| bv[i] + wv[i * n..(i + 1) * n].iter().zip(xv).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let rg = self.grad_flag(x) || self.grad_flag(w) || self.grad_flag(b);
        self.push(Op::Linear { x, w, b }, Tensor::vector(out), rg)
    }

    pub fn embedding_gather(&mut self, table: Var, row: usize) -> Result<Var, AdError> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(shape_err("embedding_gather", format!("table {s:?}")));
        }
        let (rows, n) = (s[0], s[1]);
        if row >= rows {
            return Err(AdError::Index { index: row, len: rows });
        }
        let data = self.value(table).data[row * n..(row + 1) * n].to_vec();
        let rg = self.grad_flag(table);
        self.push(Op::Gather { table, row }, Tensor::vector(data), rg)
    }

    /// Mean over the time axis of `[C, T]`.
    pub fn global_average_pool(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err("global_average_pool", format!("{s:?}")));
        }
        let (c, t) = (s[0], s[1]);
        if t == 0 {
            return Err(AdError::EmptyPool);
        }
        let v = &self.value(x).data;
        let out = (0..c).map(|i| v[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64).collect();
        let rg = self.grad_flag(x);
        self.push(Op::Gap(x), Tensor::vector(out), rg)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 {
            return Err(shape_err("concat", format!("{sa:?} and {sb:?}")));
        }
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        let rg = self.grad_flag(a) || self.grad_flag(b);
        self.push(Op::Concat(a, b), Tensor::vector(data), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AdError> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let data = self.value(x).data.clone();
        let rg = self.grad_flag(x);
        self.push(Op::Reshape(x), Tensor { shape: shape.to_vec(), data }, rg)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AdError> {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| f(*v)).collect() };
        let rg = self.grad_flag(x);
        self.push(op, out, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, AdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(op.name(), format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor { shape: ta.shape.clone(), data };
        let rg = self.grad_flag(a) || self.grad_flag(b);
        self.push(op, out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, AdError> {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var, AdError> {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AdError> {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.value(x).data.iter().sum();
        let rg = self.grad_flag(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Sum over the last axis of `[R, C]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err("row_sum", format!("{s:?}")));
        }
        let c = s[1];
        let out = self.value(x).data.chunks(c.max(1)).map(|r| r.iter().sum()).collect();
        let rg = self.grad_flag(x);
        self.push(Op::RowSum(x), Tensor::vector(out), rg)
    }

    fn check_vector(&self, x: Var, op: &'static str) -> Result<(), AdError> {
        let s = self.shape(x);
        if s.len() != 1 || s[0] == 0 {
            return Err(shape_err(op, format!("expected a nonempty vector, got {s:?}")));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, AdError> {
        self.check_vector(x, "softmax")?;
        let out = softmax(&self.value(x).data);
        let rg = self.grad_flag(x);
        self.push(Op::Softmax(x), Tensor::vector(out), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AdError> {
        self.check_vector(x, "log_softmax")?;
        let v = &self.value(x).data;
        let lse = logsumexp(v);
        let out = v.iter().map(|a| a - lse).collect();
        let rg = self.grad_flag(x);
        self.push(Op::LogSoftmax(x), Tensor::vector(out), rg)
    }

    pub fn logsumexp(&mut self, x: Var) -> Result<Var, AdError> {
        self.check_vector(x, "logsumexp")?;
        let v = logsumexp(&self.value(x).data);
        let rg = self.grad_flag(x);
        self.push(Op::LogSumExp(x), Tensor::scalar(v), rg)
    }

    /// Mean over pairs `j < k` of `exp(-|mu_j - mu_k|^2 / tau)` for `mu: [K, D]`;
    /// zero when `K < 2`.
    pub fn pair_repulsion(&mut self, mu: Var, tau: f64) -> Result<Var, AdError> {
        let s = self.shape(mu);
        if s.len() != 2 {
            return Err(shape_err("pair_repulsion", format!("{s:?}")));
        }
        let v = pair_repulsion(&self.value(mu).data, s[0], s[1], tau);
        let rg = self.grad_flag(mu);
        self.push(Op::PairRepulsion { mu, tau }, Tensor::scalar(v), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AdError> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AdError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients { params: self.params.iter().map(|p| Tensor::zeros(&p.shape)).collect(), inputs: HashMap::new() };
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.inputs.insert(Var(id), Tensor { shape: node.value.as_ref().unwrap().shape.clone(), data: g });
                }
                Op::Param(i) => {
                    for (a, b) in out.params[*i].data.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                op => self.propagate(op, Var(id), &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.grad_flag(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }

    fn propagate(&self, op: &Op, out: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &self.value(out).data;
        match *op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Conv1d { input, weight, bias, dilation } => {
                let (c_in, t_len) = (self.shape(input)[0], self.shape(input)[1]);
                let (c_out, k) = (self.shape(weight)[0], self.shape(weight)[2]);
                let x = &self.value(input).data;
                let w = &self.value(weight).data;
                self.accumulate(grads, bias, |db| {
                    for o in 0..c_out {
                        db[o] += g[o * t_len..(o + 1) * t_len].iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, weight, |dw| {
                    for o in 0..c_out {
                        let gr = &g[o * t_len..(o + 1) * t_len];
                        for c in 0..c_in {
                            let xr = &x[c * t_len..(c + 1) * t_len];
                            for j in 0..k {
                                let shift = j * dilation;
                                if shift >= t_len {
                                    break;
                                }
                                dw[(o * c_in + c) * k + j] +=
                                    gr[shift..].iter().zip(&xr[..t_len - shift]).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                });
                self.accumulate(grads, input, |dx| {
                    for o in 0..c_out {
                        let gr = &g[o * t_len..(o + 1) * t_len];
                        for c in 0..c_in {
                            let dxr = &mut dx[c * t_len..(c + 1) * t_len];
                            for j in 0..k {
                                let shift = j * dilation;
                                if shift >= t_len {
                                    break;
                                }
                                let wv = w[(o * c_in + c) * k + j];
                                for (d, gv) in dxr[..t_len - shift].iter_mut().zip(&gr[shift..]) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let n = self.shape(w)[1];
                let xv = &self.value(x).data;
                let wv = &self.value(w).data;
                self.accumulate(grads, b, |db| db.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
                self.accumulate(grads, w, |dw| {
                    for (i, gv) in g.iter().enumerate() {
                        for (d, xj) in dw[i * n..(i + 1) * n].iter_mut().zip(xv) {
                            *d += gv * xj;
                        }
                    }
                });
                self.accumulate(grads, x, |dx| {
                    for (i, gv) in g.iter().enumerate() {
                        for (d, wij) in dx.iter_mut().zip(&wv[i * n..(i + 1) * n]) {
                            *d += gv * wij;
                        }
                    }
                });
            }
            Op::Gather { table, row } => {
                let n = g.len();
                self.accumulate(grads, table, |dt| {
                    dt[row * n..(row + 1) * n].iter_mut().zip(g).for_each(|(d, gv)| *d += gv)
                });
            }
            Op::Gap(x) => {
                let t = self.shape(x)[1];
                self.accumulate(grads, x, |dx| {
                    for (c, gv) in g.iter().enumerate() {
                        dx[c * t..(c + 1) * t].iter_mut().for_each(|d| *d += gv / t as f64);
                    }
                });
            }
            Op::Concat(a, b) => {
                let na = self.value(a).len();
                self.accumulate(grads, a, |d| d.iter_mut().zip(&g[..na]).for_each(|(d, gv)| *d += gv));
                self.accumulate(grads, b, |d| d.iter_mut().zip(&g[na..]).for_each(|(d, gv)| *d += gv));
            }
            Op::Reshape(x) | Op::AddScalar(x) => {
                self.accumulate(grads, x, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
            }
            Op::Relu(x) => {
                self.accumulate(grads, x, |d| {
                    for ((d, gv), yv) in d.iter_mut().zip(g).zip(y) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
                self.accumulate(grads, b, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv));
                self.accumulate(grads, b, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(a).data, &self.value(b).data);
                self.accumulate(grads, a, |d| {
                    d.iter_mut().zip(g).zip(bv).for_each(|((d, gv), bb)| *d += gv * bb)
                });
                self.accumulate(grads, b, |d| {
                    d.iter_mut().zip(g).zip(av).for_each(|((d, gv), aa)| *d += gv * aa)
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, x, |d| d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * s));
            }
            Op::Exp(x) => {
                self.accumulate(grads, x, |d| d.iter_mut().zip(g).zip(y).for_each(|((d, gv), yv)| *d += gv * yv));
            }
            Op::Log(x) => {
                let xv = &self.value(x).data;
                self.accumulate(grads, x, |d| d.iter_mut().zip(g).zip(xv).for_each(|((d, gv), xx)| *d += gv / xx));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = &self.value(x).data;
                self.accumulate(grads, x, |d| {
                    for ((d, gv), xx) in d.iter_mut().zip(g).zip(xv) {
                        if *xx >= lo && *xx <= hi {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, x, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::RowSum(x) => {
                let c = self.shape(x)[1];
                self.accumulate(grads, x, |d| {
                    for (r, gv) in g.iter().enumerate() {
                        d[r * c..(r + 1) * c].iter_mut().for_each(|d| *d += gv);
                    }
                });
            }
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                self.accumulate(grads, x, |d| {
                    d.iter_mut().zip(g).zip(y).for_each(|((d, gv), yv)| *d += yv * (gv - dot))
                });
            }
            Op::LogSoftmax(x) => {
                let total: f64 = g.iter().sum();
                self.accumulate(grads, x, |d| {
                    d.iter_mut().zip(g).zip(y).for_each(|((d, gv), yv)| *d += gv - yv.exp() * total)
                });
            }
            Op::LogSumExp(x) => {
                let xv = &self.value(x).data;
                let lse = y[0];
                self.accumulate(grads, x, |d| {
                    d.iter_mut().zip(xv).for_each(|(d, xx)| *d += g[0] * (xx - lse).exp())
                });
            }
            Op::PairRepulsion { mu, tau } => {
                let (k, dim) = (self.shape(mu)[0], self.shape(mu)[1]);
                if k < 2 {
                    return;
                }
                let m = &self.value(mu).data;
                let norm = 2.0 / (k * (k - 1)) as f64;
                self.accumulate(grads, mu, |d| {
                    for a in 0..k {
                        for b in a + 1..k {
                            let diff: Vec<f64> = (0..dim).map(|i| m[a * dim + i] - m[b * dim + i]).collect();
                            let sq: f64 = diff.iter().map(|v| v * v).sum();
                            let e = (-sq / tau).exp();
                            for i in 0..dim {
                                let gi = g[0] * norm * e * (-2.0 * diff[i] / tau);
                                d[a * dim + i] += gi;
                                d[b * dim + i] -= gi;
                            }
                        }
                    }
                });
            }
        }
    }
}

/// Max-shifted log-sum-exp; `-inf` for an all `-inf` input.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn pair_repulsion(mu: &[f64], k: usize, dim: usize, tau: f64) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let sq: f64 = (0..dim).map(|i| (mu[a * dim + i] - mu[b * dim + i]).powi(2)).sum();
            total += (-sq / tau).exp();
        }
    }
    total * 2.0 / (k * (k - 1)) as f64
}

/// Largest relative error between `analytic` and central differences of
/// `f` over `samples` randomly chosen parameter coordinates.
pub fn grad_check<F>(mut f: F, params: &[Tensor], analytic: &[Tensor], eps: f64, samples: usize, seed: u64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let orig = work[p].data[flat];
        work[p].data[flat] = orig + eps;
        let plus = f(&work);
        work[p].data[flat] = orig - eps;
        let minus = f(&work);
        work[p].data[flat] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[p].data[flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
