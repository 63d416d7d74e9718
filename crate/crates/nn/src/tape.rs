//! Reverse-mode gradient tape over a fixed vocabulary of matrix ops.
//!
//! Every value on the tape is a row-major `rows × cols` matrix; batches run
//! along rows. Parameters are borrowed from their [`ParameterSet`] for the
//! lifetime of the tape, and [`Tape::backward`] consumes the tape and returns
//! [`Gradients`] keyed by `(SetId, tensor index)`. Shape errors inside the op
//! vocabulary are programming errors and panic; the layer helpers validate
//! user-facing shapes and return `NnError::Config` instead.

use crate::error::{NnError, Result};
use crate::gemm::gemm;
use crate::params::{ParameterSet, SetId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Storage<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p [f64]),
}

impl Storage<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Storage::Owned(v) => v,
            Storage::Borrowed(s) => s,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { set: SetId, index: usize },
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    RowLogSumExp(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
}

struct Node<'p> {
    value: Storage<'p>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: Vec<(SetId, usize, Vec<f64>)>,
    inputs: Vec<(usize, Vec<f64>)>,
}

impl Gradients {
    pub(crate) fn for_set(&self, set: SetId) -> impl Iterator<Item = (usize, &[f64])> {
        self.params
            .iter()
            .filter(move |(s, _, _)| *s == set)
            .map(|(_, i, g)| (*i, g.as_slice()))
    }

    /// Gradient for tensor `index` of `set`, if the loss depends on it.
    pub fn param(&self, set: SetId, index: usize) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(s, i, _)| *s == set && *i == index)
            .map(|(_, _, g)| g.as_slice())
    }

    /// Gradient of an input created with [`Tape::input_with_grad`].
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.inputs
            .iter()
            .find(|(i, _)| *i == var.0)
            .map(|(_, g)| g.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.inputs.is_empty()
    }

    fn add_param(&mut self, set: SetId, index: usize, g: Vec<f64>) {
        if let Some((_, _, acc)) = self.params.iter_mut().find(|(s, i, _)| *s == set && *i == index) {
            acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        } else {
            self.params.push((set, index, g));
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_softmax(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        o.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn row_lse(x: &[f64], cols: usize) -> Vec<f64> {
    x.chunks(cols)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value: Storage::Owned(value),
            rows,
            cols,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(self.shape(v), (1, 1), "scalar() on non-scalar node");
        self.value(v)[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        assert_eq!(values.len(), rows * cols, "constant shape mismatch");
        self.push(values, rows, cols, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        assert_eq!(values.len(), rows * cols, "input shape mismatch");
        self.push(values, rows, cols, Op::Leaf, true)
    }

    fn param_node(&mut self, set: &'p ParameterSet, name: &str, trainable: bool) -> Result<Var> {
        let index = set
            .index_of(name)
            .ok_or_else(|| NnError::Config(format!("unknown parameter '{name}'")))?;
        let t = set.tensor(index);
        let op = if trainable {
            Op::Param { set: set.id(), index }
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value: Storage::Borrowed(t.values()),
            rows: t.rows(),
            cols: t.cols(),
            op,
            requires_grad: trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable parameter view; its gradient is returned by `backward`.
    pub fn param(&mut self, set: &'p ParameterSet, name: &str) -> Result<Var> {
        self.param_node(set, name, true)
    }

    /// Parameter used as a constant: no gradient is computed for it.
    pub fn frozen(&mut self, set: &'p ParameterSet, name: &str) -> Result<Var> {
        self.param_node(set, name, false)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(out, r, c, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa, self.shape(b), "elementwise shape mismatch");
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, sa.0, sa.1, op, rg)
    }

    /// `x · wᵀ` with `x: [B, in]`, `w: [out, in]` → `[B, out]`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (b, inp) = self.shape(x);
        let (out, w_in) = self.shape(w);
        assert_eq!(inp, w_in, "matmul_t inner dimension mismatch");
        let mut y = vec![0.0; b * out];
        gemm(b, inp, out, 1.0, self.value(x), false, self.value(w), true, 0.0, &mut y);
        let rg = self.rg(x) || self.rg(w);
        self.push(y, b, out, Op::MatMulT(x, w), rg)
    }

    /// Adds a bias row (any node holding `cols` values) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (r, c) = self.shape(x);
        let bv = self.value(bias);
        assert_eq!(bv.len(), c, "bias width mismatch");
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(out, r, c, Op::AddBias(x, bias), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Minimum(a, b), f64::min)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = row_softmax(self.value(a), c);
        let rg = self.rg(a);
        self.push(out, r, c, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let lse = row_lse(self.value(a), c);
        let mut out = self.value(a).to_vec();
        for (row, l) in out.chunks_mut(c).zip(&lse) {
            row.iter_mut().for_each(|v| *v -= l);
        }
        let rg = self.rg(a);
        self.push(out, r, c, Op::LogSoftmax(a), rg)
    }

    /// Row-wise log-sum-exp → `[rows, 1]`.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = row_lse(self.value(a), c);
        let rg = self.rg(a);
        self.push(out, r, 1, Op::RowLogSumExp(a), rg)
    }

    /// Row sums → `[rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).chunks(c).map(|row| row.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(out, r, 1, Op::RowSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![s], 1, 1, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(vec![m], 1, 1, Op::Mean(a), rg)
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, rows, total, Op::Concat(parts.to_vec()), rg)
    }

    /// Columns `[start, start + len)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice out of range");
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for row in src.chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(out, r, len, Op::Slice { src: a, start }, rg)
    }

    /// Runs reverse accumulation from a scalar `loss`; the tape is consumed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::Usage("backward on a node not recorded on this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(NnError::Usage("backward requires a scalar loss".into()));
        }
        let mut out = Gradients::default();
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let val = node.value.as_slice();
            match &node.op {
                Op::Leaf => out.inputs.push((i, g)),
                Op::Param { set, index } => out.add_param(*set, *index, g),
                Op::MatMulT(x, w) => {
                    let (b, inp) = self.shape(*x);
                    let out_dim = node.cols;
                    if self.rg(*x) {
                        let acc = slot(&mut grads, x.0, b * inp);
                        gemm(b, out_dim, inp, 1.0, &g, false, self.value(*w), false, 1.0, acc);
                    }
                    if self.rg(*w) {
                        let acc = slot(&mut grads, w.0, out_dim * inp);
                        gemm(out_dim, b, inp, 1.0, &g, true, self.value(*x), false, 1.0, acc);
                    }
                }
                Op::AddBias(x, bias) => {
                    let c = node.cols;
                    if self.rg(*x) {
                        add_into(slot(&mut grads, x.0, g.len()), &g);
                    }
                    if self.rg(*bias) {
                        let acc = slot(&mut grads, bias.0, c);
                        for row in g.chunks(c) {
                            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_into(slot(&mut grads, a.0, g.len()), &g);
                    }
                    if self.rg(*b) {
                        add_into(slot(&mut grads, b.0, g.len()), &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        add_into(slot(&mut grads, a.0, g.len()), &g);
                    }
                    if self.rg(*b) {
                        let acc = slot(&mut grads, b.0, g.len());
                        acc.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let acc = slot(&mut grads, a.0, g.len());
                        for ((x, gi), bi) in acc.iter_mut().zip(&g).zip(bv) {
                            *x += gi * bi;
                        }
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let acc = slot(&mut grads, b.0, g.len());
                        for ((x, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                            *x += gi * ai;
                        }
                    }
                }
                Op::Minimum(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if self.rg(*a) {
                        let acc = slot(&mut grads, a.0, g.len());
                        for (((x, gi), ai), bi) in acc.iter_mut().zip(&g).zip(av).zip(bv) {
                            if ai <= bi {
                                *x += gi;
                            }
                        }
                    }
                    if self.rg(*b) {
                        let acc = slot(&mut grads, b.0, g.len());
                        for (((x, gi), ai), bi) in acc.iter_mut().zip(&g).zip(av).zip(bv) {
                            if ai > bi {
                                *x += gi;
                            }
                        }
                    }
                }
                Op::Scale(a, k) => {
                    let acc = slot(&mut grads, a.0, g.len());
                    acc.iter_mut().zip(&g).for_each(|(x, gi)| *x += k * gi);
                }
                Op::Offset(a) => add_into(slot(&mut grads, a.0, g.len()), &g),
                Op::Tanh(a) => {
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), y) in acc.iter_mut().zip(&g).zip(val) {
                        *x += gi * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), y) in acc.iter_mut().zip(&g).zip(val) {
                        *x += gi * y * (1.0 - y);
                    }
                }
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                        *x += gi * sigmoid(*ai);
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                }
                Op::Exp(a) => {
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), y) in acc.iter_mut().zip(&g).zip(val) {
                        *x += gi * y;
                    }
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                        *x += gi / ai;
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                        *x += 2.0 * gi * ai;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a);
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gi), ai) in acc.iter_mut().zip(&g).zip(av) {
                        if ai >= lo && ai <= hi {
                            *x += gi;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let c = node.cols;
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gr), y) in acc.chunks_mut(c).zip(g.chunks(c)).zip(val.chunks(c)) {
                        let dot: f64 = gr.iter().zip(y).map(|(p, q)| p * q).sum();
                        for ((xi, gi), yi) in x.iter_mut().zip(gr).zip(y) {
                            *xi += yi * (gi - dot);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let c = node.cols;
                    let acc = slot(&mut grads, a.0, g.len());
                    for ((x, gr), ly) in acc.chunks_mut(c).zip(g.chunks(c)).zip(val.chunks(c)) {
                        let total: f64 = gr.iter().sum();
                        for ((xi, gi), l) in x.iter_mut().zip(gr).zip(ly) {
                            *xi += gi - l.exp() * total;
                        }
                    }
                }
                Op::RowLogSumExp(a) => {
                    let c = self.shape(*a).1;
                    let sm = row_softmax(self.value(*a), c);
                    let acc = slot(&mut grads, a.0, sm.len());
                    for ((x, s), gi) in acc.chunks_mut(c).zip(sm.chunks(c)).zip(&g) {
                        x.iter_mut().zip(s).for_each(|(xi, si)| *xi += gi * si);
                    }
                }
                Op::RowSum(a) => {
                    let c = self.shape(*a).1;
                    let acc = slot(&mut grads, a.0, node.rows * c);
                    for (x, gi) in acc.chunks_mut(c).zip(&g) {
                        x.iter_mut().for_each(|xi| *xi += gi);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let acc = slot(&mut grads, a.0, n);
                    acc.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let acc = slot(&mut grads, a.0, n);
                    let share = g[0] / n as f64;
                    acc.iter_mut().for_each(|x| *x += share);
                }
                Op::Concat(parts) => {
                    let total = node.cols;
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.rg(*p) {
                            let acc = slot(&mut grads, p.0, node.rows * w);
                            for (x, row) in acc.chunks_mut(w).zip(g.chunks(total)) {
                                add_into(x, &row[offset..offset + w]);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice { src, start } => {
                    let c = self.shape(*src).1;
                    let w = node.cols;
                    let acc = slot(&mut grads, src.0, node.rows * c);
                    for (x, gr) in acc.chunks_mut(c).zip(g.chunks(w)) {
                        add_into(&mut x[*start..start + w], gr);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut [f64] {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}
