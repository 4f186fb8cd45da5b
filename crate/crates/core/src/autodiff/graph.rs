//! Tape-based reverse-mode differentiation over 2-D row-major values.
//!
//! Every value is viewed as `rows × cols`; scalars are `1 × 1`. Ops are
//! appended in execution order, so the tape is already topologically sorted
//! and backward is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{dot, matmul_nn, matmul_nt, matmul_tn};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Additive mask value for excluded logits. Large enough that `exp` underflows
/// to exactly zero in both precisions, small enough to stay finite.
pub const MASKED: f64 = -1.0e9;

#[derive(Debug)]
enum Value<T> {
    Owned(Vec<T>),
    Param(usize),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        // (mean, 1/std) per row
        stats: Vec<(T, T)>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: T,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T> {
    params: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
    consumed: bool,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::of(0.797_884_560_802_865_4);
    let a = T::of(0.044_715);
    let half = T::of(0.5);
    let one = T::one();
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::of(3.0) * a * x * x);
    (y, dy)
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    /// A graph that can reference parameters of `store` without copying them.
    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(store),
            param_vars: vec![None; store.len()],
            ..Self::new()
        }
    }

    /// Like [`Graph::with_params`] but parameters are recorded as constants.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self {
            grad_enabled: false,
            ..Self::with_params(store)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(i) => self.params.expect("param leaf without store").get(ParamId(*i)).data(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shape(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(data),
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        rows: usize,
        cols: usize,
        data: Vec<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var> {
        check_finite(name, &data)?;
        Ok(self.push(rows, cols, data, op, requires_grad))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a tensor as a leaf viewed as `rows × last_dim`.
    pub fn input(&mut self, t: &Tensor<T>) -> Result<Var> {
        check_finite("input", t.data())?;
        Ok(self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, t.requires_grad()))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::shape("constant", "data length must equal rows*cols > 0"));
        }
        check_finite("constant", &data)?;
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let t = self.params.expect("graph has no parameter store").get(id);
        self.nodes.push(Node {
            rows: t.rows(),
            cols: t.cols(),
            value: Value::Param(id.0),
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::shape("matmul", alloc::format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul", m, n, out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::shape("matmul_nt", alloc::format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul_nt", m, n, out, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", alloc::format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let (r, c) = self.shape(a);
        let rg = self.rg(&[a, b]);
        self.push_checked("add", r, c, out, Op::Add(a, b), rg)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::shape("add_row", alloc::format!("row {:?} for {r}x{c}", self.shape(row))));
        }
        let bias = self.value(row);
        let out = self
            .value(a)
            .chunks_exact(c)
            .flat_map(|x| x.iter().zip(bias).map(|(&u, &v)| u + v))
            .collect();
        let rg = self.rg(&[a, row]);
        self.push_checked("add_row", r, c, out, Op::AddRow(a, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", alloc::format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let (r, c) = self.shape(a);
        let rg = self.rg(&[a, b]);
        self.push_checked("mul", r, c, out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let (r, c) = self.shape(a);
        let rg = self.rg(&[a]);
        self.push_checked("scale", r, c, out, Op::Scale(a, factor), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| gelu_parts(x).0).collect();
        let (r, c) = self.shape(a);
        let rg = self.rg(&[a]);
        self.push_checked("gelu", r, c, out, Op::Gelu(a), rg)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        out.chunks_exact_mut(c).for_each(softmax_in_place);
        let rg = self.rg(&[a]);
        self.push_checked("softmax", r, c, out, Op::Softmax(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Invalid(alloc::format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::shape("layer_norm", "gain and bias must be 1 x last_dim"));
        }
        let eps = T::of(eps);
        let n = T::of(c as f64);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = Vec::with_capacity(r * c);
        let mut stats = Vec::with_capacity(r);
        for row in self.value(x).chunks_exact(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            out.extend(row.iter().zip(g).zip(b).map(|((&v, &gi), &bi)| (v - mean) * rstd * gi + bi));
            stats.push((mean, rstd));
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push_checked("layer_norm", r, c, out, Op::LayerNorm { x, gain, bias, stats }, rg)
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = self.shape(table);
        if ids.is_empty() {
            return Err(Error::Empty("gather ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::OutOfRange { what: "token id", index: bad, limit: v });
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t[i * e..(i + 1) * e].iter().copied()).collect();
        let rg = self.rg(&[table]);
        self.push_checked("gather", ids.len(), e, out, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", alloc::format!("{start}+{len} of {c}")));
        }
        let out = self
            .value(x)
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(r, len, out, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&p| self.shape(p).0).ok_or(Error::Empty("concat_cols"))?;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", alloc::format!("{start}+{len} of {r}")));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(len, c, out, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&p| self.shape(p).1).ok_or(Error::Empty("concat_rows"))?;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let r = out.len() / c;
        let rg = self.rg(parts);
        Ok(self.push(r, c, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::shape("reshape", alloc::format!("{r}x{c} -> {rows}x{cols}")));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(rows, cols, out, Op::Reshape(x), rg))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
    pub fn dropout<R: rand::Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(alloc::format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let (r, c) = self.shape(x);
        let rg = self.rg(&[x]);
        Ok(self.push(r, c, out, Op::Dropout { x, mask }, rg))
    }

    /// Mean label-smoothed cross entropy over rows whose target is `Some`.
    ///
    /// The target distribution puts `1 - smoothing` on the gold id and
    /// `smoothing / (V - 1)` on every other id.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], smoothing: f64) -> Result<Var> {
        let (r, v) = self.shape(logits);
        if targets.len() != r {
            return Err(Error::shape("cross_entropy", alloc::format!("{} targets for {r} rows", targets.len())));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::Invalid(alloc::format!("label smoothing {smoothing} outside [0, 1)")));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(Error::OutOfRange { what: "target id", index: *bad, limit: v });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Empty("cross_entropy targets"));
        }
        let eps = T::of(smoothing);
        let off = if v > 1 { eps / T::of((v - 1) as f64) } else { T::zero() };
        let mut probs = vec![T::zero(); r * v];
        let mut total = T::zero();
        for (i, (row, tgt)) in self.value(logits).chunks_exact(v).zip(targets).enumerate() {
            let Some(gold) = *tgt else { continue };
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            let logp = |x: T| x - lse;
            let mut loss = -(T::one() - eps) * logp(row[gold]);
            if smoothing > 0.0 {
                let rest: T = row.iter().enumerate().filter(|&(j, _)| j != gold).map(|(_, &x)| logp(x)).sum();
                loss = loss - off * rest;
            }
            total = total + loss;
            for (p, &x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = logp(x).exp();
            }
        }
        let out = vec![total / T::of(count as f64)];
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            smoothing: eps,
            probs,
            count,
        };
        self.push_checked("cross_entropy", 1, 1, out, op, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push_checked("sum", 1, 1, vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Reverse sweep from a scalar loss. A graph supports exactly one backward.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            self.backprop_node(idx, &g)?;
            check_finite("backward", &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].rows * self.nodes[v.0].cols;
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    /// Accumulates into the gradient slot of `v` using a value snapshot of
    /// other nodes (borrowck-friendly: the closure receives owned inputs).
    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(buf) = self.acc(v) {
            f(buf);
        }
    }

    fn backprop_node(&mut self, idx: usize, g: &[T]) -> Result<()> {
        let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
        // Take the op out temporarily so node values can be borrowed freely.
        let op = core::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.shape(a);
                let n = cols;
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt(g, self.value(b), &mut da, m, n, k);
                    self.acc_with(a, |buf| add_into(buf, &da));
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn(self.value(a), g, &mut db, m, k, n);
                    self.acc_with(b, |buf| add_into(buf, &db));
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = self.shape(a);
                let n = cols;
                if self.requires_grad(a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nn(g, self.value(b), &mut da, m, n, k);
                    self.acc_with(a, |buf| add_into(buf, &da));
                }
                if self.requires_grad(b) {
                    let mut db = vec![T::zero(); n * k];
                    matmul_tn(g, self.value(a), &mut db, m, n, k);
                    self.acc_with(b, |buf| add_into(buf, &db));
                }
            }
            &Op::Add(a, b) => {
                self.acc_with(a, |buf| add_into(buf, g));
                self.acc_with(b, |buf| add_into(buf, g));
            }
            &Op::AddRow(a, row) => {
                self.acc_with(a, |buf| add_into(buf, g));
                self.acc_with(row, |buf| {
                    for gr in g.chunks_exact(cols) {
                        add_into(buf, gr);
                    }
                });
            }
            &Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let d: Vec<T> = g.iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
                    self.acc_with(a, |buf| add_into(buf, &d));
                }
                if self.requires_grad(b) {
                    let d: Vec<T> = g.iter().zip(self.value(a)).map(|(&x, &y)| x * y).collect();
                    self.acc_with(b, |buf| add_into(buf, &d));
                }
            }
            &Op::Scale(a, f) => {
                self.acc_with(a, |buf| buf.iter_mut().zip(g).for_each(|(b, &x)| *b = *b + x * f));
            }
            &Op::Gelu(a) => {
                let d: Vec<T> = g.iter().zip(self.value(a)).map(|(&gi, &x)| gi * gelu_parts(x).1).collect();
                self.acc_with(a, |buf| add_into(buf, &d));
            }
            &Op::Softmax(a) => {
                let y = self.value(Var(idx));
                let mut d = vec![T::zero(); rows * cols];
                for ((dr, yr), gr) in d.chunks_exact_mut(cols).zip(y.chunks_exact(cols)).zip(g.chunks_exact(cols)) {
                    let s = dot(yr, gr);
                    for ((o, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - s);
                    }
                }
                self.acc_with(a, |buf| add_into(buf, &d));
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let n = T::of(cols as f64);
                let gv = self.value(gain).to_vec();
                let xv = self.value(x);
                let mut dx = vec![T::zero(); rows * cols];
                let mut dgain = vec![T::zero(); cols];
                let mut dbias = vec![T::zero(); cols];
                for (i, &(mean, rstd)) in stats.iter().enumerate() {
                    let xr = &xv[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..cols {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxhat = gr[j] * gv[j];
                        dgain[j] = dgain[j] + gr[j] * xhat;
                        dbias[j] = dbias[j] + gr[j];
                        sum_d = sum_d + dxhat;
                        sum_dx = sum_dx + dxhat * xhat;
                    }
                    let (md, mdx) = (sum_d / n, sum_dx / n);
                    for j in 0..cols {
                        let xhat = (xr[j] - mean) * rstd;
                        dx[i * cols + j] = rstd * (gr[j] * gv[j] - md - xhat * mdx);
                    }
                }
                self.acc_with(x, |buf| add_into(buf, &dx));
                self.acc_with(gain, |buf| add_into(buf, &dgain));
                self.acc_with(bias, |buf| add_into(buf, &dbias));
            }
            Op::Gather { table, ids } => {
                let table = *table;
                self.acc_with(table, |buf| {
                    for (gr, &id) in g.chunks_exact(cols).zip(ids) {
                        add_into(&mut buf[id * cols..(id + 1) * cols], gr);
                    }
                });
            }
            &Op::SliceCols { x, start } => {
                let c = self.shape(x).1;
                self.acc_with(x, |buf| {
                    for (br, gr) in buf.chunks_exact_mut(c).zip(g.chunks_exact(cols)) {
                        add_into(&mut br[start..start + cols], gr);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    self.acc_with(p, |buf| {
                        for (br, gr) in buf.chunks_exact_mut(c).zip(g.chunks_exact(cols)) {
                            add_into(br, &gr[offset..offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            &Op::SliceRows { x, start } => {
                self.acc_with(x, |buf| add_into(&mut buf[start * cols..(start + rows) * cols], g));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc_with(p, |buf| add_into(buf, &g[offset..offset + len]));
                    offset += len;
                }
            }
            &Op::Reshape(x) => self.acc_with(x, |buf| add_into(buf, g)),
            Op::Dropout { x, mask } => {
                let x = *x;
                self.acc_with(x, |buf| {
                    for ((b, &gi), &m) in buf.iter_mut().zip(g).zip(mask) {
                        *b = *b + gi * m;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
                count,
            } => {
                let logits = *logits;
                let v = self.shape(logits).1;
                let scale = g[0] / T::of(*count as f64);
                let eps = *smoothing;
                let off = if v > 1 { eps / T::of((v - 1) as f64) } else { T::zero() };
                self.acc_with(logits, |buf| {
                    for (i, tgt) in targets.iter().enumerate() {
                        let Some(gold) = *tgt else { continue };
                        let row = &mut buf[i * v..(i + 1) * v];
                        for (j, b) in row.iter_mut().enumerate() {
                            let q = if j == gold { T::one() - eps } else { off };
                            *b = *b + scale * (probs[i * v + j] - q);
                        }
                    }
                });
            }
            &Op::Sum(x) => {
                let gi = g[0];
                self.acc_with(x, |buf| buf.iter_mut().for_each(|b| *b = *b + gi));
            }
        }
        self.nodes[idx].op = op;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient buffers for every parameter of the attached store, zero-filled
    /// for parameters that did not take part in the loss.
    pub fn param_grads(&self) -> Vec<Vec<T>> {
        let store = self.params.expect("graph has no parameter store");
        store
            .iter()
            .map(|(id, _, t)| {
                self.param_vars[id.0]
                    .and_then(|v| self.grad(v))
                    .map_or_else(|| vec![T::zero(); t.numel()], <[T]>::to_vec)
            })
            .collect()
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Max-subtracted softmax of one slice.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Max-subtracted log-softmax of one slice.
pub fn log_softmax<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&x| x - lse).collect()
}
