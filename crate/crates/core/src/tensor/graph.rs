use std::collections::HashMap;

use super::kernels::{self, dot, gelu, gelu_grad, softmax_in_place};
use super::{rows_cols, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm(Var),
    Gelu(Var),
    Abs(Var),
    L2Normalize(Var),
    Sum(Var),
    Mean(Var),
    Attention(Box<AttentionOp>),
}

#[derive(Debug)]
struct AttentionOp {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_seg: Vec<usize>,
    kv_seg: Vec<usize>,
    // Softmax weights per (segment, head), concatenated.
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A tape of eagerly evaluated operations.
///
/// Every op computes its value immediately, so values can be inspected
/// mid-construction (the toy decoder reads logits before building its loss).
/// A graph is single-use: build, call [`Graph::backward`] once, read grads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    param_order: Vec<(ParamId, Var)>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf. Gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, false)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad);
        self.params.insert(id, v);
        self.param_order.push((id, v));
        v
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_order.iter().copied()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn rows_cols(&self, v: Var) -> (usize, usize) {
        rows_cols(&self.nodes[v.0].shape)
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("recorded shapes are valid")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(shape_err(op, s, &[0, 0])),
        }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let out = kernels::transpose(self.value(a), m, n);
        let rg = self.rg(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn row_broadcast_check(&self, x: Var, r: Var, op: &'static str) -> Result<(usize, usize)> {
        let (m, n) = self.rows_cols(x);
        if self.nodes[r.0].value.len() != n {
            return Err(shape_err(op, self.shape(x), self.shape(r)));
        }
        Ok((m, n))
    }

    /// `x[m,n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check(x, b, "add_row")?;
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            add_into(&mut out[i * n..(i + 1) * n], bv);
        }
        let rg = self.rg(x) || self.rg(b);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddRow(x, b), rg))
    }

    /// `x[m,n] ⊙ g[n]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check(x, g, "mul_row")?;
        let gv = self.value(g);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            out[i * n..(i + 1) * n].iter_mut().zip(gv).for_each(|(a, b)| *a *= b);
        }
        let rg = self.rg(x) || self.rg(g);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::MulRow(x, g), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("mul_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(c).map(|(a, b)| a * b).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::MulConst(x, c.to_vec()), rg))
    }

    /// Applies a caller-supplied dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        if mask.shape() != self.shape(x) {
            return Err(shape_err("dropout", self.shape(x), mask.shape()));
        }
        self.mul_const(x, mask.data())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.abs()).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Abs(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Gelu(x), rg)
    }

    // ---- structural -----------------------------------------------------

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let (m, _) = self.rows_cols(first);
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (mx, nx) = self.rows_cols(x);
            if mx != m {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(x)));
            }
            widths.push(nx);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[i * w..(i + 1) * w]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(vec![m, total], out, Op::ConcatCols(xs.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let (_, n) = self.rows_cols(first);
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (mx, nx) = self.rows_cols(x);
            if nx != n {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(x)));
            }
            rows += mx;
            out.extend_from_slice(self.value(x));
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(vec![rows, n], out, Op::ConcatRows(xs.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.rows_cols(x);
        if width == 0 || start + width > n {
            return Err(shape_err("slice_cols", self.shape(x), &[start, width]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![m, width], out, Op::SliceCols(x, start), rg))
    }

    /// Row gather; doubles as embedding lookup when `x` is a table.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.rows_cols(x);
        if rows.is_empty() {
            return Err(Error::contract("gather_rows with no indices"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(shape_err("gather_rows", self.shape(x), &[bad]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&v[r * n..(r + 1) * n]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![rows.len(), n], out, Op::GatherRows(x, rows.to_vec()), rg))
    }

    /// Alias of [`Graph::gather_rows`] for token-id lookups.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Gathers flat elements into a vector.
    pub fn pick(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if flat.is_empty() {
            return Err(Error::contract("pick with no indices"));
        }
        if let Some(&bad) = flat.iter().find(|&&i| i >= len) {
            return Err(shape_err("pick", self.shape(x), &[bad]));
        }
        let v = self.value(x);
        let out = flat.iter().map(|&i| v[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![flat.len()], out, Op::Pick(x, flat.to_vec()), rg))
    }

    // ---- row-wise normalizations ---------------------------------------

    pub fn softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.rows_cols(x);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.rows_cols(x);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LogSoftmax(x), rg)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let (m, n) = self.rows_cols(x);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let (mean, inv) = moments(row);
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LayerNorm(x), rg)
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (m, n) = self.rows_cols(x);
        let mut out = self.value(x).to_vec();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let norm = dot(row, row).sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::L2Normalize(x), rg)
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    // ---- attention ------------------------------------------------------

    /// Multi-head scaled dot-product attention restricted to segments.
    ///
    /// Rows of `q` are split into consecutive segments of lengths `q_seg`,
    /// rows of `k`/`v` into `kv_seg`; query segment `s` attends only to key
    /// segment `s`. This lets one call serve a whole batch of independent
    /// sequences. Width must be divisible by `heads`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        q_seg: &[usize],
        kv_seg: &[usize],
    ) -> Result<Var> {
        let (nq, d) = self.matrix_dims(q, "attention")?;
        let (nk, dk) = self.matrix_dims(k, "attention")?;
        if dk != d || self.shape(v) != self.shape(k) {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!("width {d} not divisible by {heads} heads")));
        }
        if q_seg.len() != kv_seg.len()
            || q_seg.iter().sum::<usize>() != nq
            || kv_seg.iter().sum::<usize>() != nk
            || kv_seg.iter().zip(q_seg).any(|(&kl, &ql)| kl == 0 && ql > 0)
        {
            return Err(Error::contract("attention segments do not tile the inputs"));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![0.0; nq * d];
        let mut probs = Vec::new();
        let (mut q0, mut k0) = (0, 0);
        for (&ql, &kl) in q_seg.iter().zip(kv_seg) {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..ql {
                    let qi = &qv[(q0 + i) * d + c0..(q0 + i) * d + c0 + dh];
                    let mut row: Vec<f64> = (0..kl)
                        .map(|j| dot(qi, &kv[(k0 + j) * d + c0..(k0 + j) * d + c0 + dh]) * scale)
                        .collect();
                    softmax_in_place(&mut row);
                    let oi = &mut out[(q0 + i) * d + c0..(q0 + i) * d + c0 + dh];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &vv[(k0 + j) * d + c0..(k0 + j) * d + c0 + dh];
                        oi.iter_mut().zip(vj).for_each(|(o, x)| *o += p * x);
                    }
                    probs.extend_from_slice(&row);
                }
            }
            q0 += ql;
            k0 += kl;
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let op = Op::Attention(Box::new(AttentionOp {
            q,
            k,
            v,
            heads,
            q_seg: q_seg.to_vec(),
            kv_seg: kv_seg.to_vec(),
            probs,
        }));
        Ok(self.push(vec![nq, d], out, op, rg))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let send = |v: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => add_into(buf, g),
                slot @ None => *slot = Some(g.to_vec()),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(&self.nodes[a.0].shape);
                let (_, n) = rows_cols(&self.nodes[b.0].shape);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_nt_acc(gy, self.value(*b), &mut ga, m, n, k);
                    send(*a, &ga, grads);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_tn_acc(self.value(*a), gy, &mut gb, m, k, n);
                    send(*b, &gb, grads);
                }
            }
            Op::MatMulNT(a, b) => {
                // y[m,n] = a[m,k] b[n,k]^T
                let (m, k) = rows_cols(&self.nodes[a.0].shape);
                let (n, _) = rows_cols(&self.nodes[b.0].shape);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_acc(gy, self.value(*b), &mut ga, m, n, k);
                    send(*a, &ga, grads);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; n * k];
                    kernels::matmul_tn_acc(gy, self.value(*a), &mut gb, m, n, k);
                    send(*b, &gb, grads);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = rows_cols(&self.nodes[a.0].shape);
                send(*a, &kernels::transpose(gy, n, m), grads);
            }
            Op::Add(a, b) => {
                send(*a, gy, grads);
                send(*b, gy, grads);
            }
            Op::Sub(a, b) => {
                send(*a, gy, grads);
                let neg: Vec<f64> = gy.iter().map(|g| -g).collect();
                send(*b, &neg, grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga: Vec<f64> = gy.iter().zip(bv).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = gy.iter().zip(av).map(|(g, a)| g * a).collect();
                send(*a, &ga, grads);
                send(*b, &gb, grads);
            }
            Op::AddRow(x, b) => {
                let (m, n) = rows_cols(&node.shape);
                send(*x, gy, grads);
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    add_into(&mut gb, &gy[i * n..(i + 1) * n]);
                }
                send(*b, &gb, grads);
            }
            Op::MulRow(x, gvar) => {
                let (m, n) = rows_cols(&node.shape);
                let (xv, gv) = (self.value(*x), self.value(*gvar));
                let mut gx = vec![0.0; m * n];
                let mut gg = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = gy[i * n + j] * gv[j];
                        gg[j] += gy[i * n + j] * xv[i * n + j];
                    }
                }
                send(*x, &gx, grads);
                send(*gvar, &gg, grads);
            }
            Op::Scale(x, s) => {
                let g: Vec<f64> = gy.iter().map(|v| v * s).collect();
                send(*x, &g, grads);
            }
            Op::MulConst(x, c) => {
                let g: Vec<f64> = gy.iter().zip(c).map(|(a, b)| a * b).collect();
                send(*x, &g, grads);
            }
            Op::ConcatCols(xs) => {
                let (m, total) = rows_cols(&node.shape);
                let mut c0 = 0;
                for &x in xs {
                    let (_, w) = rows_cols(&self.nodes[x.0].shape);
                    if self.rg(x) {
                        let mut g = Vec::with_capacity(m * w);
                        for i in 0..m {
                            g.extend_from_slice(&gy[i * total + c0..i * total + c0 + w]);
                        }
                        send(x, &g, grads);
                    }
                    c0 += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.nodes[x.0].value.len();
                    send(x, &gy[off..off + len], grads);
                    off += len;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = rows_cols(&self.nodes[x.0].shape);
                let (_, w) = rows_cols(&node.shape);
                let mut g = vec![0.0; m * n];
                for i in 0..m {
                    g[i * n + start..i * n + start + w].copy_from_slice(&gy[i * w..(i + 1) * w]);
                }
                send(*x, &g, grads);
            }
            Op::GatherRows(x, rows) => {
                let (m, n) = rows_cols(&self.nodes[x.0].shape);
                let mut g = vec![0.0; m * n];
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut g[r * n..(r + 1) * n], &gy[i * n..(i + 1) * n]);
                }
                send(*x, &g, grads);
            }
            Op::Pick(x, flat) => {
                let mut g = vec![0.0; self.nodes[x.0].value.len()];
                for (i, &f) in flat.iter().enumerate() {
                    g[f] += gy[i];
                }
                send(*x, &g, grads);
            }
            Op::Softmax(x) => {
                let (m, n) = rows_cols(&node.shape);
                let mut g = vec![0.0; m * n];
                for i in 0..m {
                    let (yr, gr) = (&y[i * n..(i + 1) * n], &gy[i * n..(i + 1) * n]);
                    let s = dot(yr, gr);
                    for j in 0..n {
                        g[i * n + j] = yr[j] * (gr[j] - s);
                    }
                }
                send(*x, &g, grads);
            }
            Op::LogSoftmax(x) => {
                let (m, n) = rows_cols(&node.shape);
                let mut g = vec![0.0; m * n];
                for i in 0..m {
                    let (yr, gr) = (&y[i * n..(i + 1) * n], &gy[i * n..(i + 1) * n]);
                    let s: f64 = gr.iter().sum();
                    for j in 0..n {
                        g[i * n + j] = gr[j] - yr[j].exp() * s;
                    }
                }
                send(*x, &g, grads);
            }
            Op::LayerNorm(x) => {
                let (m, n) = rows_cols(&node.shape);
                let xv = self.value(*x);
                let mut g = vec![0.0; m * n];
                let nf = n as f64;
                for i in 0..m {
                    let (_, inv) = moments(&xv[i * n..(i + 1) * n]);
                    let (yr, gr) = (&y[i * n..(i + 1) * n], &gy[i * n..(i + 1) * n]);
                    let mean_g = gr.iter().sum::<f64>() / nf;
                    let mean_gy = dot(gr, yr) / nf;
                    for j in 0..n {
                        g[i * n + j] = inv * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                send(*x, &g, grads);
            }
            Op::Gelu(x) => {
                let g: Vec<f64> = self.value(*x).iter().zip(gy).map(|(&v, &g)| g * gelu_grad(v)).collect();
                send(*x, &g, grads);
            }
            Op::Abs(x) => {
                let g: Vec<f64> = self
                    .value(*x)
                    .iter()
                    .zip(gy)
                    .map(|(&v, &g)| {
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*x, &g, grads);
            }
            Op::L2Normalize(x) => {
                let (m, n) = rows_cols(&node.shape);
                let xv = self.value(*x);
                let mut g = vec![0.0; m * n];
                for i in 0..m {
                    let xr = &xv[i * n..(i + 1) * n];
                    let norm = dot(xr, xr).sqrt().max(1e-12);
                    let (yr, gr) = (&y[i * n..(i + 1) * n], &gy[i * n..(i + 1) * n]);
                    let s = dot(yr, gr);
                    for j in 0..n {
                        g[i * n + j] = (gr[j] - yr[j] * s) / norm;
                    }
                }
                send(*x, &g, grads);
            }
            Op::Sum(x) => {
                let g = vec![gy[0]; self.nodes[x.0].value.len()];
                send(*x, &g, grads);
            }
            Op::Mean(x) => {
                let len = self.nodes[x.0].value.len();
                let g = vec![gy[0] / len as f64; len];
                send(*x, &g, grads);
            }
            Op::Attention(att) => {
                let (gq, gk, gv) = self.attention_backward(att, gy);
                send(att.q, &gq, grads);
                send(att.k, &gk, grads);
                send(att.v, &gv, grads);
            }
        }
    }

    fn attention_backward(&self, att: &AttentionOp, gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (qv, kv, vv) = (self.value(att.q), self.value(att.k), self.value(att.v));
        let (nq, d) = rows_cols(&self.nodes[att.q.0].shape);
        let (nk, _) = rows_cols(&self.nodes[att.k.0].shape);
        let dh = d / att.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = vec![0.0; nq * d];
        let mut gk = vec![0.0; nk * d];
        let mut gv = vec![0.0; nk * d];
        let (mut q0, mut k0, mut p0) = (0, 0, 0);
        let mut ds = Vec::new();
        for (&ql, &kl) in att.q_seg.iter().zip(&att.kv_seg) {
            for h in 0..att.heads {
                let c0 = h * dh;
                for i in 0..ql {
                    let p = &att.probs[p0..p0 + kl];
                    p0 += kl;
                    let go = &gy[(q0 + i) * d + c0..(q0 + i) * d + c0 + dh];
                    // dV += p ⊗ go ; dP = go · V^T
                    ds.clear();
                    for (j, &pj) in p.iter().enumerate() {
                        let r = (k0 + j) * d + c0;
                        gv[r..r + dh].iter_mut().zip(go).for_each(|(a, b)| *a += pj * b);
                        ds.push(dot(go, &vv[r..r + dh]));
                    }
                    let s = dot(p, &ds);
                    for (dsj, &pj) in ds.iter_mut().zip(p) {
                        *dsj = pj * (*dsj - s) * scale;
                    }
                    let qi = (q0 + i) * d + c0;
                    for (j, &dsj) in ds.iter().enumerate() {
                        let r = (k0 + j) * d + c0;
                        for t in 0..dh {
                            gq[qi + t] += dsj * kv[r + t];
                            gk[r + t] += dsj * qv[qi + t];
                        }
                    }
                }
            }
            q0 += ql;
            k0 += kl;
        }
        (gq, gk, gv)
    }
}

/// Mean and inverse standard deviation (biased variance + ε) of a row.
fn moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}
