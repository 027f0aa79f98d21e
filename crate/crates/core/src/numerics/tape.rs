//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! A [`Graph`] records every primitive as a node whose inputs always precede
//! it, so the node vector is already a topological order and the backward
//! pass is a single reverse sweep.

use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::gemm_acc;
use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Huber {
        x: Var,
        target: Rc<Tensor>,
        delta: f64,
    },
    Reshape(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Computation tape bound to a read-only parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable leaf (an input we want gradients for).
    pub fn input(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        self.push(value, Op::Leaf, true, "input")
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(usize, usize), NumericsError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(NumericsError::Shape(format!("{op}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(NumericsError::Shape(format!("matmul: {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(NumericsError::Shape(format!("matmul_t: {m}x{k} by ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b), rg, "matmul_t")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.value(x).transpose();
        let rg = self.rg(&[x]);
        self.push(out, Op::Transpose(x), rg, "transpose")
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var, NumericsError> {
        let (r, c) = self.same_shape(a, b, name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(r, c, data)?, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let ((r, c), (rr, rc)) = (self.dims(x), self.dims(row));
        if rr != 1 || rc != c {
            return Err(NumericsError::Shape(format!("add_row: {r}x{c} + {rr}x{rc}")));
        }
        let b = self.value(row).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(c.max(1)) {
            for (v, bias) in chunk.iter_mut().zip(&b) {
                *v += bias;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push(Tensor::matrix(r, c, data)?, Op::AddRow(x, row), rg, "add_row")
    }

    fn map(&mut self, x: Var, op: Op, name: &str, f: impl Fn(f64) -> f64) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, op, rg, name)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumericsError> {
        self.map(x, Op::Scale(x, factor), "scale", |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        self.map(x, Op::AddScalar(x), "add_scalar", |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.map(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.map(x, Op::Exp(x), "exp", f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, NumericsError> {
        if self.value(x).data().iter().any(|v| *v <= 0.0) {
            return Err(NumericsError::InvalidValue("ln of non-positive value".into()));
        }
        self.map(x, Op::Ln(x), "ln", f64::ln)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.map(x, Op::Softplus(x), "softplus", softplus)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.masked_softmax(x, None)
    }

    /// Softmax along the last axis; entries whose mask value is `false` get
    /// exactly zero weight. The mask is either one flag per column (shared
    /// by all rows) or one flag per element.
    pub fn masked_softmax(&mut self, x: Var, valid: Option<&[bool]>) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(NumericsError::InvalidValue("softmax input contains NaN".into()));
        }
        if let Some(m) = valid {
            if m.len() != c && m.len() != r * c {
                return Err(NumericsError::Shape(format!("mask of length {} for {r}x{c}", m.len())));
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row_slice(i);
            let allowed = |j: usize| match valid {
                None => true,
                Some(m) if m.len() == c => m[j],
                Some(m) => m[i * c + j],
            };
            let mut mx = f64::NEG_INFINITY;
            for (j, v) in row.iter().enumerate() {
                if allowed(j) && *v > mx {
                    mx = *v;
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(NumericsError::DegenerateMask { row: i });
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (j, v) in row.iter().enumerate() {
                if allowed(j) {
                    o[j] = (v - mx).exp();
                    sum += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax(x), rg, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(NumericsError::InvalidValue("log_softmax input contains NaN".into()));
        }
        let c = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmax(x), rg, "log_softmax")
    }

    /// `ln(sum(exp(x)))` over every element, as a 1x1 tensor.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = log_sum_exp(self.value(x).data());
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(v), Op::LogSumExp(x), rg, "log_sum_exp")
    }

    /// Per-row normalization followed by an affine `gain`/`offset` (both `1 x n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if self.dims(gain) != (1, c) || self.dims(offset) != (1, c) {
            return Err(NumericsError::Shape("layer_norm gain/offset must be 1 x n".into()));
        }
        let t = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(offset).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, offset]);
        self.push(
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(NumericsError::Shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(r, len, data)?, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let r = parts.first().map(|p| self.dims(*p).0).ok_or_else(|| NumericsError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|p| self.dims(*p).0 != r) {
            return Err(NumericsError::Shape("concat_cols row mismatch".into()));
        }
        let c: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(i));
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::matrix(r, c, data)?, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let c = parts.first().map(|p| self.dims(*p).1).ok_or_else(|| NumericsError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|p| self.dims(*p).1 != c) {
            return Err(NumericsError::Shape("concat_rows column mismatch".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let r = data.len() / c.max(1);
        let rg = self.rg(parts);
        self.push(Tensor::matrix(r, c, data)?, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if let Some(bad) = rows.iter().find(|i| **i >= r) {
            return Err(NumericsError::Shape(format!("row {bad} out of {r}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for i in rows {
            data.extend_from_slice(t.row_slice(*i));
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::matrix(rows.len(), c, data)?,
            Op::GatherRows { x, rows: rows.to_vec() },
            rg,
            "gather_rows",
        )
    }

    /// Column-wise maximum over rows, giving a `1 x n` row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if r == 0 {
            return Err(NumericsError::Shape("max over zero rows".into()));
        }
        let t = self.value(x);
        let mut argmax = vec![0usize; c];
        let mut out = t.row_slice(0).to_vec();
        for i in 1..r {
            for (j, v) in t.row_slice(i).iter().enumerate() {
                if *v > out[j] {
                    out[j] = *v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::row(&out), Op::MaxRows { x, argmax }, rg, "max_rows")
    }

    /// Column-wise mean over rows, giving a `1 x n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if r == 0 {
            return Err(NumericsError::Shape("mean over zero rows".into()));
        }
        let t = self.value(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::row(&out), Op::MeanRows(x), rg, "mean_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(v), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(NumericsError::Shape("mean of empty tensor".into()));
        }
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(v), Op::Mean(x), rg, "mean")
    }

    /// Element-wise Huber penalty of `x - target`.
    pub fn huber(&mut self, x: Var, target: Rc<Tensor>, delta: f64) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.len() != target.len() {
            return Err(NumericsError::Shape(format!(
                "huber: {:?} vs target {:?}",
                t.shape(),
                target.shape()
            )));
        }
        let data = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, y)| huber(p - y, delta))
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Huber { x, target, delta }, rg, "huber")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumericsError> {
        if output.0 >= self.nodes.len() {
            return Err(NumericsError::Contract("output is not on this tape".into()));
        }
        if self.value(output).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "gradient requested for non-scalar of shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let out_shape = self.value(output).shape().to_vec();
        grads[output.0] = Some(Tensor::new(out_shape, vec![1.0])?);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self.param_vars.iter().map(|(id, v)| (*id, *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(delta.reshaped(shape).expect("gradient shape matches value"));
            }
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.value(Var(idx));
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_acc(m, n, k, gd, false, self.value(*b).data(), true, &mut da);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_acc(k, m, n, self.value(*a).data(), true, gd, false, &mut db);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_acc(m, n, k, gd, false, self.value(*b).data(), false, &mut da);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_acc(n, m, k, gd, true, self.value(*a).data(), false, &mut db);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, db).unwrap());
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                self.accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
                if self.requires_grad(*b) {
                    let d = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*row) {
                    let c = g.cols();
                    let mut d = vec![0.0; c];
                    for chunk in gd.chunks_exact(c.max(1)) {
                        for (o, v) in d.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row(&d));
                }
            }
            Op::Scale(x, f) => {
                let mut d = g.clone();
                d.scale_assign(*f);
                self.accumulate(grads, *x, d);
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Ln(x) => {
                let d = gd.iter().zip(self.value(*x).data()).map(|(g, v)| g / v).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Softplus(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| g * sigmoid(*v))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(x) => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d.chunks_exact_mut(c).zip(out.data().chunks_exact(c)).zip(gd.chunks_exact(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::LogSoftmax(x) => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for ((drow, yrow), grow) in d.chunks_exact_mut(c).zip(out.data().chunks_exact(c)).zip(gd.chunks_exact(c)) {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..c {
                        drow[j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::LogSumExp(x) => {
                let xv = self.value(*x);
                let lse = out.item();
                let d = xv.data().iter().map(|v| gd[0] * (v - lse).exp()).collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let gain_v = self.value(*gain).data();
                if self.requires_grad(*gain) || self.requires_grad(*offset) {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for (grow, hrow) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::row(&dg));
                    self.accumulate(grads, *offset, Tensor::row(&db));
                }
                if self.requires_grad(*x) {
                    let n = c as f64;
                    let mut dx = vec![0.0; out.len()];
                    for (i, ((drow, grow), hrow)) in dx
                        .chunks_exact_mut(c)
                        .zip(gd.chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                        .enumerate()
                    {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = grow[j] * gain_v[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        for j in 0..c {
                            let dh = grow[j] * gain_v[j];
                            drow[j] = inv_std[i] / n * (n * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx).unwrap());
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims(*x);
                let len = g.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::ConcatCols(parts) => {
                let r = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.dims(*p).1;
                    if self.requires_grad(*p) {
                        let mut d = Vec::with_capacity(r * c);
                        for i in 0..r {
                            d.extend_from_slice(&gd[i * total + offset..i * total + offset + c]);
                        }
                        self.accumulate(grads, *p, Tensor::matrix(r, c, d).unwrap());
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.requires_grad(*p) {
                        let (r, c) = self.dims(*p);
                        self.accumulate(grads, *p, Tensor::matrix(r, c, gd[offset..offset + n].to_vec()).unwrap());
                    }
                    offset += n;
                }
            }
            Op::GatherRows { x, rows } => {
                let (r, c) = self.dims(*x);
                let mut d = vec![0.0; r * c];
                for (k, i) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += gd[k * c + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::MaxRows { x, argmax } => {
                let (r, c) = self.dims(*x);
                let mut d = vec![0.0; r * c];
                for (j, i) in argmax.iter().enumerate() {
                    d[i * c + j] = gd[j];
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x);
                let mut d = Vec::with_capacity(r * c);
                for _ in 0..r {
                    d.extend(gd.iter().map(|v| v / r as f64));
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape().to_vec();
                let n = self.value(*x).len();
                self.accumulate(grads, *x, Tensor::new(s, vec![gd[0]; n]).unwrap());
            }
            Op::Mean(x) => {
                let s = self.value(*x).shape().to_vec();
                let n = self.value(*x).len();
                self.accumulate(grads, *x, Tensor::new(s, vec![gd[0] / n as f64; n]).unwrap());
            }
            Op::Huber { x, target, delta } => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .zip(target.data())
                    .map(|((g, p), y)| g * huber_slope(p - y, *delta))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.clone()),
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient for any node, `None` if the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter in `store`, zero for parameters the
    /// output did not touch.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .tensors()
            .iter()
            .map(|t| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).unwrap())
            .collect();
        for (id, v) in &self.params {
            if let Some(g) = self.wrt(*v) {
                out[id.0].add_assign(g);
            }
        }
        out
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let mx = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
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

pub(crate) fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_slope(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        e
    } else {
        delta * e.signum()
    }
}
