//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended after their inputs, so walking the tape from the end
//! visits each node once in reverse topological order.

use std::cell::{Ref, RefCell};

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{contract, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Conv1d(Var, Var),
    Reshape(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice(Var, usize, usize),
    LogSoftmax(Var),
    Softmax(Var),
    ScaleRows(Var, Var),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording tape. Operations take `&self` so calls can be nested freely.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Borrow the forward value of a node.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// Leaf node; gradients can be requested for any leaf.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.zip_values(a, b, "add", |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.zip_values(a, b, "sub", |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.zip_values(a, b, "mul", |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale))
    }

    pub fn scale(&self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    fn zip_values(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "{name}: shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert!(
                va.rank() == 2 && vb.rank() == 2 && va.shape()[1] == vb.shape()[0],
                "matmul: {:?} x {:?}",
                va.shape(),
                vb.shape()
            );
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut out = vec![0.0; m * n];
            gemm_acc(va.data(), vb.data(), &mut out, m, k, n);
            Tensor::matrix(m, n, out)
        };
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&self, a: Var, bias: Var) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(bias));
            let cols = va.cols();
            assert_eq!(vb.len(), cols, "add_bias: width mismatch");
            let mut out = va.clone();
            for row in out.data_mut().chunks_mut(cols) {
                for (o, b) in row.iter_mut().zip(vb.data()) {
                    *o += b;
                }
            }
            out
        };
        self.push(value, Op::AddBias(a, bias))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Sum of all entries, shape `[]`.
    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum(a))
    }

    /// Mean of all entries, shape `[]`.
    pub fn mean(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            Tensor::scalar(va.data().iter().sum::<f64>() / va.len() as f64)
        };
        self.push(value, Op::Mean(a))
    }

    /// "Same" 1-D convolution with zero padding.
    ///
    /// `input` is `[length, c_in]` or `[batch, length, c_in]`, `kernels` is
    /// `[k, c_in, c_out]` with odd `k`.
    pub fn conv1d_same(&self, input: Var, kernels: Var) -> Var {
        let value = {
            let (x, w) = (self.value(input), self.value(kernels));
            conv1d_forward(&x, &w).expect("conv1d_same")
        };
        self.push(value, Op::Conv1d(input, kernels))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshaped(shape).expect("reshape");
        self.push(value, Op::Reshape(a))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let value = {
            let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
            let lead = &values[0].shape()[..values[0].rank() - 1];
            let rows = values[0].rows();
            for v in &values {
                assert_eq!(
                    &v.shape()[..v.rank() - 1],
                    lead,
                    "concat: leading axes differ"
                );
            }
            let total: usize = values.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &values {
                    let c = v.cols();
                    data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(shape, data).expect("concat shape")
        };
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Stacks `[m_i, n]` matrices vertically into `[sum m_i, n]`.
    pub fn stack_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack of nothing");
        let value = {
            let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
            let cols = values[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for v in &values {
                assert!(
                    v.rank() == 2 && v.cols() == cols,
                    "stack_rows: shape {:?}",
                    v.shape()
                );
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)
        };
        self.push(value, Op::StackRows(parts.to_vec()))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&self, a: Var, start: usize, end: usize) -> Var {
        let value = {
            let va = self.value(a);
            let cols = va.cols();
            assert!(start < end && end <= cols, "slice {start}..{end} of {cols}");
            let mut data = Vec::with_capacity(va.rows() * (end - start));
            for row in va.data().chunks(cols) {
                data.extend_from_slice(&row[start..end]);
            }
            let mut shape = va.shape().to_vec();
            *shape.last_mut().unwrap() = end - start;
            Tensor::new(shape, data).expect("slice shape")
        };
        self.push(value, Op::Slice(a, start, end))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            let cols = va.cols();
            let mut out = va.clone();
            for row in out.data_mut().chunks_mut(cols) {
                let lse = super::tensor::log_sum_exp(row);
                row.iter_mut().for_each(|x| *x -= lse);
            }
            out
        };
        self.push(value, Op::LogSoftmax(a))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            let cols = va.cols();
            let mut out = va.clone();
            for row in out.data_mut().chunks_mut(cols) {
                let p = super::tensor::softmax(row);
                row.copy_from_slice(&p);
            }
            out
        };
        self.push(value, Op::Softmax(a))
    }

    /// Multiplies row `i` of `a` (`[m,n]`) by `s[i]` (`s` has `m` entries).
    pub fn scale_rows(&self, a: Var, s: Var) -> Var {
        let value = {
            let (va, vs) = (self.value(a), self.value(s));
            let cols = va.cols();
            assert_eq!(vs.len(), va.rows(), "scale_rows: row count mismatch");
            let mut out = va.clone();
            for (row, &f) in out.data_mut().chunks_mut(cols).zip(vs.data()) {
                row.iter_mut().for_each(|x| *x *= f);
            }
            out
        };
        self.push(value, Op::ScaleRows(a, s))
    }

    /// Selects rows of a `[v, d]` table, giving `[indices.len(), d]`.
    pub fn gather(&self, table: Var, indices: &[usize]) -> Var {
        let value = {
            let vt = self.value(table);
            let d = vt.cols();
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                assert!(i < vt.rows(), "gather index {i} out of range");
                data.extend_from_slice(&vt.data()[i * d..(i + 1) * d]);
            }
            Tensor::matrix(indices.len(), d, data)
        };
        self.push(value, Op::Gather(table, indices.to_vec()))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            let (rows, cols) = (va.rows(), va.cols());
            let mut out = vec![0.0; cols];
            for row in va.data().chunks(cols) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= rows as f64);
            Tensor::row(out)
        };
        self.push(value, Op::MeanRows(a))
    }

    /// Gradients of a scalar node with respect to `params`.
    ///
    /// Parameters that did not contribute to `output` receive zeros.
    pub fn grad(&self, output: Var, params: &[Var]) -> Result<Vec<Tensor>> {
        let nodes = self.nodes.borrow();
        if !nodes[output.0].value.is_scalar() {
            return Err(contract(format!(
                "gradient needs a scalar output, got shape {:?}",
                nodes[output.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            backward_node(&nodes, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(params
            .iter()
            .map(|p| match grads.get(p.0).and_then(|g| g.as_ref()) {
                Some(g) => g.clone(),
                None => Tensor::zeros(nodes[p.0].value.shape()),
            })
            .collect())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn with_data(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient shape")
}

fn backward_node(nodes: &[Node], idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[idx];
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let da = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
            let db = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
            accumulate(grads, *a, with_data(va, da));
            accumulate(grads, *b, with_data(vb, db));
        }
        Op::Affine(a, scale) => {
            let s = *scale;
            accumulate(grads, *a, g.map(|x| s * x));
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut da = vec![0.0; m * k];
            gemm_nt_acc(g.data(), vb.data(), &mut da, m, k, n);
            let mut db = vec![0.0; k * n];
            gemm_tn_acc(va.data(), g.data(), &mut db, m, k, n);
            accumulate(grads, *a, with_data(va, da));
            accumulate(grads, *b, with_data(vb, db));
        }
        Op::AddBias(a, b) => {
            let vb = val(*b);
            let cols = vb.len();
            let mut db = vec![0.0; cols];
            for row in g.data().chunks(cols) {
                for (d, x) in db.iter_mut().zip(row) {
                    *d += x;
                }
            }
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, with_data(vb, db));
        }
        Op::Relu(a) => {
            let va = val(*a);
            let d = g
                .data()
                .iter()
                .zip(va.data())
                .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                .collect();
            accumulate(grads, *a, with_data(va, d));
        }
        Op::Sigmoid(a) => {
            let out = &node.value;
            let d = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(x, y)| x * y * (1.0 - y))
                .collect();
            accumulate(grads, *a, with_data(out, d));
        }
        Op::Tanh(a) => {
            let out = &node.value;
            let d = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(x, y)| x * (1.0 - y * y))
                .collect();
            accumulate(grads, *a, with_data(out, d));
        }
        Op::Sum(a) => {
            let va = val(*a);
            accumulate(grads, *a, Tensor::full(va.shape(), g.item()));
        }
        Op::Mean(a) => {
            let va = val(*a);
            accumulate(
                grads,
                *a,
                Tensor::full(va.shape(), g.item() / va.len() as f64),
            );
        }
        Op::Conv1d(x, w) => {
            let (vx, vw) = (val(*x), val(*w));
            let (dx, dw) = conv1d_backward(vx, vw, g);
            accumulate(grads, *x, dx);
            accumulate(grads, *w, dw);
        }
        Op::Reshape(a) => {
            let va = val(*a);
            accumulate(grads, *a, with_data(va, g.data().to_vec()));
        }
        Op::Concat(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for p in parts {
                let vp = val(*p);
                let c = vp.cols();
                let mut d = Vec::with_capacity(rows * c);
                for r in 0..rows {
                    d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                }
                accumulate(grads, *p, with_data(vp, d));
                offset += c;
            }
        }
        Op::StackRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let vp = val(*p);
                accumulate(
                    grads,
                    *p,
                    with_data(vp, g.data()[offset..offset + vp.len()].to_vec()),
                );
                offset += vp.len();
            }
        }
        Op::Slice(a, start, end) => {
            let va = val(*a);
            let cols = va.cols();
            let width = end - start;
            let mut d = vec![0.0; va.len()];
            for (r, row) in g.data().chunks(width).enumerate() {
                d[r * cols + start..r * cols + end].copy_from_slice(row);
            }
            accumulate(grads, *a, with_data(va, d));
        }
        Op::LogSoftmax(a) => {
            let out = &node.value;
            let cols = out.cols();
            let mut d = Vec::with_capacity(out.len());
            for (grow, orow) in g.data().chunks(cols).zip(out.data().chunks(cols)) {
                let gsum: f64 = grow.iter().sum();
                d.extend(grow.iter().zip(orow).map(|(gi, oi)| gi - oi.exp() * gsum));
            }
            accumulate(grads, *a, with_data(out, d));
        }
        Op::Softmax(a) => {
            let out = &node.value;
            let cols = out.cols();
            let mut d = Vec::with_capacity(out.len());
            for (grow, orow) in g.data().chunks(cols).zip(out.data().chunks(cols)) {
                let dot: f64 = grow.iter().zip(orow).map(|(x, y)| x * y).sum();
                d.extend(grow.iter().zip(orow).map(|(gi, oi)| oi * (gi - dot)));
            }
            accumulate(grads, *a, with_data(out, d));
        }
        Op::ScaleRows(a, s) => {
            let (va, vs) = (val(*a), val(*s));
            let cols = va.cols();
            let mut da = Vec::with_capacity(va.len());
            let mut ds = Vec::with_capacity(vs.len());
            for ((grow, arow), &f) in g
                .data()
                .chunks(cols)
                .zip(va.data().chunks(cols))
                .zip(vs.data())
            {
                da.extend(grow.iter().map(|x| x * f));
                ds.push(grow.iter().zip(arow).map(|(x, y)| x * y).sum());
            }
            accumulate(grads, *a, with_data(va, da));
            accumulate(grads, *s, with_data(vs, ds));
        }
        Op::Gather(table, indices) => {
            let vt = val(*table);
            let d = vt.cols();
            let mut dt = vec![0.0; vt.len()];
            for (row, &i) in g.data().chunks(d).zip(indices) {
                for (o, x) in dt[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *o += x;
                }
            }
            accumulate(grads, *table, with_data(vt, dt));
        }
        Op::MeanRows(a) => {
            let va = val(*a);
            let (rows, cols) = (va.rows(), va.cols());
            let mut d = Vec::with_capacity(va.len());
            for _ in 0..rows {
                d.extend(g.data().iter().map(|x| x / rows as f64));
            }
            debug_assert_eq!(d.len(), rows * cols);
            accumulate(grads, *a, with_data(va, d));
        }
    }
}

fn conv_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (batch, length, c_in) = match x.shape() {
        [l, c] => (1, *l, *c),
        [b, l, c] => (*b, *l, *c),
        other => {
            return Err(contract(format!(
                "conv1d input must be rank 2 or 3, got {other:?}"
            )))
        }
    };
    let [k, wc_in, c_out] = w.shape() else {
        return Err(contract(format!(
            "conv1d kernels must be [k, c_in, c_out], got {:?}",
            w.shape()
        )));
    };
    if k % 2 == 0 {
        return Err(contract(format!(
            "conv1d_same needs an odd kernel size, got {k}"
        )));
    }
    if *wc_in != c_in {
        return Err(contract(format!(
            "conv1d channel mismatch: input {c_in}, kernels {wc_in}"
        )));
    }
    Ok((batch, length, c_in, *k, *c_out))
}

/// Forward "same" convolution; also used directly outside the tape.
pub fn conv1d_forward(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (batch, length, c_in, k, c_out) = conv_dims(x, w)?;
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; batch * length * c_out];
    let (xd, wd) = (x.data(), w.data());
    for b in 0..batch {
        for t in 0..length {
            let out_row = &mut out[(b * length + t) * c_out..(b * length + t + 1) * c_out];
            for tap in 0..k {
                let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < length) else {
                    continue;
                };
                let x_row = &xd[(b * length + src) * c_in..(b * length + src + 1) * c_in];
                let w_tap = &wd[tap * c_in * c_out..(tap + 1) * c_in * c_out];
                for (c, &xv) in x_row.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, &wv) in out_row.iter_mut().zip(&w_tap[c * c_out..(c + 1) * c_out]) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = c_out;
    Tensor::new(shape, out)
}

fn conv1d_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (batch, length, c_in, k, c_out) = conv_dims(x, w).expect("validated on forward");
    let pad = (k - 1) / 2;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    for b in 0..batch {
        for t in 0..length {
            let g_row = &gd[(b * length + t) * c_out..(b * length + t + 1) * c_out];
            for tap in 0..k {
                let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < length) else {
                    continue;
                };
                let base = (b * length + src) * c_in;
                for c in 0..c_in {
                    let widx = (tap * c_in + c) * c_out;
                    let w_row = &wd[widx..widx + c_out];
                    let mut acc = 0.0;
                    for (gv, wv) in g_row.iter().zip(w_row) {
                        acc += gv * wv;
                    }
                    dx[base + c] += acc;
                    let xv = xd[base + c];
                    if xv != 0.0 {
                        for (d, gv) in dw[widx..widx + c_out].iter_mut().zip(g_row) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }
    (with_data(x, dx), with_data(w, dw))
}
