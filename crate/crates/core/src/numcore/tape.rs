//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation executed through a [`Var`] handle. Nodes
//! are appended in execution order, so node order is already a topological
//! order and [`Tape::backward`] walks it once in reverse.
//!
//! Binary elementwise ops broadcast only in one direction: the right operand's
//! shape must equal a trailing suffix of the left operand's shape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Softmax { src: usize, axis: usize },
    LogSoftmax(usize),
    LayerNorm {
        src: usize,
        gamma: usize,
        beta: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { src: usize, start: usize },
    GatherRows { src: usize, rows: Vec<usize> },
    Pick { src: usize, cols: Vec<usize> },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    leaf_grads: RefCell<HashMap<usize, Vec<f64>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Records a value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value.detached(), Op::Leaf, false)
    }

    /// Records a free input. It receives gradient when `value.requires_grad()`;
    /// read it back with [`Tape::grad`] after [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let rg = value.requires_grad();
        self.push(value.detached(), Op::Leaf, rg)
    }

    /// Records a stored parameter. Each parameter is copied onto the tape once.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let v = self.push(store.get(id).detached(), Op::Param(id), true);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let rows = first.rows();
        if values.iter().any(|v| v.rank() != 2 || v.rows() != rows) {
            return Err(Error::shape("concat_cols needs 2-D inputs with equal rows"));
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(ids), rg))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let cols = first.cols();
        if values.iter().any(|v| v.rank() != 2 || v.cols() != cols) {
            return Err(Error::shape("concat_rows needs 2-D inputs with equal cols"));
        }
        let rows: usize = values.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &values {
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(ids), rg))
    }

    /// Gradient accumulated into a [`Tape::leaf`] input, if any.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.leaf_grads.borrow();
        let g = grads.get(&var.id)?;
        Tensor::new(self.value(var.id).shape().to_vec(), g.clone()).ok()
    }

    /// Propagates d(loss)/d(node) back through the tape. Parameter gradients
    /// accumulate into `store`; leaf gradients accumulate on the tape. Calling
    /// it twice without resetting accumulates twice.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        self.propagate(loss, Some(store))
    }

    /// Like [`Tape::backward`] but only leaf inputs collect gradient;
    /// parameter gradients are dropped.
    pub fn backward_inputs(&self, loss: Var<'_>) -> Result<()> {
        self.propagate(loss, None)
    }

    fn propagate(&self, loss: Var<'_>, mut store: Option<&mut ParamStore>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            let mut acc = |target: usize, f: &mut dyn FnMut(&mut [f64])| {
                if nodes[target].requires_grad {
                    let len = nodes[target].value.len();
                    let buf = grads[target].get_or_insert_with(|| vec![0.0; len]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {
                    let mut lg = self.leaf_grads.borrow_mut();
                    let buf = lg.entry(id).or_insert_with(|| vec![0.0; g.len()]);
                    add_into(buf, &g);
                }
                Op::Param(pid) => {
                    if let Some(store) = store.as_deref_mut() {
                        store.accumulate_grad(*pid, &g);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |buf| add_into(buf, &g));
                    acc(*b, &mut |buf| reduce_into(buf, &g, 1.0));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |buf| add_into(buf, &g));
                    acc(*b, &mut |buf| reduce_into(buf, &g, -1.0));
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let lb = bv.len();
                    acc(*a, &mut |buf| {
                        for (i, x) in buf.iter_mut().enumerate() {
                            *x += g[i] * bv.data()[i % lb];
                        }
                    });
                    acc(*b, &mut |buf| {
                        for (i, (gi, ai)) in g.iter().zip(av.data()).enumerate() {
                            buf[i % lb] += gi * ai;
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |buf| {
                    for (x, gi) in buf.iter_mut().zip(&g) {
                        *x += c * gi;
                    }
                }),
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    acc(*a, &mut |buf| {
                        // g[m×n] · bᵀ
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let br = &bv.data()[p * n..(p + 1) * n];
                                buf[i * k + p] += dot(gr, br);
                            }
                        }
                    });
                    acc(*b, &mut |buf| {
                        // aᵀ · g[m×n]
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a_ip = av.data()[i * k + p];
                                if a_ip != 0.0 {
                                    axpy(&mut buf[p * n..(p + 1) * n], a_ip, gr);
                                }
                            }
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = (out.rows(), out.cols());
                    acc(*a, &mut |buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[j * r + i] += g[i * c + j];
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let av = &nodes[*a].value;
                    acc(*a, &mut |buf| {
                        for ((x, gi), ai) in buf.iter_mut().zip(&g).zip(av.data()) {
                            if *ai > 0.0 {
                                *x += gi;
                            }
                        }
                    });
                }
                Op::Softmax { src, axis } => {
                    let (outer, n, inner) = axis_split(out.shape(), *axis);
                    let y = out.data();
                    acc(*src, &mut |buf| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |j: usize| (o * n + j) * inner + i;
                                let s: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                                for j in 0..n {
                                    buf[idx(j)] += y[idx(j)] * (g[idx(j)] - s);
                                }
                            }
                        }
                    });
                }
                Op::LogSoftmax(src) => {
                    let n = out.cols();
                    let y = out.data();
                    acc(*src, &mut |buf| {
                        for r in 0..y.len() / n {
                            let gr = &g[r * n..(r + 1) * n];
                            let s: f64 = gr.iter().sum();
                            for j in 0..n {
                                buf[r * n + j] += gr[j] - y[r * n + j].exp() * s;
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    src,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let d = out.cols();
                    let rows = out.len() / d;
                    let gv = &nodes[*gamma].value;
                    acc(*beta, &mut |buf| {
                        for r in 0..rows {
                            add_into(buf, &g[r * d..(r + 1) * d]);
                        }
                    });
                    acc(*gamma, &mut |buf| {
                        for (i, gi) in g.iter().enumerate() {
                            buf[i % d] += gi * normalized[i];
                        }
                    });
                    acc(*src, &mut |buf| {
                        let mut dxhat = vec![0.0; d];
                        for r in 0..rows {
                            let xh = &normalized[r * d..(r + 1) * d];
                            for j in 0..d {
                                dxhat[j] = g[r * d + j] * gv.data()[j];
                            }
                            let s1: f64 = dxhat.iter().sum();
                            let s2 = dot(&dxhat, xh);
                            let scale = inv_std[r] / d as f64;
                            for j in 0..d {
                                buf[r * d + j] +=
                                    scale * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = out.cols();
                    let rows = out.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let c = nodes[p].value.cols();
                        acc(p, &mut |buf| {
                            for r in 0..rows {
                                add_into(
                                    &mut buf[r * c..(r + 1) * c],
                                    &g[r * total + offset..r * total + offset + c],
                                );
                            }
                        });
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        acc(p, &mut |buf| add_into(buf, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::SliceCols { src, start } => {
                    let width = out.cols();
                    let src_cols = nodes[*src].value.cols();
                    acc(*src, &mut |buf| {
                        for r in 0..out.rows() {
                            let dst = &mut buf[r * src_cols + start..r * src_cols + start + width];
                            add_into(dst, &g[r * width..(r + 1) * width]);
                        }
                    });
                }
                Op::GatherRows { src, rows } => {
                    let c = out.cols();
                    acc(*src, &mut |buf| {
                        for (i, &r) in rows.iter().enumerate() {
                            add_into(&mut buf[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                        }
                    });
                }
                Op::Pick { src, cols } => {
                    let c = nodes[*src].value.cols();
                    acc(*src, &mut |buf| {
                        for (r, &col) in cols.iter().enumerate() {
                            buf[r * c + col] += g[r];
                        }
                    });
                }
                Op::Sum(a) => acc(*a, &mut |buf| buf.iter_mut().for_each(|x| *x += g[0])),
                Op::Mean(a) => acc(*a, &mut |buf| {
                    let s = g[0] / buf.len() as f64;
                    buf.iter_mut().for_each(|x| *x += s)
                }),
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.needs_grad(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.needs_grad(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn broadcast(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(format!(
                "cannot broadcast {sb:?} onto {sa:?} (trailing-suffix rule)"
            )));
        }
        let lb = b.len();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % lb]))
            .collect();
        Tensor::new(sa.to_vec(), data)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.broadcast(other, |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.broadcast(other, |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.broadcast(other, |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|x| x * c).collect();
        let v = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a_ip = a.data()[i * k + p];
                if a_ip != 0.0 {
                    axpy(row, a_ip, &b.data()[p * n..(p + 1) * n]);
                }
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::shape("transpose needs a 2-D tensor"));
        }
        let (r, c) = (a.rows(), a.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        let v = Tensor::new(vec![c, r], data)?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn relu(self) -> Var<'t> {
        let a = self.value();
        let data = a.data().iter().map(|&x| x.max(0.0)).collect();
        let v = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(v, Op::Relu(self.id))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::shape(format!(
                "softmax axis {axis} on rank-{} tensor",
                a.rank()
            )));
        }
        let (outer, n, inner) = axis_split(a.shape(), axis);
        let x = a.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let m = (0..n).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..n {
                    let e = (x[idx(j)] - m).exp();
                    y[idx(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    y[idx(j)] /= s;
                }
            }
        }
        let v = Tensor::new(a.shape().to_vec(), y)?;
        Ok(self.unary(v, Op::Softmax { src: self.id, axis }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(self) -> Var<'t> {
        let a = self.value();
        let n = a.cols();
        let mut y = a.data().to_vec();
        for row in y.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let v = Tensor::new(a.shape().to_vec(), y).expect("same shape");
        self.unary(v, Op::LogSoftmax(self.id))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let d = x.cols();
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm over {d} features with gamma {:?}, beta {:?}",
                gv.shape(),
                bv.shape()
            )));
        }
        let rows = x.len() / d;
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (xr[j] - mean) * is;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * gv.data()[j] + bv.data()[j];
            }
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.tape.needs_grad(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            v,
            Op::LayerNorm {
                src: self.id,
                gamma: gamma.id,
                beta: beta.id,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 || width == 0 || start + width > a.cols() {
            return Err(Error::shape(format!(
                "slice_cols [{start}, {}) of {:?}",
                start + width,
                a.shape()
            )));
        }
        let c = a.cols();
        let mut data = Vec::with_capacity(a.rows() * width);
        for r in 0..a.rows() {
            data.extend_from_slice(&a.data()[r * c + start..r * c + start + width]);
        }
        let v = Tensor::new(vec![a.rows(), width], data)?;
        Ok(self.unary(v, Op::SliceCols { src: self.id, start }))
    }

    pub fn gather_rows(self, rows: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 || rows.is_empty() || rows.iter().any(|&r| r >= a.rows()) {
            return Err(Error::shape(format!(
                "gather_rows {rows:?} from {:?}",
                a.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * a.cols());
        for &r in rows {
            data.extend_from_slice(a.row(r));
        }
        let v = Tensor::new(vec![rows.len(), a.cols()], data)?;
        Ok(self.unary(
            v,
            Op::GatherRows {
                src: self.id,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Selects `self[r, cols[r]]` for every row, giving a vector.
    pub fn pick(self, cols: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 2 || cols.len() != a.rows() || cols.iter().any(|&c| c >= a.cols()) {
            return Err(Error::shape(format!("pick {cols:?} from {:?}", a.shape())));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| a.at(r, c)).collect();
        let v = Tensor::new(vec![cols.len()], data)?;
        Ok(self.unary(
            v,
            Op::Pick {
                src: self.id,
                cols: cols.to_vec(),
            },
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let s = a.data().iter().sum::<f64>() / a.len() as f64;
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Same value, cut from gradient flow.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.value().detached())
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums a broadcast gradient back onto the smaller operand.
fn reduce_into(dst: &mut [f64], g: &[f64], sign: f64) {
    let n = dst.len();
    for (i, gi) in g.iter().enumerate() {
        dst[i % n] += sign * gi;
    }
}
