//! Define-by-run tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every operation as a node
//! whose inputs precede it, so node order is already a topological order.
//! [`Graph::backward`] sweeps the nodes once in reverse and can run only once
//! per tape.

use std::collections::HashMap;

use rand::Rng;

use super::precise::{self, Dd};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis an operation runs along. `Rows` walks down axis 0 (one result per
/// column); `Cols` walks along axis 1 (one result per row).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
pub enum OpKind {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var, Axis),
    LogSumExp(Var, Axis),
    Mean(Var, Axis),
    Sum(Var),
    Concat(Vec<Var>, Axis),
    Slice { src: Var, axis: Axis, start: usize },
    Lookup { table: Var, ids: Vec<usize> },
    MaxOverTime { src: Var, argmax: Vec<usize> },
    Dropout { src: Var, mask: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    Pick { src: Var, indices: Vec<usize> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Param(_) => "param",
            OpKind::MatMul(..) => "matmul",
            OpKind::Add(..) => "add",
            OpKind::Mul(..) => "mul",
            OpKind::Scale(..) => "scale",
            OpKind::Sigmoid(_) => "sigmoid",
            OpKind::Tanh(_) => "tanh",
            OpKind::Softmax(..) => "softmax",
            OpKind::LogSumExp(..) => "logsumexp",
            OpKind::Mean(..) => "mean",
            OpKind::Sum(_) => "sum",
            OpKind::Concat(..) => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Lookup { .. } => "lookup",
            OpKind::MaxOverTime { .. } => "max_over_time",
            OpKind::Dropout { .. } => "dropout",
            OpKind::Transpose(_) => "transpose",
            OpKind::Reshape(_) => "reshape",
            OpKind::Pick { .. } => "pick",
        }
    }
}

struct Node {
    op: OpKind,
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
    // Double-double value, kept only on precise tapes.
    wide: Option<Vec<Dd>>,
}

/// Gradients of the trainable parameters of a store, indexed like the store.
/// Frozen parameters have no entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    names: Vec<String>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            names: store.names().map(str::to_owned).collect(),
            grads: store
                .iter()
                .map(|p| p.trainable.then(|| Tensor::zeros(p.tensor.rows(), p.tensor.cols())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        self.grads[i].as_ref()
    }

    pub fn by_id(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.index()].as_ref()
    }

    pub fn by_id_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.grads[id.index()].as_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.grads)
            .filter_map(|(n, g)| g.as_ref().map(|g| (n.as_str(), g)))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.grads.iter_mut().flatten()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::sum_of_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.tensors_mut() {
            g.scale_in_place(factor);
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.add_assign(b);
            }
        }
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    adjoints: Vec<Option<Tensor>>,
    backward_done: bool,
    precise: bool,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, _) => Some(b),
        (_, 1) => Some(a),
        _ => None,
    }
}

fn broadcast_binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let rows = broadcast_dim(a.rows(), b.rows()).ok_or_else(|| dim_err(op, a, b))?;
    let cols = broadcast_dim(a.cols(), b.cols()).ok_or_else(|| dim_err(op, a, b))?;
    if a.rows() == b.rows() && a.cols() == b.cols() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(vec![rows, cols], data);
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let (ia, ib) = (if a.rows() == 1 { 0 } else { i }, if b.rows() == 1 { 0 } else { i });
        for j in 0..cols {
            let (ja, jb) = (if a.cols() == 1 { 0 } else { j }, if b.cols() == 1 { 0 } else { j });
            data.push(f(a.get(ia, ja), b.get(ib, jb)));
        }
    }
    Tensor::new(vec![rows, cols], data)
}

/// Sums `grad` down to `shape`, undoing a broadcast.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..grad.rows() {
        let oi = if shape[0] == 1 { 0 } else { i };
        for j in 0..grad.cols() {
            let oj = if shape[1] == 1 { 0 } else { j };
            let v = out.get(oi, oj) + grad.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

/// Broadcast `small` (a keep-dims reduction along `axis`) back over `shape`.
fn expand_along(small: &Tensor, axis: Axis) -> impl Fn(usize, usize) -> f64 + '_ {
    move |i, j| match axis {
        Axis::Rows => small.get(0, j),
        Axis::Cols => small.get(i, 0),
    }
}

pub(super) fn lines(rows: usize, cols: usize, axis: Axis) -> Vec<Vec<usize>> {
    match axis {
        Axis::Cols => (0..rows).map(|i| (0..cols).map(|j| i * cols + j).collect()).collect(),
        Axis::Rows => (0..cols).map(|j| (0..rows).map(|i| i * cols + j).collect()).collect(),
    }
}

fn reduced_shape(t: &Tensor, axis: Axis) -> (usize, usize) {
    match axis {
        Axis::Rows => (1, t.cols()),
        Axis::Cols => (t.rows(), 1),
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

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            adjoints: Vec::new(),
            backward_done: false,
            precise: false,
        }
    }

    /// A tape that also evaluates every node in double-double arithmetic,
    /// readable through [`Graph::precise_value`].
    pub fn precise(store: &'s ParamStore) -> Self {
        Self {
            precise: true,
            ..Self::new(store)
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, v: Var) -> &OpKind {
        &self.nodes[v.0].op
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, OpKind::Param(id)) => &self.store.by_id(*id).tensor,
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Double-double value of a node; `None` unless the tape is precise.
    pub fn precise_value(&self, v: Var) -> Option<&[Dd]> {
        self.nodes[v.0].wide.as_deref()
    }

    fn widen(t: &Tensor) -> Vec<Dd> {
        t.data().iter().map(|&x| Dd::from(x)).collect()
    }

    /// Adjoint of a node after [`Graph::backward`]; `None` when the node does
    /// not depend on any trainable parameter or was not reached.
    pub fn adjoint(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: OpKind, value: Tensor, requires_grad: bool) -> Var {
        let wide = self.precise.then(|| match op {
            OpKind::Input => Self::widen(&value),
            _ => precise::forward(&op, value.rows(), value.cols(), |v| {
                let t = self.value(v);
                (
                    self.nodes[v.0].wide.as_deref().expect("precise tape"),
                    t.rows(),
                    t.cols(),
                )
            }),
        });
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
            wide,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(OpKind::Input, t, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(Tensor::zeros(rows, cols))
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))?;
        Ok(self.param_by_id(id))
    }

    pub fn param_by_id(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let param = self.store.by_id(id);
        self.nodes.push(Node {
            op: OpKind::Param(id),
            value: None,
            requires_grad: param.trainable,
            wide: self.precise.then(|| Self::widen(&param.tensor)),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(OpKind::MatMul(a, b), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(OpKind::Add(a, b), out, rg))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(OpKind::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(OpKind::Scale(a, factor), out, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Left-to-right sum of several same-shaped (or broadcastable) terms.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::contract("add_all of no terms"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(OpKind::Sigmoid(a), out, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(OpKind::Tanh(a), out, rg)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for line in lines(x.rows(), x.cols(), axis) {
            let m = line.iter().map(|&i| x.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in &line {
                let e = (x.data()[i] - m).exp();
                out.data_mut()[i] = e;
                z += e;
            }
            for &i in &line {
                out.data_mut()[i] /= z;
            }
        }
        let rg = self.rg(a);
        self.push(OpKind::Softmax(a, axis), out, rg)
    }

    /// Max-shifted log-sum-exp along `axis`, keeping the reduced dimension.
    pub fn logsumexp(&mut self, a: Var, axis: Axis) -> Var {
        let x = self.value(a);
        let (r, c) = reduced_shape(x, axis);
        let data = lines(x.rows(), x.cols(), axis)
            .into_iter()
            .map(|line| {
                let vals: Vec<f64> = line.iter().map(|&i| x.data()[i]).collect();
                log_sum_exp(&vals)
            })
            .collect();
        let out = Tensor::new(vec![r, c], data).expect("reduced shape");
        let rg = self.rg(a);
        self.push(OpKind::LogSumExp(a, axis), out, rg)
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Var {
        let x = self.value(a);
        let (r, c) = reduced_shape(x, axis);
        let data = lines(x.rows(), x.cols(), axis)
            .into_iter()
            .map(|line| line.iter().map(|&i| x.data()[i]).sum::<f64>() / line.len() as f64)
            .collect();
        let out = Tensor::new(vec![r, c], data).expect("reduced shape");
        let rg = self.rg(a);
        self.push(OpKind::Mean(a, axis), out, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(OpKind::Sum(a), out, rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of no tensors"))?;
        let f = self.value(first);
        let (mut rows, mut cols) = (f.rows(), f.cols());
        for &p in &parts[1..] {
            let t = self.value(p);
            match axis {
                Axis::Rows if t.cols() == cols => rows += t.rows(),
                Axis::Cols if t.rows() == rows => cols += t.cols(),
                _ => return Err(dim_err("concat", self.value(first), t)),
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        match axis {
            Axis::Rows => {
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
            }
            Axis::Cols => {
                for i in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(OpKind::Concat(parts.to_vec(), axis), out, rg))
    }

    /// `len` consecutive rows (`Axis::Rows`) or columns (`Axis::Cols`) from `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let extent = match axis {
            Axis::Rows => x.rows(),
            Axis::Cols => x.cols(),
        };
        if len == 0 || start + len > extent {
            return Err(Error::Dimension {
                op: "slice",
                lhs: x.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = match axis {
            Axis::Rows => Tensor::new(
                vec![len, x.cols()],
                x.data()[start * x.cols()..(start + len) * x.cols()].to_vec(),
            )?,
            Axis::Cols => {
                let mut data = Vec::with_capacity(x.rows() * len);
                for i in 0..x.rows() {
                    data.extend_from_slice(&x.row_slice(i)[start..start + len]);
                }
                Tensor::new(vec![x.rows(), len], data)?
            }
        };
        let rg = self.rg(a);
        Ok(self.push(OpKind::Slice { src: a, axis, start }, out, rg))
    }

    /// Gathers rows of `table` by id.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::contract("lookup with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Dimension {
                op: "lookup",
                lhs: t.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![ids.len(), t.cols()], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            OpKind::Lookup {
                table,
                ids: ids.to_vec(),
            },
            out,
            rg,
        ))
    }

    /// Column-wise maximum over rows; ties go to the earliest row.
    pub fn max_over_time(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut argmax = vec![0; x.cols()];
        let mut data = vec![f64::NEG_INFINITY; x.cols()];
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                if x.get(i, j) > data[j] {
                    data[j] = x.get(i, j);
                    argmax[j] = i;
                }
            }
        }
        let out = Tensor::row(data);
        let rg = self.rg(a);
        self.push(OpKind::MaxOverTime { src: a, argmax }, out, rg)
    }

    /// Inverted dropout with rate `p`: kept entries are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout rate {p} outside [0, 1)")));
        }
        let keep = 1.0 - p;
        let mask = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.dropout_with_mask(a, mask)
    }

    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::Dimension {
                op: "dropout",
                lhs: x.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(OpKind::Dropout { src: a, mask }, out, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(OpKind::Transpose(a), out, rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if rows * cols != x.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: vec![rows, cols],
            });
        }
        let out = Tensor::new(vec![rows, cols], x.data().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(OpKind::Reshape(a), out, rg))
    }

    /// Gathers entries by flat row-major index into a `[1, k]` row.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if indices.is_empty() {
            return Err(Error::contract("pick with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::Dimension {
                op: "pick",
                lhs: x.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let out = Tensor::row(indices.iter().map(|&i| x.data()[i]).collect());
        let rg = self.rg(a);
        Ok(self.push(
            OpKind::Pick {
                src: a,
                indices: indices.to_vec(),
            },
            out,
            rg,
        ))
    }

    /// Reverse sweep from a scalar node. A tape supports one sweep only.
    pub fn backward(&mut self, seed: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::contract("backward already ran on this tape"));
        }
        if self.value(seed).shape() != [1, 1] {
            return Err(Error::contract(format!(
                "backward seed must be scalar, got shape {:?}",
                self.value(seed).shape()
            )));
        }
        self.backward_done = true;
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[seed.0] = Some(Tensor::scalar(1.0));
        for i in (0..=seed.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(Var(i), &g, &mut adj);
            adj[i] = Some(g);
        }

        let mut grads = Gradients::zeros_like(self.store);
        for (&id, &v) in &self.param_vars {
            if let (Some(dst), Some(src)) = (grads.by_id_mut(id), adj[v.0].as_ref()) {
                dst.add_assign(src);
            }
        }
        self.adjoints = adj;
        Ok(grads)
    }

    fn propagate(&self, v: Var, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[v.0];
        let y = self.value(v);
        let mut send = |target: Var, grad: Tensor| {
            if !self.nodes[target.0].requires_grad {
                return;
            }
            match &mut adj[target.0] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        };
        match &node.op {
            OpKind::Input | OpKind::Param(_) => {}
            OpKind::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, g.matmul(&bv.transpose()).expect("matmul adjoint"));
                }
                if self.rg(*b) {
                    send(*b, av.transpose().matmul(g).expect("matmul adjoint"));
                }
            }
            OpKind::Add(a, b) => {
                send(*a, reduce_to(g, self.shape(*a)));
                send(*b, reduce_to(g, self.shape(*b)));
            }
            OpKind::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let full = broadcast_binary("mul", g, bv, |x, y| x * y).expect("mul adjoint");
                    send(*a, reduce_to(&full, av.shape()));
                }
                if self.rg(*b) {
                    let full = broadcast_binary("mul", g, av, |x, y| x * y).expect("mul adjoint");
                    send(*b, reduce_to(&full, bv.shape()));
                }
            }
            OpKind::Scale(a, s) => send(*a, g.map(|x| x * s)),
            OpKind::Sigmoid(a) => {
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                send(*a, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            OpKind::Tanh(a) => {
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                send(*a, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            OpKind::Softmax(a, axis) => {
                let mut d = Tensor::zeros(y.rows(), y.cols());
                for line in lines(y.rows(), y.cols(), *axis) {
                    let dot: f64 = line.iter().map(|&i| g.data()[i] * y.data()[i]).sum();
                    for &i in &line {
                        d.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
                    }
                }
                send(*a, d);
            }
            OpKind::LogSumExp(a, axis) => {
                let x = self.value(*a);
                let gy = expand_along(g, *axis);
                let ly = expand_along(y, *axis);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.cols() {
                        d.set(i, j, gy(i, j) * (x.get(i, j) - ly(i, j)).exp());
                    }
                }
                send(*a, d);
            }
            OpKind::Mean(a, axis) => {
                let x = self.value(*a);
                let n = match axis {
                    Axis::Rows => x.rows(),
                    Axis::Cols => x.cols(),
                } as f64;
                let gy = expand_along(g, *axis);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    for j in 0..x.cols() {
                        d.set(i, j, gy(i, j) / n);
                    }
                }
                send(*a, d);
            }
            OpKind::Sum(a) => {
                let x = self.value(*a);
                send(*a, Tensor::filled(x.rows(), x.cols(), g.item()));
            }
            OpKind::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let (r, c) = (pv.rows(), pv.cols());
                    if self.rg(p) {
                        let mut d = Tensor::zeros(r, c);
                        for i in 0..r {
                            for j in 0..c {
                                let val = match axis {
                                    Axis::Rows => g.get(offset + i, j),
                                    Axis::Cols => g.get(i, offset + j),
                                };
                                d.set(i, j, val);
                            }
                        }
                        send(p, d);
                    }
                    offset += match axis {
                        Axis::Rows => r,
                        Axis::Cols => c,
                    };
                }
            }
            OpKind::Slice { src, axis, start } => {
                let x = self.value(*src);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        match axis {
                            Axis::Rows => d.set(start + i, j, g.get(i, j)),
                            Axis::Cols => d.set(i, start + j, g.get(i, j)),
                        }
                    }
                }
                send(*src, d);
            }
            OpKind::Lookup { table, ids } => {
                if self.rg(*table) {
                    let t = self.value(*table);
                    let mut d = Tensor::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..t.cols() {
                            let v = d.get(id, j) + g.get(r, j);
                            d.set(id, j, v);
                        }
                    }
                    send(*table, d);
                }
            }
            OpKind::MaxOverTime { src, argmax } => {
                let x = self.value(*src);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for (j, &i) in argmax.iter().enumerate() {
                    d.set(i, j, g.get(0, j));
                }
                send(*src, d);
            }
            OpKind::Dropout { src, mask } => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                send(*src, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            OpKind::Transpose(a) => send(*a, g.transpose()),
            OpKind::Reshape(a) => {
                let x = self.value(*a);
                send(*a, Tensor::new(x.shape().to_vec(), g.data().to_vec()).unwrap());
            }
            OpKind::Pick { src, indices } => {
                let x = self.value(*src);
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for (k, &i) in indices.iter().enumerate() {
                    d.data_mut()[i] += g.data()[k];
                }
                send(*src, d);
            }
        }
    }
}

/// Max-shifted log-sum-exp of a slice. `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
