//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in insertion order, so the order is
//! already topological and backward is a single reverse sweep. Parameters
//! enter through [`Graph::param`]; whether they receive gradients is decided
//! by the graph's [`FreezeMask`], not by the parameter itself.

use std::collections::HashMap;

use super::param::{FreezeMask, Param, ParamId};
use super::tensor::{matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Kinds accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Log,
    Exp,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Log,
    Exp,
    Square,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Unary(Unary, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Binary { kind, .. } => match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            },
            Op::Unary(kind, _) => match kind {
                Unary::Relu => "relu",
                Unary::Log => "log",
                Unary::Exp => "exp",
                Unary::Square => "square",
            },
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Pick(..) => "pick",
            Op::ConcatRows(_) => "concat_rows",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Statistics produced by a training-mode batch-norm forward.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide-by-n) variance used for normalization.
    pub var: Vec<f64>,
    pub count: usize,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    mask: FreezeMask,
    bound: HashMap<ParamId, Var>,
    bindings: Vec<(Param, Var)>,
}

impl Graph {
    pub fn new(mask: FreezeMask) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            mask,
            bound: HashMap::new(),
            bindings: Vec::new(),
        }
    }

    /// A graph in which every parameter is frozen.
    pub fn inference() -> Self {
        Self::new(FreezeMask::none())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in recording order.
    pub fn op_trace(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value.with_requires_grad(false), false)
    }

    /// Leaf that accumulates a gradient readable through [`Graph::grad`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value.with_requires_grad(true), true)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node, so a
    /// parameter used twice accumulates both contributions.
    pub fn param(&mut self, param: &Param) -> Var {
        if let Some(&v) = self.bound.get(&param.id()) {
            return v;
        }
        let trainable = self.mask.is_trainable(param);
        let value = param.value();
        let v = self.push(Op::Leaf, value.with_requires_grad(trainable), trainable);
        self.bound.insert(param.id(), v);
        if trainable {
            self.bindings.push((param.clone(), v));
        }
        v
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let out = av.matmul(bv)?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// Elementwise operation by kind. Binary kinds need `b`.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |k| {
            b.ok_or_else(|| Error::InvalidArgument(format!("{k:?} needs a second operand")))
        };
        match kind {
            Elementwise::Add => self.binary(Binary::Add, a, binary(kind)?),
            Elementwise::Sub => self.binary(Binary::Sub, a, binary(kind)?),
            Elementwise::Mul => self.binary(Binary::Mul, a, binary(kind)?),
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::Log => self.log(a),
            Elementwise::Exp => Ok(self.exp(a)),
            Elementwise::Square => Ok(self.square(a)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if av.shape().len() == 2 && bv.shape() == [av.shape()[1]] {
            true
        } else {
            let op = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            return Err(Error::shape(op, av.shape(), bv.shape()));
        };
        let cols = bv.numel();
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let values: Vec<f64> = av
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { bv.values()[i % cols] } else { bv.values()[i] };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
            out,
            rg,
        ))
    }

    fn unary_map(&mut self, kind: Unary, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.values().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.needs_grad(&[a]);
        self.push(Op::Unary(kind, a), out, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary_map(Unary::Relu, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).values().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                value: bad,
            });
        }
        Ok(self.unary_map(Unary::Log, a, f64::ln))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary_map(Unary::Exp, a, f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary_map(Unary::Square, a, |x| x * x)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let out = Tensor::new(
            av.shape().to_vec(),
            av.values().iter().map(|&x| x * factor).collect(),
        )
        .expect("same shape");
        let rg = self.needs_grad(&[a]);
        self.push(Op::Scale(a, factor), out, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).values().iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.values().iter().sum::<f64>() / av.numel() as f64;
        let rg = self.needs_grad(&[a]);
        self.push(Op::Mean(a), Tensor::scalar(m), rg)
    }

    fn check_rows_classes(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let av = self.value(a);
        if av.shape().len() != 2 || av.shape()[1] < 2 {
            return Err(Error::InvalidShape {
                shape: av.shape().to_vec(),
                reason: format!("{op} needs a batch×C matrix with C ≥ 2"),
            });
        }
        Ok((av.shape()[0], av.shape()[1]))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.check_rows_classes("softmax", a)?;
        let av = self.value(a);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            softmax_row(av.row(i), &mut out[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![n, c], out)?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Op::Softmax(a), out, rg))
    }

    /// Row-wise log-softmax, computed as `x - max - ln Σ exp(x - max)`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.check_rows_classes("log_softmax", a)?;
        let av = self.value(a);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = av.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = x - max - lse;
            }
        }
        let out = Tensor::new(vec![n, c], out)?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Op::LogSoftmax(a), out, rg))
    }

    /// Selects column `index[i]` from row `i`, giving a length-n vector.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 || av.shape()[0] != index.len() {
            return Err(Error::shape("pick", av.shape(), &[index.len()]));
        }
        let c = av.shape()[1];
        if let Some(&bad) = index.iter().find(|&&k| k >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: c,
            });
        }
        let values: Vec<f64> = index
            .iter()
            .enumerate()
            .map(|(i, &k)| av.values()[i * c + k])
            .collect();
        let out = Tensor::vector(values);
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Op::Pick(a, index.to_vec()), out, rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat_rows of nothing".into()));
        };
        let cols = self.value(first).cols();
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.cols() != cols {
                return Err(Error::shape("concat_rows", self.value(first).shape(), pv.shape()));
            }
            rows += pv.rows();
            values.extend_from_slice(pv.values());
        }
        let out = Tensor::new(vec![rows, cols], values)?;
        let rg = self.needs_grad(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, rg))
    }

    /// Batch normalization over the rows of `x`.
    ///
    /// With `running = None` the batch statistics are used (training mode)
    /// and returned; otherwise the given `(mean, var)` pair is used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::InvalidShape {
                shape: xv.shape().to_vec(),
                reason: "batch_norm needs a batch×d matrix".into(),
            });
        }
        let (n, d) = (xv.rows(), xv.cols());
        for p in [gamma, beta] {
            if self.value(p).shape() != [d] {
                return Err(Error::shape("batch_norm", xv.shape(), self.value(p).shape()));
            }
        }
        let (mean, var, stats) = match running {
            Some((m, v)) => {
                if m.len() != d || v.len() != d {
                    return Err(Error::shape("batch_norm", &[d], &[m.len()]));
                }
                (m.to_vec(), v.to_vec(), None)
            }
            None => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batch norm in training mode needs at least 2 rows, got {n}"
                    )));
                }
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    for (m, &v) in mean.iter_mut().zip(xv.row(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for i in 0..n {
                    for ((s, &v), &m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: n,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).values(), self.value(beta).values());
        let mut x_hat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let h = (xv.values()[i * d + j] - mean[j]) * inv_std[j];
                x_hat[i * d + j] = h;
                out[i * d + j] = gv[j] * h + bv[j];
            }
        }
        let out = Tensor::new(vec![n, d], out)?;
        let rg = self.needs_grad(&[x, gamma, beta]);
        let v = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats: stats.is_some(),
            },
            out,
            rg,
        );
        Ok((v, stats))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients of every node are kept for [`Graph::grad`]; trainable
    /// parameters additionally get theirs accumulated into their own buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (param, v) in &self.bindings {
            if let Some(g) = &grads[v.0] {
                param.get_mut().accumulate_grad(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_a_bt(g, bv.values(), &mut da, m, k, n);
                    acc(*a, da);
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_b(av.values(), g, &mut db, m, k, n);
                    acc(*b, db);
                }
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                let cols = bv.len();
                let b_at = |idx: usize| if *broadcast { bv[idx % cols] } else { bv[idx] };
                if wants(*a) {
                    let da: Vec<f64> = match kind {
                        Binary::Add | Binary::Sub => g.to_vec(),
                        Binary::Mul => g.iter().enumerate().map(|(j, &gj)| gj * b_at(j)).collect(),
                    };
                    acc(*a, da);
                }
                if wants(*b) {
                    let local = |j: usize, gj: f64| match kind {
                        Binary::Add => gj,
                        Binary::Sub => -gj,
                        Binary::Mul => gj * av[j],
                    };
                    let mut db = vec![0.0; cols];
                    if *broadcast {
                        for (j, &gj) in g.iter().enumerate() {
                            db[j % cols] += local(j, gj);
                        }
                    } else {
                        for (j, &gj) in g.iter().enumerate() {
                            db[j] = local(j, gj);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Unary(kind, a) => {
                if wants(*a) {
                    let x = self.value(*a).values();
                    let y = node.value.values();
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| match kind {
                            Unary::Relu => {
                                if x[j] > 0.0 {
                                    gj
                                } else {
                                    0.0
                                }
                            }
                            Unary::Log => gj / x[j],
                            Unary::Exp => gj * y[j],
                            Unary::Square => 2.0 * x[j] * gj,
                        })
                        .collect();
                    acc(*a, da);
                }
            }
            Op::Scale(a, factor) => {
                if wants(*a) {
                    acc(*a, g.iter().map(|&gj| gj * factor).collect());
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    acc(*a, vec![g[0]; self.value(*a).numel()]);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let n = self.value(*a).numel();
                    acc(*a, vec![g[0] / n as f64; n]);
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for k in 0..c {
                            da[r * c + k] = yr[k] * (gr[k] - dot);
                        }
                    }
                    acc(*a, da);
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let gr = &g[r * c..(r + 1) * c];
                        let gsum: f64 = gr.iter().sum();
                        for k in 0..c {
                            da[r * c + k] = gr[k] - y.row(r)[k].exp() * gsum;
                        }
                    }
                    acc(*a, da);
                }
            }
            Op::Pick(a, index) => {
                if wants(*a) {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut da = vec![0.0; av.numel()];
                    for (r, &k) in index.iter().enumerate() {
                        da[r * c + k] = g[r];
                    }
                    acc(*a, da);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if wants(p) {
                        acc(p, g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            } => {
                let d = inv_std.len();
                let n = x_hat.len() / d;
                let gv = self.value(*gamma).values();
                if wants(*beta) {
                    let mut db = vec![0.0; d];
                    for (j, &gj) in g.iter().enumerate() {
                        db[j % d] += gj;
                    }
                    acc(*beta, db);
                }
                if wants(*gamma) {
                    let mut dg = vec![0.0; d];
                    for (j, &gj) in g.iter().enumerate() {
                        dg[j % d] += gj * x_hat[j];
                    }
                    acc(*gamma, dg);
                }
                if wants(*x) {
                    let mut dx = vec![0.0; n * d];
                    if *batch_stats {
                        let mut sum_dh = vec![0.0; d];
                        let mut sum_dh_h = vec![0.0; d];
                        for (j, &gj) in g.iter().enumerate() {
                            let dh = gj * gv[j % d];
                            sum_dh[j % d] += dh;
                            sum_dh_h[j % d] += dh * x_hat[j];
                        }
                        let nf = n as f64;
                        for (j, &gj) in g.iter().enumerate() {
                            let c = j % d;
                            let dh = gj * gv[c];
                            dx[j] = inv_std[c] / nf * (nf * dh - sum_dh[c] - x_hat[j] * sum_dh_h[c]);
                        }
                    } else {
                        for (j, &gj) in g.iter().enumerate() {
                            dx[j] = gj * gv[j % d] * inv_std[j % d];
                        }
                    }
                    acc(*x, dx);
                }
            }
        }
    }
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
