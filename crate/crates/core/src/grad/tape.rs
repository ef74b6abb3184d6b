//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value. `backward`
//! walks the nodes in exact reverse order and accumulates vector-Jacobian
//! products into the inputs. Nodes that cannot reach a parameter are skipped.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grad::sparse::SparseMatrix;
use crate::grad::tensor::{self, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SegmentMean(Var, Arc<Vec<Vec<usize>>>),
    Mse(Var, Arc<Tensor>),
    EpsInsensitive(Var, Arc<Tensor>, f64),
    Hinge { pos: Var, neg: Var, margin: f64 },
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(r, c))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Turns the non-finite output check on or off (on by default in debug builds).
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::Divergence(format!("non-finite output from {op:?}")));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn spmm(&mut self, adj: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = adj.spmm(self.value(x))?;
        let ng = self.needs(x);
        self.push(out, Op::SpMM(Arc::clone(adj), x), ng)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = tensor::add_bias(self.value(x), self.value(b))?;
        let ng = self.needs(x) || self.needs(b);
        self.push(out, Op::AddBias(x, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= k);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = tensor::relu(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::concat_cols(&values)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row-group means; with singleton groups this is a row gather.
    pub fn segment_mean(&mut self, x: Var, groups: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let out = tensor::segment_mean(self.value(x), &groups)?;
        let ng = self.needs(x);
        self.push(out, Op::SegmentMean(x, groups), ng)
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, target: Arc<Tensor>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                left: p.shape(),
                right: target.shape(),
            });
        }
        let n = p.data().len().max(1) as f64;
        let loss = p.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let ng = self.needs(pred);
        self.push(Tensor::scalar(loss), Op::Mse(pred, target), ng)
    }

    /// Mean of `max(0, |pred - target| - eps)`.
    pub fn eps_insensitive(&mut self, pred: Var, target: Arc<Tensor>, eps: f64) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "eps_insensitive",
                left: p.shape(),
                right: target.shape(),
            });
        }
        let n = p.data().len().max(1) as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| ((a - b).abs() - eps).max(0.0))
            .sum::<f64>()
            / n;
        let ng = self.needs(pred);
        self.push(Tensor::scalar(loss), Op::EpsInsensitive(pred, target, eps), ng)
    }

    /// Sum of `max(0, margin + neg - pos)` over paired entries.
    pub fn hinge(&mut self, pos: Var, neg: Var, margin: f64) -> Result<Var> {
        let (p, q) = (self.value(pos), self.value(neg));
        if p.shape() != q.shape() {
            return Err(Error::ShapeMismatch {
                op: "hinge",
                left: p.shape(),
                right: q.shape(),
            });
        }
        let loss = p
            .data()
            .iter()
            .zip(q.data())
            .map(|(sp, sn)| (margin + sn - sp).max(0.0))
            .sum::<f64>();
        let ng = self.needs(pos) || self.needs(neg);
        self.push(Tensor::scalar(loss), Op::Hinge { pos, neg, margin }, ng)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum::<f64>();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumSquares(x), ng)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = tensor::matmul_nt(g, self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let gb = tensor::matmul_tn(self.value(*a), g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SpMM(adj, x) => {
                let gx = adj.spmm_t(g)?;
                self.accumulate(grads, *x, gx);
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(x, k) => {
                let mut gx = g.clone();
                gx.data_mut().iter_mut().for_each(|v| *v *= k);
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, &ov) in gx.data_mut().iter_mut().zip(out.data()) {
                    if ov <= 0.0 {
                        *gv = 0.0;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    off += cols;
                }
            }
            Op::SegmentMean(x, groups) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / members.len() as f64;
                    for &m in members {
                        for (acc, &v) in gx.row_mut(m).iter_mut().zip(g.row(gi)) {
                            *acc += v * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Mse(pred, target) => {
                let p = self.value(*pred);
                let n = p.data().len().max(1) as f64;
                let scale = 2.0 * g.item() / n;
                let data = p.data().iter().zip(target.data()).map(|(a, b)| scale * (a - b)).collect();
                let gp = Tensor::from_vec(p.rows(), p.cols(), data)?;
                self.accumulate(grads, *pred, gp);
            }
            Op::EpsInsensitive(pred, target, eps) => {
                let p = self.value(*pred);
                let n = p.data().len().max(1) as f64;
                let scale = g.item() / n;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| {
                        let r = a - b;
                        if r.abs() > *eps {
                            scale * r.signum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let gp = Tensor::from_vec(p.rows(), p.cols(), data)?;
                self.accumulate(grads, *pred, gp);
            }
            Op::Hinge { pos, neg, margin } => {
                let (p, q) = (self.value(*pos), self.value(*neg));
                let gv = g.item();
                let active: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(q.data())
                    .map(|(sp, sn)| if margin + sn - sp > 0.0 { gv } else { 0.0 })
                    .collect();
                if self.needs(*neg) {
                    let gn = Tensor::from_vec(q.rows(), q.cols(), active.clone())?;
                    self.accumulate(grads, *neg, gn);
                }
                if self.needs(*pos) {
                    let data = active.into_iter().map(|v| -v).collect();
                    let gp = Tensor::from_vec(p.rows(), p.cols(), data)?;
                    self.accumulate(grads, *pos, gp);
                }
            }
            Op::SumSquares(x) => {
                let k = 2.0 * g.item();
                let xv = self.value(*x);
                let data = xv.data().iter().map(|v| k * v).collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.rows(), xv.cols(), data)?);
            }
        }
        Ok(())
    }
}
