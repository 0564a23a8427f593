//! Reverse-mode gradient tape.
//!
//! Every op appends one node holding its output and the handles of its
//! inputs, so nodes are topologically ordered by construction. A backward
//! sweep walks the node list once in reverse.

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt_acc, gemm_tn_acc, Scalar, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    AddBias(Var, Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    tensor: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            check_finite: false,
        }
    }

    /// Enables NaN/Inf detection on every op output.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.nodes.push(Node {
            tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].tensor.grad.take()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    fn push(&mut self, op_name: &'static str, mut tensor: Tensor<T>, op: Op<T>, rg: bool) -> Result<Var> {
        if self.check_finite && !tensor.all_finite() {
            return Err(Error::NonFinite(op_name));
        }
        tensor.requires_grad = rg;
        self.nodes.push(Node { tensor, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        debug_assert_eq!(k, k2);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Hadamard product of two same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "elementwise_mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("elementwise_mul", t, Op::Mul(a, b), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let out: Vec<T> = ta
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.requires_grad(a);
        self.push("relu", t, Op::Relu(a), rg)
    }

    /// Adds a length-`n` bias to every row of an `m×n` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = match tx.dims2() {
            Some((m, n)) if tb.len() == n => (m, n),
            _ => {
                return Err(Error::Shape {
                    op: "add_bias",
                    lhs: tx.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        let mut out = tx.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        self.push("add_bias", t, Op::AddBias(x, bias), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().fold(T::zero(), |acc, &x| acc + x);
        let rg = self.requires_grad(a);
        self.push("sum", Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Mean softmax cross-entropy of `b×c` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (b, c) = tl.dims2().ok_or_else(|| Error::Shape {
            op: "softmax_cross_entropy",
            lhs: tl.shape().to_vec(),
            rhs: vec![labels.len()],
        })?;
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if labels.len() != b {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for (r, (row, prow)) in tl.data().chunks_exact(c).zip(probs.chunks_exact_mut(c)).enumerate() {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut denom = T::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                denom = denom + *p;
            }
            for p in prow.iter_mut() {
                *p = *p / denom;
            }
            // -log softmax = log(denom) - (x_label - max)
            total = total + denom.ln() - (row[labels[r]] - max);
        }
        let loss = total / T::from_f64(b as f64);
        let rg = self.requires_grad(logits);
        let op = Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("softmax_cross_entropy", Tensor::scalar(loss), op, rg)
    }

    /// Clears all gradients so the tape can be swept again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
        self.consumed = false;
    }

    /// Populates `grad` for every tensor that requires one. Tensors that the
    /// loss does not depend on receive zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        for node in &mut self.nodes {
            node.tensor.grad = node
                .tensor
                .requires_grad
                .then(|| vec![T::zero(); node.tensor.len()]);
        }
        if let Some(g) = self.nodes[loss.0].tensor.grad.as_mut() {
            g[0] = T::one();
        }

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            let g = self.nodes[idx].tensor.grad.take().unwrap();
            self.backprop_node(idx, &g);
            self.nodes[idx].tensor.grad = Some(g);
        }
        self.consumed = true;
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[T]) {
        // Inputs always precede `idx`, so split the node list to borrow the
        // inputs mutably while reading this node's op.
        let (before, rest) = self.nodes.split_at_mut(idx);
        let node = &rest[0];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = before[a.0].tensor.dims2().unwrap();
                let n = before[b.0].tensor.dims2().unwrap().1;
                if before[a.0].tensor.requires_grad {
                    let bdata = before[b.0].tensor.data().to_vec();
                    let ga = before[a.0].tensor.grad.as_mut().unwrap();
                    gemm_nt_acc(g, &bdata, ga, m, k, n);
                }
                if before[b.0].tensor.requires_grad {
                    let adata = before[a.0].tensor.data().to_vec();
                    let gb = before[b.0].tensor.grad.as_mut().unwrap();
                    gemm_tn_acc(&adata, g, gb, m, k, n);
                }
            }
            Op::Mul(a, b) => {
                if before[a.0].tensor.requires_grad {
                    let bdata = before[b.0].tensor.data().to_vec();
                    let ga = before[a.0].tensor.grad.as_mut().unwrap();
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(&bdata) {
                        *o = *o + gv * bv;
                    }
                }
                if before[b.0].tensor.requires_grad {
                    let adata = before[a.0].tensor.data().to_vec();
                    let gb = before[b.0].tensor.grad.as_mut().unwrap();
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(&adata) {
                        *o = *o + gv * av;
                    }
                }
            }
            Op::Relu(a) => {
                let out = node.tensor.data();
                if let Some(ga) = before[a.0].tensor.grad.as_mut() {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = before[x.0].tensor.grad.as_mut() {
                    for (o, &gv) in gx.iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                }
                if let Some(gb) = before[bias.0].tensor.grad.as_mut() {
                    let n = gb.len();
                    for row in g.chunks_exact(n) {
                        for (o, &gv) in gb.iter_mut().zip(row) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = before[a.0].tensor.grad.as_mut() {
                    for o in ga.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                if let Some(gl) = before[logits.0].tensor.grad.as_mut() {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let scale = g[0] / T::from_f64(b as f64);
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            let i = r * c + j;
                            gl[i] = gl[i] + (probs[i] - onehot) * scale;
                        }
                    }
                }
            }
        }
    }
}
