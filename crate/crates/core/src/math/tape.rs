//! Reverse-mode automatic differentiation over a per-example tape.
//!
//! Every operation appends a node holding its forward value; node ids are
//! therefore topologically ordered. [`Tape::backward`] walks the nodes in
//! reverse and accumulates adjoints. Parameter nodes do not copy their values:
//! they read from the borrowed [`ParamSet`] and their adjoints land directly in
//! a [`ParamGrads`] accumulator, so gradients of a whole batch can be summed
//! into one buffer.

use rand::Rng;

use super::tensor::{axpy, dot, log_softmax_slice, matmul_into, sigmoid, softmax_slice};
use super::{MathError, ParamGrads, ParamId, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddN(Vec<NodeId>),
    /// `scale * x + shift`
    Affine(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Log(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick(NodeId, usize),
    Row(NodeId, usize),
    Scatter(NodeId, Vec<usize>),
    Mask(NodeId, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddN(_) => "add_n",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Pick(..) => "pick",
            Op::Row(..) => "row",
            Op::Scatter(..) => "scatter",
            Op::Mask(..) => "dropout",
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the parameter set.
    value: Option<Tensor>,
}

/// Elementwise kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Log,
    Concat,
    Sum,
}

pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: adjoints of every tape node and of every
/// parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Option<ParamGrads>,
}

impl Gradients {
    /// Adjoint of `node`; zeros when the node does not reach the loss.
    pub fn node(&self, tape: &Tape<'_>, node: NodeId) -> Tensor {
        if let Op::Param(pid) = tape.nodes[node.0].op {
            if let Some(p) = &self.params {
                return p.get(pid).clone();
            }
        }
        self.nodes[node.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tape.value(node).shape()))
    }

    pub fn params(&self) -> Option<&ParamGrads> {
        self.params.as_ref()
    }

    pub fn into_params(self) -> Option<ParamGrads> {
        self.params
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> Option<&'p ParamSet> {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(pid)) => self
                .params
                .expect("parameter node on a tape without parameters")
                .get(*pid),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        self.value(id).data()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId, MathError> {
        if !value.is_finite() {
            return Err(MathError::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<NodeId, MathError> {
        self.push(Op::Input, value)
    }

    pub fn input_vec(&mut self, data: Vec<f64>) -> Result<NodeId, MathError> {
        let t = Tensor::vector(data)?;
        self.input(t)
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId, MathError> {
        let params = self
            .params
            .ok_or_else(|| MathError::Contract("tape has no parameter set".into()))?;
        if id.0 >= params.len() {
            return Err(MathError::Contract(format!("unknown parameter id {}", id.0)));
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Matrix product. `b` may be a vector, which is treated as a column and
    /// yields a vector.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() > 2 {
            return Err(MathError::Dimension(format!(
                "matmul needs a matrix on the left, got {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k) = va.as_matrix_dims();
        let (k2, n) = vb.as_matrix_dims();
        if k != k2 {
            return Err(MathError::Dimension(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(va.data(), vb.data(), m, k, n, &mut out);
        let shape = if vb.shape().len() == 1 { vec![m] } else { vec![m, n] };
        let t = Tensor::new(shape, out)?;
        self.push(Op::MatMul(a, b), t)
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, MathError> {
        let (va, vb) = (self.value(a), self.value(b));
        let t = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.is_scalar() {
            let y = vb.data()[0];
            Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x, y)).collect())?
        } else if va.is_scalar() {
            let x = va.data()[0];
            Tensor::new(vb.shape().to_vec(), vb.data().iter().map(|y| f(x, *y)).collect())?
        } else {
            return Err(MathError::Dimension(format!(
                "{}: shapes {:?} and {:?} do not conform",
                op.name(),
                va.shape(),
                vb.shape()
            )));
        };
        self.push(op, t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of equally-shaped tensors, reduced left to right in the given order.
    pub fn add_n(&mut self, items: &[NodeId]) -> Result<NodeId, MathError> {
        let first = *items
            .first()
            .ok_or_else(|| MathError::Dimension("add_n of nothing".into()))?;
        let mut acc = self.value(first).clone();
        for &id in &items[1..] {
            let v = self.value(id);
            if v.shape() != acc.shape() {
                return Err(MathError::Dimension(format!(
                    "add_n: shapes {:?} and {:?} differ",
                    acc.shape(),
                    v.shape()
                )));
            }
            axpy(1.0, v.data(), acc.data_mut());
        }
        self.push(Op::AddN(items.to_vec()), acc)
    }

    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId, MathError> {
        let v = self.value(a);
        let t = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|x| scale * x + shift).collect(),
        )?;
        self.push(Op::Affine(a, scale), t)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.affine(a, -1.0, 1.0)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId, MathError> {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| f(*x)).collect())?;
        self.push(op, t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        if let Some(bad) = self.value(a).data().iter().find(|x| **x <= 0.0) {
            return Err(MathError::Domain(format!("log of non-positive value {bad}")));
        }
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Concatenates vectors (any shape is flattened) into one vector.
    pub fn concat(&mut self, items: &[NodeId]) -> Result<NodeId, MathError> {
        if items.is_empty() {
            return Err(MathError::Dimension("concat of nothing".into()));
        }
        let mut data = Vec::with_capacity(items.iter().map(|&i| self.value(i).numel()).sum());
        for &id in items {
            data.extend_from_slice(self.value(id).data());
        }
        let t = Tensor::vector(data)?;
        self.push(Op::Concat(items.to_vec()), t)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, MathError> {
        let v = self.value(a);
        if len == 0 || start + len > v.numel() {
            return Err(MathError::Dimension(format!(
                "slice [{start}, {}) out of range for {} values",
                start + len,
                v.numel()
            )));
        }
        let t = Tensor::vector(v.data()[start..start + len].to_vec())?;
        self.push(Op::Slice(a, start), t)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() != vb.numel() {
            return Err(MathError::Dimension(format!(
                "dot: shapes {:?} and {:?} differ",
                va.shape(),
                vb.shape()
            )));
        }
        let s = dot(va.data(), vb.data());
        self.push(Op::Dot(a, b), Tensor::scalar(s))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), softmax_slice(v.data()))?;
        self.push(Op::Softmax(a), t)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, MathError> {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), log_softmax_slice(v.data()))?;
        self.push(Op::LogSoftmax(a), t)
    }

    /// Single element as a scalar.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId, MathError> {
        let v = self.value(a);
        let x = *v.data().get(index).ok_or_else(|| {
            MathError::Dimension(format!("pick index {index} out of range for {:?}", v.shape()))
        })?;
        self.push(Op::Pick(a, index), Tensor::scalar(x))
    }

    /// One row of a matrix, e.g. an embedding lookup.
    pub fn row(&mut self, a: NodeId, row: usize) -> Result<NodeId, MathError> {
        let v = self.value(a);
        let [r, c] = v.shape()[..] else {
            return Err(MathError::Dimension(format!("row of non-matrix {:?}", v.shape())));
        };
        if row >= r {
            return Err(MathError::Dimension(format!("row {row} out of range for {r} rows")));
        }
        let t = Tensor::vector(v.data()[row * c..(row + 1) * c].to_vec())?;
        self.push(Op::Row(a, row), t)
    }

    /// Places the values of `a` at `positions` in a zero vector of length `len`.
    pub fn scatter(&mut self, a: NodeId, positions: &[usize], len: usize) -> Result<NodeId, MathError> {
        let v = self.value(a);
        if positions.len() != v.numel() || positions.iter().any(|&p| p >= len) {
            return Err(MathError::Dimension(format!(
                "scatter of {} values into length {len} with positions {positions:?}",
                v.numel()
            )));
        }
        let mut out = vec![0.0; len];
        for (&p, &x) in positions.iter().zip(v.data()) {
            out[p] = x;
        }
        let t = Tensor::vector(out)?;
        self.push(Op::Scatter(a, positions.to_vec()), t)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Evaluation mode (or rate 0) returns `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId, MathError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(MathError::Parameter(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(a);
        let mask: Vec<f64> = (0..v.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        )?;
        self.push(Op::Mask(a, mask), t)
    }

    /// Dispatches one of the pointwise/structural kinds by name.
    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[NodeId]) -> Result<NodeId, MathError> {
        let arity = |n: usize| {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(MathError::Dimension(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            Elementwise::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Elementwise::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Elementwise::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            Elementwise::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            Elementwise::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            Elementwise::Concat => self.concat(inputs),
            Elementwise::Sum => {
                arity(1)?;
                self.sum(inputs[0])
            }
        }
    }

    /// Adjoints of the scalar `loss` with respect to every node and parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, MathError> {
        let mut pgrads = match self.params {
            Some(p) => Some(p.zeros_like()),
            None => None,
        };
        let mut scratch = ParamGrads::empty();
        let nodes = self.run_backward(loss, pgrads.as_mut().unwrap_or(&mut scratch))?;
        Ok(Gradients {
            nodes: nodes
                .into_iter()
                .enumerate()
                .map(|(i, g)| g.map(|g| Tensor::new(self.value(NodeId(i)).shape().to_vec(), g).expect("gradient shape")))
                .collect(),
            params: pgrads,
        })
    }

    /// Like [`Tape::backward`] but only accumulates parameter adjoints into
    /// `acc` (scaled by `weight`), for batch gradient accumulation.
    pub fn backward_into(&self, loss: NodeId, acc: &mut ParamGrads, weight: f64) -> Result<(), MathError> {
        if weight == 1.0 {
            self.run_backward(loss, acc)?;
            return Ok(());
        }
        let params = self
            .params
            .ok_or_else(|| MathError::Contract("tape has no parameter set".into()))?;
        let mut local = params.zeros_like();
        self.run_backward(loss, &mut local)?;
        for (dst, src) in acc.iter_mut().zip(local.iter()) {
            axpy(weight, src.data(), dst.data_mut());
        }
        Ok(())
    }

    fn run_backward(&self, loss: NodeId, pgrads: &mut ParamGrads) -> Result<Vec<Option<Vec<f64>>>, MathError> {
        if !self.value(loss).is_scalar() {
            return Err(MathError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if let Some(p) = self.params {
            if pgrads.len() != p.len() {
                return Err(MathError::Dimension(format!(
                    "gradient accumulator has {} tensors for {} parameters",
                    pgrads.len(),
                    p.len()
                )));
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param(_)) {
                // Leaves keep their adjoint.
                grads[i] = Some(g);
                continue;
            }
            let out = node.value.as_ref();
            let mut acc = Acc {
                tape: self,
                grads: &mut grads,
                pgrads: &mut *pgrads,
            };
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = va.as_matrix_dims();
                    let (_, n) = vb.as_matrix_dims();
                    let (ad, bd) = (va.data(), vb.data());
                    acc.with(*a, |da| {
                        for r in 0..m {
                            let da_row = &mut da[r * k..(r + 1) * k];
                            if n == 1 {
                                if g[r] != 0.0 {
                                    axpy(g[r], bd, da_row);
                                }
                            } else {
                                for (p, slot) in da_row.iter_mut().enumerate() {
                                    *slot += dot(&g[r * n..(r + 1) * n], &bd[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    });
                    acc.with(*b, |db| {
                        for r in 0..m {
                            let arow = &ad[r * k..(r + 1) * k];
                            if n == 1 {
                                if g[r] != 0.0 {
                                    axpy(g[r], arow, db);
                                }
                            } else {
                                for (p, &apk) in arow.iter().enumerate() {
                                    axpy(apk, &g[r * n..(r + 1) * n], &mut db[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc.broadcast(*a, &g, |gi, _| gi);
                    acc.broadcast(*b, &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    acc.broadcast(*a, &g, |gi, _| gi);
                    acc.broadcast(*b, &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (self.value(a).clone(), self.value(b).clone());
                    acc.broadcast(a, &g, |gi, j| gi * elem(&vb, j));
                    acc.broadcast(b, &g, |gi, j| gi * elem(&va, j));
                }
                Op::AddN(items) => {
                    for &id in items {
                        acc.with(id, |d| axpy(1.0, &g, d));
                    }
                }
                Op::Affine(a, scale) => acc.with(*a, |d| axpy(*scale, &g, d)),
                Op::Sigmoid(a) => {
                    let y = out.unwrap().data();
                    acc.with(*a, |d| {
                        for ((di, gi), yi) in d.iter_mut().zip(&g).zip(y) {
                            *di += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = out.unwrap().data();
                    acc.with(*a, |d| {
                        for ((di, gi), yi) in d.iter_mut().zip(&g).zip(y) {
                            *di += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    acc.with(*a, |d| {
                        for ((di, gi), xi) in d.iter_mut().zip(&g).zip(x) {
                            *di += gi / xi;
                        }
                    });
                }
                Op::Concat(items) => {
                    let mut off = 0;
                    for &id in items {
                        let n = self.value(id).numel();
                        acc.with(id, |d| axpy(1.0, &g[off..off + n], d));
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let start = *start;
                    acc.with(*a, |d| axpy(1.0, &g, &mut d[start..start + g.len()]));
                }
                Op::Sum(a) => acc.with(*a, |d| d.iter_mut().for_each(|di| *di += g[0])),
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (self.value(a).data(), self.value(b).data());
                    acc.with(a, |d| axpy(g[0], vb, d));
                    acc.with(b, |d| axpy(g[0], va, d));
                }
                Op::Softmax(a) => {
                    let y = out.unwrap().data();
                    let gy = dot(&g, y);
                    acc.with(*a, |d| {
                        for ((di, gi), yi) in d.iter_mut().zip(&g).zip(y) {
                            *di += yi * (gi - gy);
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    let y = out.unwrap().data();
                    let gsum: f64 = g.iter().sum();
                    acc.with(*a, |d| {
                        for ((di, gi), yi) in d.iter_mut().zip(&g).zip(y) {
                            *di += gi - yi.exp() * gsum;
                        }
                    });
                }
                Op::Pick(a, index) => acc.with(*a, |d| d[*index] += g[0]),
                Op::Row(a, row) => {
                    let n = g.len();
                    let row = *row;
                    acc.with(*a, |d| axpy(1.0, &g, &mut d[row * n..(row + 1) * n]));
                }
                Op::Scatter(a, positions) => acc.with(*a, |d| {
                    for (di, &p) in d.iter_mut().zip(positions) {
                        *di += g[p];
                    }
                }),
                Op::Mask(a, mask) => acc.with(*a, |d| {
                    for ((di, gi), mi) in d.iter_mut().zip(&g).zip(mask) {
                        *di += gi * mi;
                    }
                }),
            }
        }
        Ok(grads)
    }
}

fn elem(t: &Tensor, j: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[j]
    }
}

/// Routes adjoint contributions either to a node buffer or, for parameter
/// nodes, straight into the parameter accumulator.
struct Acc<'a, 't, 'p> {
    tape: &'t Tape<'p>,
    grads: &'a mut Vec<Option<Vec<f64>>>,
    pgrads: &'a mut ParamGrads,
}

impl Acc<'_, '_, '_> {
    fn with(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        match self.tape.nodes[id.0].op {
            Op::Param(pid) => f(self.pgrads.get_mut(pid).data_mut()),
            _ => {
                let n = self.tape.value(id).numel();
                f(self.grads[id.0].get_or_insert_with(|| vec![0.0; n]))
            }
        }
    }

    /// Adds `f(g_j, j)` into `id`, summing over `j` when `id` is a broadcast
    /// scalar.
    fn broadcast(&mut self, id: NodeId, g: &[f64], f: impl Fn(f64, usize) -> f64) {
        let n = self.tape.value(id).numel();
        self.with(id, |d| {
            if n == g.len() {
                for (j, (dj, gj)) in d.iter_mut().zip(g).enumerate() {
                    *dj += f(*gj, j);
                }
            } else {
                d[0] += g.iter().enumerate().map(|(j, gj)| f(*gj, j)).sum::<f64>();
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec_input(tape: &mut Tape<'_>, v: &[f64]) -> NodeId {
        tape.input_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_arithmetic() {
        let mut tape = Tape::new();
        let eye = tape.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let col = tape.input(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap()).unwrap();
        let y = tape.matmul(eye, col).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1]);
        assert_eq!(tape.data(y), &[2.0, 3.0]);

        let row = tape.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let col = tape.input(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap()).unwrap();
        let y = tape.matmul(row, col).unwrap();
        assert_eq!(tape.data(y), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.input(Tensor::zeros(&[2, 1])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 1]"), "{err}");
    }

    #[test]
    fn pointwise_values() {
        let mut tape = Tape::new();
        let z = tape.input(Tensor::scalar(0.0)).unwrap();
        let s = tape.sigmoid(z).unwrap();
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.scalar(s), 0.5);
        assert_eq!(tape.scalar(t), 0.0);
        let a = vec_input(&mut tape, &[2.0, 3.0]);
        let b = vec_input(&mut tape, &[4.0, 5.0]);
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.data(m), &[8.0, 15.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let a = vec_input(&mut tape, &[1.0, 0.0]);
        assert!(matches!(tape.log(a), Err(MathError::Domain(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new();
        assert!(matches!(
            tape.input(Tensor::scalar(f64::NAN)),
            Err(MathError::NonFinite(_))
        ));
        let big = tape.input(Tensor::scalar(1e300)).unwrap();
        assert!(matches!(tape.mul(big, big), Err(MathError::NonFinite(_))));
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let a = vec_input(&mut tape, &[0.0, 0.0]);
        let s = tape.softmax(a).unwrap();
        assert_eq!(tape.data(s), &[0.5, 0.5]);
        let a = vec_input(&mut tape, &[1000.0, 0.0]);
        let s = tape.softmax(a).unwrap();
        assert!((tape.data(s)[0] - 1.0).abs() < 1e-12 && tape.data(s)[1] < 1e-300);
        let a = vec_input(&mut tape, &[1.0, 2.0, 3.0]);
        let s = tape.softmax(a).unwrap();
        assert!((tape.data(s).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.node(&tape, x).data(), &[6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut params = ParamSet::new();
        let used = params.add("used", Tensor::scalar(2.0));
        let unused = params.add("unused", Tensor::scalar(5.0));
        let mut tape = Tape::with_params(&params);
        let p = tape.param(used).unwrap();
        let other = tape.input(Tensor::scalar(1.0)).unwrap();
        let y = tape.mul(p, p).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.params().unwrap().get(used).data(), &[4.0]);
        assert_eq!(g.params().unwrap().get(unused).data(), &[0.0]);
        assert_eq!(g.node(&tape, other).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = vec_input(&mut tape, &[1.0, 2.0]);
        assert!(matches!(tape.backward(a), Err(MathError::Contract(_))));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let a = vec_input(&mut tape, &[1.0, 2.0, 3.0]);
        assert_eq!(tape.dropout(a, 0.5, false, &mut rng).unwrap(), a);
        assert_eq!(tape.dropout(a, 0.0, true, &mut rng).unwrap(), a);
        assert!(matches!(
            tape.dropout(a, 1.0, true, &mut rng),
            Err(MathError::Parameter(_))
        ));
        assert!(tape.dropout(a, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let a = tape.input_vec(vec![1.0; 100_000]).unwrap();
        let d = tape.dropout(a, 0.25, true, &mut rng).unwrap();
        let mean = tape.data(d).iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::matrix(2, 3, vec![0.1, -0.4, 0.3, 0.7, 0.2, -0.9]).unwrap());
        let mut tape = Tape::with_params(&params);
        let wn = tape.param(w).unwrap();
        let x = tape.input_vec(vec![0.5, -1.0, 2.0]).unwrap();
        let y = tape.matmul(wn, x).unwrap();
        let y = tape.tanh(y).unwrap();
        let l = tape.sum(y).unwrap();
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        assert_eq!(g1.params().unwrap(), g2.params().unwrap());
    }
}
