//! Dense numeric primitives and a reverse-mode gradient tape.
//!
//! The tape is a Wengert list: every primitive records its operands by node
//! id, values are computed eagerly, and `backward` walks the list in reverse
//! applying the chain rule. The model graph is input-dependent (sampled
//! neighborhoods differ per task), so a fresh tape is built per loss group.
//!
//! One tape per thread; tapes are never shared. Tensors detached from any
//! tape are plain immutable values and safe to read across threads.

mod gradcheck;

pub use gradcheck::{grad_check, CoordinateError, GradCheckReport, ScalarLoss};

use crate::error::{Error, Result};

/// Extent of a tensor: 1-D vectors or 2-D row-major matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Double-precision dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Result<Tensor> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty tensor".into()));
        }
        let t = Tensor {
            shape: Shape::Vector(data.len()),
            data,
        };
        t.check_finite("vector construction")?;
        Ok(t)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if rows * cols != data.len() || data.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "matrix construction",
                detail: format!("{rows}x{cols} vs {} values", data.len()),
            });
        }
        let t = Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        };
        t.check_finite("matrix construction")?;
        Ok(t)
    }

    pub fn scalar(x: f64) -> Result<Tensor> {
        Tensor::vector(vec![x])
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Tensor {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.shape, Shape::Vector(1))
    }

    pub fn as_scalar(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::ShapeMismatch {
                op: "as_scalar",
                detail: format!("expected scalar, got {}", self.shape),
            })
        }
    }

    fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    ScaleConst(NodeId, f64),
    /// Matrix-vector product `m · v`.
    MatVec(NodeId, NodeId),
    /// Row-vector-matrix product `vᵀ · m`.
    VecMat(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Concat(Vec<NodeId>),
    Sum(NodeId),
    Slice(NodeId, usize, usize),
    /// Vector scaled by a one-element tensor.
    MulBroadcast(NodeId, NodeId),
    /// Vector divided by a one-element tensor.
    DivBroadcast(NodeId, NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Reverse-mode gradient tape over [`Tensor`] primitives.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        value.check_finite(op_name(&op))?;
        self.nodes.push(Node { op, value });
        Ok(self.nodes.len() - 1)
    }

    /// Record an input tensor. Leaves are the only nodes eligible for
    /// gradient extraction.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        self.nodes.len() - 1
    }

    /// Record a constant; identical to a leaf except the intent is that
    /// callers never read its gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value)
    }

    fn binary_elementwise(
        &mut self,
        op_tag: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape, self.nodes[b].value.shape);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: op_tag,
                detail: format!("{sa} vs {sb}"),
            });
        }
        let data = self.nodes[a]
            .value
            .data
            .iter()
            .zip(&self.nodes[b].value.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(make(a, b), Tensor { shape: sa, data })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape;
        let data = self.nodes[a].value.data.iter().map(|&x| x * c).collect();
        self.push(Op::ScaleConst(a, c), Tensor { shape: sa, data })
    }

    /// `m · v` for an `r x c` matrix and a length-`c` vector.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (self.nodes[m].value.shape, self.nodes[v].value.shape);
        let (rows, cols) = match (sm, sv) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => (r, c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matvec",
                    detail: format!("{sm} vs {sv}"),
                })
            }
        };
        let md = &self.nodes[m].value.data;
        let vd = &self.nodes[v].value.data;
        let mut out = vec![0.0; rows];
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &md[r * cols..(r + 1) * cols];
            *slot = row.iter().zip(vd).map(|(&a, &b)| a * b).sum();
        }
        self.push(
            Op::MatVec(m, v),
            Tensor {
                shape: Shape::Vector(rows),
                data: out,
            },
        )
    }

    /// `vᵀ · m` for a length-`r` vector and an `r x c` matrix.
    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId> {
        let (sv, sm) = (self.nodes[v].value.shape, self.nodes[m].value.shape);
        let (rows, cols) = match (sv, sm) {
            (Shape::Vector(n), Shape::Matrix(r, c)) if r == n => (r, c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "vecmat",
                    detail: format!("{sv} vs {sm}"),
                })
            }
        };
        let vd = &self.nodes[v].value.data;
        let md = &self.nodes[m].value.data;
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            let x = vd[r];
            for (c, slot) in out.iter_mut().enumerate() {
                *slot += x * md[r * cols + c];
            }
        }
        self.push(
            Op::VecMat(v, m),
            Tensor {
                shape: Shape::Vector(cols),
                data: out,
            },
        )
    }

    /// Elementwise max(x, 0). The subgradient at 0 is defined as 0.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape;
        let data = self.nodes[a].value.data.iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu(a), Tensor { shape: sa, data })
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape;
        let data = self.nodes[a].value.data.iter().map(|&x| x.exp()).collect();
        self.push(Op::Exp(a), Tensor { shape: sa, data })
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape;
        let data = self.nodes[a].value.data.iter().map(|&x| x.ln()).collect();
        self.push(Op::Ln(a), Tensor { shape: sa, data })
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape;
        let data = self.nodes[a].value.data.iter().map(|&x| x.sqrt()).collect();
        self.push(Op::Sqrt(a), Tensor { shape: sa, data })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            match self.nodes[p].value.shape {
                Shape::Vector(_) => data.extend_from_slice(&self.nodes[p].value.data),
                s => {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        detail: format!("expected vector part, got {s}"),
                    })
                }
            }
        }
        let n = data.len();
        self.push(
            Op::Concat(parts.to_vec()),
            Tensor {
                shape: Shape::Vector(n),
                data,
            },
        )
    }

    /// Reduction sum to a one-element tensor.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        self.push(
            Op::Sum(a),
            Tensor {
                shape: Shape::Vector(1),
                data: vec![s],
            },
        )
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        match self.nodes[a].value.shape {
            Shape::Vector(n) if start + len <= n && len > 0 => {}
            s => {
                return Err(Error::ShapeMismatch {
                    op: "slice",
                    detail: format!("range {start}..{} of {s}", start + len),
                })
            }
        }
        let data = self.nodes[a].value.data[start..start + len].to_vec();
        self.push(
            Op::Slice(a, start, len),
            Tensor {
                shape: Shape::Vector(len),
                data,
            },
        )
    }

    fn broadcast(
        &mut self,
        op_tag: &'static str,
        v: NodeId,
        s: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        if !self.nodes[s].value.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: op_tag,
                detail: format!("broadcast operand must be scalar, got {}", self.nodes[s].value.shape),
            });
        }
        let x = self.nodes[s].value.data[0];
        let sv = self.nodes[v].value.shape;
        let data = self.nodes[v].value.data.iter().map(|&y| f(y, x)).collect();
        self.push(make(v, s), Tensor { shape: sv, data })
    }

    pub fn mul_broadcast(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        self.broadcast("mul_broadcast", v, s, |y, x| y * x, Op::MulBroadcast)
    }

    pub fn div_broadcast(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        self.broadcast("div_broadcast", v, s, |y, x| y / x, Op::DivBroadcast)
    }

    /// Dot product of two vectors, composed from mul + sum.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let m = self.mul(a, b)?;
        self.sum(m)
    }

    /// Numerically safe softmax over a vector (max-subtracted).
    pub fn softmax(&mut self, q: NodeId) -> Result<NodeId> {
        let max = self
            .nodes[q]
            .value
            .data
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let shape = self.nodes[q].value.shape;
        // Shift by a detached constant; softmax is invariant under it.
        let shift = self.constant(Tensor::filled(shape, max));
        let z = self.sub(q, shift)?;
        let ez = self.exp(z)?;
        let total = self.sum(ez)?;
        self.div_broadcast(ez, total)
    }

    /// Smallest |input| over all ReLU nodes recorded so far. Used by
    /// gradient checks to reject evaluations near a kink.
    pub fn relu_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &x in &self.nodes[a].value.data {
                    margin = margin.min(x.abs());
                }
            }
        }
        margin
    }

    /// Hash of the sign pattern of every ReLU input. Two evaluations with
    /// different fingerprints lie on different linear pieces, so a finite
    /// difference between them straddles a kink.
    pub fn relu_sign_fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Relu(a) = node.op {
                for (i, &x) in self.nodes[a].value.data.iter().enumerate() {
                    if x > 0.0 {
                        let v = (id as u64) << 32 | i as u64;
                        h ^= v.wrapping_mul(0x100000001b3);
                        h = h.rotate_left(17).wrapping_mul(0x100000001b3);
                    }
                }
            }
        }
        h
    }

    /// Recompute every node value from the leaves. Used to check replay
    /// determinism.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut replayed = Tape::new();
        for node in &self.nodes {
            match &node.op {
                Op::Leaf => {
                    replayed.leaf(node.value.clone());
                }
                Op::Add(a, b) => {
                    replayed.add(*a, *b)?;
                }
                Op::Sub(a, b) => {
                    replayed.sub(*a, *b)?;
                }
                Op::Mul(a, b) => {
                    replayed.mul(*a, *b)?;
                }
                Op::Div(a, b) => {
                    replayed.div(*a, *b)?;
                }
                Op::ScaleConst(a, c) => {
                    replayed.scale_const(*a, *c)?;
                }
                Op::MatVec(m, v) => {
                    replayed.matvec(*m, *v)?;
                }
                Op::VecMat(v, m) => {
                    replayed.vecmat(*v, *m)?;
                }
                Op::Relu(a) => {
                    replayed.relu(*a)?;
                }
                Op::Exp(a) => {
                    replayed.exp(*a)?;
                }
                Op::Ln(a) => {
                    replayed.ln(*a)?;
                }
                Op::Sqrt(a) => {
                    replayed.sqrt(*a)?;
                }
                Op::Concat(parts) => {
                    replayed.concat(parts)?;
                }
                Op::Sum(a) => {
                    replayed.sum(*a)?;
                }
                Op::Slice(a, s, l) => {
                    replayed.slice(*a, *s, *l)?;
                }
                Op::MulBroadcast(v, s) => {
                    replayed.mul_broadcast(*v, *s)?;
                }
                Op::DivBroadcast(v, s) => {
                    replayed.div_broadcast(*v, *s)?;
                }
            }
        }
        Ok(replayed.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Reverse pass from a scalar root. Returns one gradient tensor per
    /// node; nodes that do not influence the root get zeros.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "backward root {root} not on tape of {} nodes",
                self.nodes.len()
            )));
        }
        if !self.nodes[root].value.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("root must be scalar, got {}", self.nodes[root].value.shape),
            });
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[root][0] = 1.0;

        for id in (0..=root).rev() {
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|&x| x == 0.0) {
                grads[id] = g;
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut grads[*a], &g, 1.0);
                    axpy(&mut grads[*b], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[*a], &g, 1.0);
                    axpy(&mut grads[*b], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        grads[a][i] += g[i] * self.nodes[b].value.data[i];
                    }
                    for i in 0..g.len() {
                        grads[b][i] += g[i] * self.nodes[a].value.data[i];
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        let bd = self.nodes[b].value.data[i];
                        grads[a][i] += g[i] / bd;
                        grads[b][i] -= g[i] * self.nodes[a].value.data[i] / (bd * bd);
                    }
                }
                Op::ScaleConst(a, c) => {
                    axpy(&mut grads[*a], &g, *c);
                }
                Op::MatVec(m, v) => {
                    let (m, v) = (*m, *v);
                    let cols = self.nodes[v].value.len();
                    for r in 0..g.len() {
                        let gr = g[r];
                        for c in 0..cols {
                            grads[m][r * cols + c] += gr * self.nodes[v].value.data[c];
                        }
                    }
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..g.len() {
                            acc += g[r] * self.nodes[m].value.data[r * cols + c];
                        }
                        grads[v][c] += acc;
                    }
                }
                Op::VecMat(v, m) => {
                    let (v, m) = (*v, *m);
                    let rows = self.nodes[v].value.len();
                    let cols = g.len();
                    for r in 0..rows {
                        let mut acc = 0.0;
                        for c in 0..cols {
                            acc += g[c] * self.nodes[m].value.data[r * cols + c];
                        }
                        grads[v][r] += acc;
                    }
                    for r in 0..rows {
                        let vr = self.nodes[v].value.data[r];
                        for c in 0..cols {
                            grads[m][r * cols + c] += vr * g[c];
                        }
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        if self.nodes[a].value.data[i] > 0.0 {
                            grads[a][i] += g[i];
                        }
                    }
                }
                Op::Exp(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        grads[a][i] += g[i] * self.nodes[id].value.data[i];
                    }
                }
                Op::Ln(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        grads[a][i] += g[i] / self.nodes[a].value.data[i];
                    }
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        grads[a][i] += g[i] * 0.5 / self.nodes[id].value.data[i];
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts.clone().iter() {
                        let n = self.nodes[p].value.len();
                        for i in 0..n {
                            grads[p][i] += g[offset + i];
                        }
                        offset += n;
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    for slot in grads[a].iter_mut() {
                        *slot += g[0];
                    }
                }
                Op::Slice(a, start, len) => {
                    let (a, start) = (*a, *start);
                    for i in 0..*len {
                        grads[a][start + i] += g[i];
                    }
                }
                Op::MulBroadcast(v, s) => {
                    let (v, s) = (*v, *s);
                    let x = self.nodes[s].value.data[0];
                    let mut acc = 0.0;
                    for i in 0..g.len() {
                        grads[v][i] += g[i] * x;
                        acc += g[i] * self.nodes[v].value.data[i];
                    }
                    grads[s][0] += acc;
                }
                Op::DivBroadcast(v, s) => {
                    let (v, s) = (*v, *s);
                    let x = self.nodes[s].value.data[0];
                    let mut acc = 0.0;
                    for i in 0..g.len() {
                        grads[v][i] += g[i] / x;
                        acc += g[i] * self.nodes[v].value.data[i];
                    }
                    grads[s][0] -= acc / (x * x);
                }
            }
            grads[id] = g;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape).collect();
        Ok(Gradients {
            grads,
            shapes,
        })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::ScaleConst(..) => "scale_const",
        Op::MatVec(..) => "matvec",
        Op::VecMat(..) => "vecmat",
        Op::Relu(..) => "relu",
        Op::Exp(..) => "exp",
        Op::Ln(..) => "ln",
        Op::Sqrt(..) => "sqrt",
        Op::Concat(..) => "concat",
        Op::Sum(..) => "sum",
        Op::Slice(..) => "slice",
        Op::MulBroadcast(..) => "mul_broadcast",
        Op::DivBroadcast(..) => "div_broadcast",
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Tensor {
        Tensor {
            shape: self.shapes[id],
            data: self.grads[id].clone(),
        }
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.grads[id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_vec(tape: &mut Tape, v: &[f64]) -> NodeId {
        tape.leaf(Tensor::vector(v.to_vec()).unwrap())
    }

    #[test]
    fn relu_of_mixed_signs() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[-1.0, 0.0, 2.0]);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_building_blocks() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[2.0f64.ln(), 0.0]);
        let e = tape.exp(x).unwrap();
        assert!((tape.value(e).data()[0] - 2.0).abs() < 1e-12);
        assert!((tape.value(e).data()[1] - 1.0).abs() < 1e-12);
        let total = tape.sum(e).unwrap();
        let norm = tape.div_broadcast(e, total).unwrap();
        assert!((tape.value(norm).data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((tape.value(norm).data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matvec_identity() {
        let mut tape = Tape::new();
        let eye = tape.leaf(
            Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let v = leaf_vec(&mut tape, &[1.0, 2.0, 3.0]);
        let y = tape.matvec(eye, v).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matvec_shape_error_names_op() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let v = leaf_vec(&mut tape, &[1.0, 2.0, 3.0]);
        match tape.matvec(m, v) {
            Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "matvec"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[3.0]);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.data(x), &[6.0]);
    }

    #[test]
    fn product_gradient() {
        // f(x, y) = x*y at (2, 5) -> (5, 2)
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[2.0]);
        let y = leaf_vec(&mut tape, &[5.0]);
        let p = tape.mul(x, y).unwrap();
        let grads = tape.backward(p).unwrap();
        assert_eq!(grads.data(x), &[5.0]);
        assert_eq!(grads.data(y), &[2.0]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[1.0, -2.0, 7.5, 0.25]);
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.data(x), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[1.0, 2.0]);
        assert!(matches!(
            tape.backward(x),
            Err(Error::ShapeMismatch { op: "backward", .. })
        ));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[4.0]);
        let unused = leaf_vec(&mut tape, &[9.0, 9.0]);
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.data(unused), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_linearity() {
        // backward(a*f + b*g) == a*backward(f) + b*backward(g)
        let (a, b) = (2.5, -1.25);
        let build = |tape: &mut Tape| {
            let x = tape.leaf(Tensor::vector(vec![0.7, -0.3, 1.1]).unwrap());
            let sq = tape.mul(x, x).unwrap();
            let f = tape.sum(sq).unwrap();
            let e = tape.exp(x).unwrap();
            let g = tape.sum(e).unwrap();
            (x, f, g)
        };

        let mut tape = Tape::new();
        let (x, f, g) = build(&mut tape);
        let fa = tape.scale_const(f, a).unwrap();
        let gb = tape.scale_const(g, b).unwrap();
        let combined = tape.add(fa, gb).unwrap();
        let combo_grad = tape.backward(combined).unwrap().get(x);

        let f_grad = tape.backward(f).unwrap().get(x);
        let g_grad = tape.backward(g).unwrap().get(x);
        for i in 0..3 {
            let expect = a * f_grad.data()[i] + b * g_grad.data()[i];
            assert!((combo_grad.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_values_bitwise() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[0.3, 0.9]);
        let m = tape.leaf(Tensor::matrix(2, 2, vec![0.1, -0.4, 0.7, 0.2]).unwrap());
        let y = tape.vecmat(x, m).unwrap();
        let r = tape.relu(y).unwrap();
        let sm = tape.softmax(r).unwrap();
        let _ = tape.sum(sm).unwrap();
        let replayed = tape.replay().unwrap();
        for (id, value) in replayed.iter().enumerate() {
            assert_eq!(value, tape.value(id));
        }
    }

    #[test]
    fn two_backward_passes_are_identical() {
        let mut tape = Tape::new();
        let x = leaf_vec(&mut tape, &[0.2, -1.4, 2.2]);
        let e = tape.exp(x).unwrap();
        let s = tape.sum(e).unwrap();
        let g1 = tape.backward(s).unwrap().get(x);
        let g2 = tape.backward(s).unwrap().get(x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut tape = Tape::new();
        let q = leaf_vec(&mut tape, &[0.1, 1.7, -0.9]);
        let sm1 = tape.softmax(q).unwrap();
        let shift = tape.constant(Tensor::filled(Shape::Vector(3), 123.456));
        let q2 = tape.add(q, shift).unwrap();
        let sm2 = tape.softmax(q2).unwrap();
        for i in 0..3 {
            assert!((tape.value(sm1).data()[i] - tape.value(sm2).data()[i]).abs() < 1e-12);
        }
        let total: f64 = tape.value(sm1).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::vector(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn division_by_zero_detected_post_op() {
        let mut tape = Tape::new();
        let a = leaf_vec(&mut tape, &[1.0]);
        let b = leaf_vec(&mut tape, &[0.0]);
        assert!(matches!(tape.div(a, b), Err(Error::NonFinite { op: "div" })));
    }

    #[test]
    fn vecmat_gradients_match_finite_differences() {
        let v0 = [0.4, -0.7, 1.3];
        let m0 = [0.2, 0.5, -0.3, 0.8, 0.1, -0.6];
        let run = |v: &[f64], m: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let vn = tape.leaf(Tensor::vector(v.to_vec()).unwrap());
            let mn = tape.leaf(Tensor::matrix(3, 2, m.to_vec()).unwrap());
            let y = tape.vecmat(vn, mn).unwrap();
            let sq = tape.mul(y, y).unwrap();
            let s = tape.sum(sq).unwrap();
            tape.value(s).as_scalar().unwrap()
        };
        let mut tape = Tape::new();
        let vn = tape.leaf(Tensor::vector(v0.to_vec()).unwrap());
        let mn = tape.leaf(Tensor::matrix(3, 2, m0.to_vec()).unwrap());
        let y = tape.vecmat(vn, mn).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let s = tape.sum(sq).unwrap();
        let grads = tape.backward(s).unwrap();

        let h = 1e-6;
        for i in 0..3 {
            let mut up = v0;
            let mut dn = v0;
            up[i] += h;
            dn[i] -= h;
            let fd = (run(&up, &m0) - run(&dn, &m0)) / (2.0 * h);
            assert!((grads.data(vn)[i] - fd).abs() < 1e-6);
        }
        for i in 0..6 {
            let mut up = m0;
            let mut dn = m0;
            up[i] += h;
            dn[i] -= h;
            let fd = (run(&v0, &up) - run(&v0, &dn)) / (2.0 * h);
            assert!((grads.data(mn)[i] - fd).abs() < 1e-6);
        }
    }
}
