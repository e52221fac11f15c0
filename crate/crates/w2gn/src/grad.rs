//! Scalar expression tape with reverse-mode gradients and forward-over-reverse
//! Hessian-vector products.
//!
//! A tape records a single scalar expression over a fixed set of leaf slots
//! (inputs and parameters). Replaying the tape is pure: the same leaf values
//! always reproduce bit-identical results. Tapes are immutable after
//! construction and safe to share across threads; every pass allocates its own
//! scratch buffers.

use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("leaf values cover {given} slots but the tape declares {expected}")]
    MissingLeafValue { expected: usize, given: usize },
    #[error("direction has {given} entries but the tape has {expected} leaves")]
    DirectionMismatch { expected: usize, given: usize },
    #[error("non-finite intermediate at node {node}")]
    NonFinite { node: NodeId },
}

/// One primitive operation. Operands always precede the node itself.
#[derive(Debug, Clone)]
enum Op {
    Leaf(u32),
    Const(f64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Square(NodeId),
    Celu(NodeId, f64),
    /// Inner product of two equally long operand lists.
    Dot(Box<[NodeId]>, Box<[NodeId]>),
}

/// Immutable record of a scalar expression.
#[derive(Debug, Clone)]
pub struct ExpressionTape {
    ops: Vec<Op>,
    n_leaves: usize,
    output: NodeId,
}

/// Incremental tape construction. `finish` fixes the single scalar output.
pub struct TapeBuilder {
    ops: Vec<Op>,
    n_leaves: usize,
}

impl Default for TapeBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl TapeBuilder {
    pub fn new() -> Self {
        Self { ops: Vec::new(), n_leaves: 0 }
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = self.ops.len() as NodeId;
        self.ops.push(op);
        id
    }

    /// Allocates the next leaf slot.
    pub fn leaf(&mut self) -> NodeId {
        let slot = self.n_leaves as u32;
        self.n_leaves += 1;
        self.push(Op::Leaf(slot))
    }

    pub fn leaves(&mut self, n: usize) -> Vec<NodeId> {
        (0..n).map(|_| self.leaf()).collect()
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn celu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        assert!(alpha > 0.0, "CELU alpha must be positive");
        self.push(Op::Celu(a, alpha))
    }

    pub fn dot(&mut self, xs: &[NodeId], ys: &[NodeId]) -> NodeId {
        assert_eq!(xs.len(), ys.len(), "dot operand lists must match");
        self.push(Op::Dot(xs.into(), ys.into()))
    }

    /// Sum of a node list, folded left-to-right.
    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        let mut acc = match xs.first() {
            Some(&x) => x,
            None => return self.constant(0.0),
        };
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn finish(self, output: NodeId) -> ExpressionTape {
        assert!((output as usize) < self.ops.len(), "output node out of range");
        ExpressionTape { ops: self.ops, n_leaves: self.n_leaves, output }
    }
}

/// Dual number carrying a directional derivative through every primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualValue {
    pub primal: f64,
    pub tangent: f64,
}

/// Arithmetic shared by the plain and the forward-over-reverse sweeps.
trait Value: Copy {
    fn from_f64(x: f64) -> Self;
    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    fn square(self) -> Self;
    fn celu(self, alpha: f64) -> Self;
    /// Derivative of CELU evaluated at `self`, as a value of the same kind.
    fn celu_deriv(self, alpha: f64) -> Self;
    fn two(self) -> Self;
    fn is_finite(self) -> bool;
}

fn celu_f(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * ((x / alpha).exp() - 1.0)
    }
}

fn celu_d(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        (x / alpha).exp()
    }
}

fn celu_dd(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        0.0
    } else {
        (x / alpha).exp() / alpha
    }
}

impl Value for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    fn square(self) -> Self {
        self * self
    }
    fn celu(self, alpha: f64) -> Self {
        celu_f(self, alpha)
    }
    fn celu_deriv(self, alpha: f64) -> Self {
        celu_d(self, alpha)
    }
    fn two(self) -> Self {
        2.0 * self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Value for DualValue {
    fn from_f64(x: f64) -> Self {
        DualValue { primal: x, tangent: 0.0 }
    }
    fn add(self, rhs: Self) -> Self {
        DualValue { primal: self.primal + rhs.primal, tangent: self.tangent + rhs.tangent }
    }
    fn sub(self, rhs: Self) -> Self {
        DualValue { primal: self.primal - rhs.primal, tangent: self.tangent - rhs.tangent }
    }
    fn mul(self, rhs: Self) -> Self {
        DualValue {
            primal: self.primal * rhs.primal,
            tangent: self.primal * rhs.tangent + self.tangent * rhs.primal,
        }
    }
    fn square(self) -> Self {
        DualValue { primal: self.primal * self.primal, tangent: 2.0 * self.primal * self.tangent }
    }
    fn celu(self, alpha: f64) -> Self {
        DualValue {
            primal: celu_f(self.primal, alpha),
            tangent: celu_d(self.primal, alpha) * self.tangent,
        }
    }
    fn celu_deriv(self, alpha: f64) -> Self {
        DualValue {
            primal: celu_d(self.primal, alpha),
            tangent: celu_dd(self.primal, alpha) * self.tangent,
        }
    }
    fn two(self) -> Self {
        DualValue { primal: 2.0 * self.primal, tangent: 2.0 * self.tangent }
    }
    fn is_finite(self) -> bool {
        self.primal.is_finite() && self.tangent.is_finite()
    }
}

impl ExpressionTape {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    fn check_leaves(&self, leaf_values: &[f64]) -> Result<(), GradError> {
        if leaf_values.len() != self.n_leaves {
            return Err(GradError::MissingLeafValue {
                expected: self.n_leaves,
                given: leaf_values.len(),
            });
        }
        Ok(())
    }

    fn forward<V: Value>(&self, leaves: &[V]) -> Result<Vec<V>, GradError> {
        let mut vals: Vec<V> = Vec::with_capacity(self.ops.len());
        for (id, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Leaf(slot) => leaves[*slot as usize],
                Op::Const(c) => V::from_f64(*c),
                Op::Add(a, b) => vals[*a as usize].add(vals[*b as usize]),
                Op::Sub(a, b) => vals[*a as usize].sub(vals[*b as usize]),
                Op::Mul(a, b) => vals[*a as usize].mul(vals[*b as usize]),
                Op::Square(a) => vals[*a as usize].square(),
                Op::Celu(a, alpha) => vals[*a as usize].celu(*alpha),
                Op::Dot(xs, ys) => {
                    let mut acc = V::from_f64(0.0);
                    for (x, y) in xs.iter().zip(ys.iter()) {
                        acc = acc.add(vals[*x as usize].mul(vals[*y as usize]));
                    }
                    acc
                }
            };
            if !v.is_finite() {
                return Err(GradError::NonFinite { node: id as NodeId });
            }
            vals.push(v);
        }
        Ok(vals)
    }

    /// Reverse sweep over precomputed node values; returns per-leaf adjoints.
    fn reverse<V: Value>(&self, vals: &[V]) -> Vec<V> {
        let zero = V::from_f64(0.0);
        let mut adj = vec![zero; self.ops.len()];
        let mut leaf_adj = vec![zero; self.n_leaves];
        adj[self.output as usize] = V::from_f64(1.0);
        for (id, op) in self.ops.iter().enumerate().rev() {
            let a = adj[id];
            match op {
                Op::Leaf(slot) => {
                    let s = *slot as usize;
                    leaf_adj[s] = leaf_adj[s].add(a);
                }
                Op::Const(_) => {}
                Op::Add(x, y) => {
                    adj[*x as usize] = adj[*x as usize].add(a);
                    adj[*y as usize] = adj[*y as usize].add(a);
                }
                Op::Sub(x, y) => {
                    adj[*x as usize] = adj[*x as usize].add(a);
                    adj[*y as usize] = adj[*y as usize].sub(a);
                }
                Op::Mul(x, y) => {
                    adj[*x as usize] = adj[*x as usize].add(a.mul(vals[*y as usize]));
                    adj[*y as usize] = adj[*y as usize].add(a.mul(vals[*x as usize]));
                }
                Op::Square(x) => {
                    adj[*x as usize] = adj[*x as usize].add(a.mul(vals[*x as usize].two()));
                }
                Op::Celu(x, alpha) => {
                    let d = vals[*x as usize].celu_deriv(*alpha);
                    adj[*x as usize] = adj[*x as usize].add(a.mul(d));
                }
                Op::Dot(xs, ys) => {
                    for (x, y) in xs.iter().zip(ys.iter()) {
                        adj[*x as usize] = adj[*x as usize].add(a.mul(vals[*y as usize]));
                        adj[*y as usize] = adj[*y as usize].add(a.mul(vals[*x as usize]));
                    }
                }
            }
        }
        leaf_adj
    }

    /// Replays the recorded expression.
    pub fn evaluate(&self, leaf_values: &[f64]) -> Result<f64, GradError> {
        self.check_leaves(leaf_values)?;
        let vals = self.forward(leaf_values)?;
        Ok(vals[self.output as usize])
    }

    /// Exact reverse-mode derivative of the output w.r.t. every leaf.
    pub fn gradient_all(&self, leaf_values: &[f64]) -> Result<Vec<f64>, GradError> {
        self.check_leaves(leaf_values)?;
        let vals = self.forward(leaf_values)?;
        Ok(self.reverse(&vals))
    }

    /// Derivatives w.r.t. the requested leaf slots only.
    pub fn gradient(&self, leaf_values: &[f64], wrt: &[usize]) -> Result<Vec<f64>, GradError> {
        let all = self.gradient_all(leaf_values)?;
        Ok(wrt.iter().map(|&slot| all[slot]).collect())
    }

    /// Hessian-vector product H·v over all leaves, computed by forward-mode
    /// differentiation of the reverse pass.
    pub fn hvp(&self, leaf_values: &[f64], direction: &[f64]) -> Result<Vec<f64>, GradError> {
        self.check_leaves(leaf_values)?;
        if direction.len() != self.n_leaves {
            return Err(GradError::DirectionMismatch {
                expected: self.n_leaves,
                given: direction.len(),
            });
        }
        let leaves: Vec<DualValue> = leaf_values
            .iter()
            .zip(direction.iter())
            .map(|(&p, &t)| DualValue { primal: p, tangent: t })
            .collect();
        let vals = self.forward(&leaves)?;
        let adj = self.reverse(&vals);
        Ok(adj.into_iter().map(|d| d.tangent).collect())
    }
}

/// Central-difference estimate of the gradient of `f` at `x`.
///
/// Test oracle; kept independent of the tape machinery above.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    out
}
