//! Append-only tape of tensor operations with reverse-mode differentiation.
//!
//! The unusual requirement here is that `derive` does not produce numbers:
//! it appends new nodes to the tape, so a gradient is itself an expression
//! that can be differentiated again. The trainer relies on this to push
//! sensitivities through a chain of SGD updates, where each update already
//! contains a gradient subgraph.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to one node of one tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Expr {
    tape: u64,
    node: usize,
}

impl Expr {
    /// Stable node id within its tape.
    pub fn id(&self) -> usize {
        self.node
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Bindable input. May carry a default value; `Bindings` can override it.
    Leaf { value: Option<Tensor> },
    /// Embedded constant; never differentiated into.
    Const { value: Tensor },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale { a: usize, factor: f64 },
    Relu(usize),
    Tanh(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Acos(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    /// 1.0 where the input is > 0; derivative defined as zero everywhere.
    PositiveMask(usize),
    /// 1.0 strictly inside (lo, hi); derivative defined as zero everywhere.
    IntervalMask { a: usize, lo: f64, hi: f64 },
    Sum(usize),
    /// Scalar replicated to `shape` (the node's own shape).
    Broadcast(usize),
    /// Same data, new shape (the node's own shape).
    Reshape(usize),
    MatMul(usize, usize),
    Transpose(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Const { .. } => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Recip(..) => "recip",
            Op::Acos(..) => "acos",
            Op::Clamp { .. } => "clamp",
            Op::PositiveMask(..) => "positive_mask",
            Op::IntervalMask { .. } => "interval_mask",
            Op::Sum(..) => "sum",
            Op::Broadcast(..) => "broadcast",
            Op::Reshape(..) => "reshape",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
        }
    }

    fn parents(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf { .. } | Op::Const { .. } => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                [Some(a), Some(b)]
            }
            Op::Scale { a, .. }
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::Acos(a)
            | Op::Clamp { a, .. }
            | Op::PositiveMask(a)
            | Op::IntervalMask { a, .. }
            | Op::Sum(a)
            | Op::Broadcast(a)
            | Op::Reshape(a)
            | Op::Transpose(a) => [Some(a), None],
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Leaf-to-tensor overrides used at evaluation time.
#[derive(Default)]
pub struct Bindings {
    map: HashMap<usize, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    pub fn bind(&mut self, leaf: Expr, value: Tensor) -> &mut Self {
        self.map.insert(leaf.node, value);
        self
    }

    fn get(&self, node: usize) -> Option<&Tensor> {
        self.map.get(&node)
    }
}

/// Per-node value cache. Reusable across `evaluate_cached` calls on the
/// same tape as long as the bindings do not change; the tape only grows, so
/// cached prefixes stay valid after further `derive` calls.
#[derive(Default)]
pub struct EvalCache {
    values: Vec<Option<Tensor>>,
}

impl EvalCache {
    pub fn new() -> Self {
        EvalCache::default()
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape(&self, e: Expr) -> &[usize] {
        &self.nodes[e.node].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> Expr {
        self.nodes.push(Node { op, shape });
        Expr {
            tape: self.id,
            node: self.nodes.len() - 1,
        }
    }

    fn check_tape(&self, e: Expr) -> Result<()> {
        if e.tape != self.id {
            return Err(Error::TapeMismatch);
        }
        Ok(())
    }

    // ── Graph construction ──────────────────────────────────────────────

    /// Input node carrying a value; the value can be overridden at
    /// evaluation time through `Bindings`.
    pub fn leaf(&mut self, value: Tensor) -> Expr {
        let shape = value.shape().to_vec();
        self.push(Op::Leaf { value: Some(value) }, shape)
    }

    /// Input node with no value; it must be bound before evaluation.
    pub fn placeholder(&mut self, shape: Vec<usize>) -> Expr {
        self.push(Op::Leaf { value: None }, shape)
    }

    pub fn constant(&mut self, value: Tensor) -> Expr {
        let shape = value.shape().to_vec();
        self.push(Op::Const { value }, shape)
    }

    pub fn scalar(&mut self, value: f64) -> Expr {
        self.constant(Tensor::scalar(value))
    }

    /// Output shape of an elementwise binary op; broadcasting is limited to
    /// scalar-with-tensor.
    fn elementwise_shape(&self, op: &'static str, a: Expr, b: Expr) -> Result<Vec<usize>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(sa.to_vec())
        } else if sa.is_empty() {
            Ok(sb.to_vec())
        } else if sb.is_empty() {
            Ok(sa.to_vec())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        self.check_tape(b)?;
        let shape = self.elementwise_shape("add", a, b)?;
        Ok(self.push(Op::Add(a.node, b.node), shape))
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        self.check_tape(b)?;
        let shape = self.elementwise_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a.node, b.node), shape))
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        self.check_tape(b)?;
        let shape = self.elementwise_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a.node, b.node), shape))
    }

    pub fn scale(&mut self, a: Expr, factor: f64) -> Result<Expr> {
        self.check_tape(a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Scale { a: a.node, factor }, shape))
    }

    pub fn relu(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::Relu(n))
    }

    pub fn tanh(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::Tanh(n))
    }

    pub fn square(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::Square(n))
    }

    pub fn sqrt(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::Sqrt(n))
    }

    pub fn recip(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::Recip(n))
    }

    pub fn acos(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::Acos(n))
    }

    pub fn clamp(&mut self, a: Expr, lo: f64, hi: f64) -> Result<Expr> {
        self.check_tape(a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Clamp { a: a.node, lo, hi }, shape))
    }

    fn positive_mask(&mut self, a: Expr) -> Result<Expr> {
        self.unary(a, |n| Op::PositiveMask(n))
    }

    fn interval_mask(&mut self, a: Expr, lo: f64, hi: f64) -> Result<Expr> {
        self.check_tape(a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::IntervalMask { a: a.node, lo, hi }, shape))
    }

    fn unary(&mut self, a: Expr, make: impl FnOnce(usize) -> Op) -> Result<Expr> {
        self.check_tape(a)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(make(a.node), shape))
    }

    /// Sum of all entries; result is scalar-shaped.
    pub fn sum(&mut self, a: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        Ok(self.push(Op::Sum(a.node), vec![]))
    }

    /// Mean of all entries, built as scale(sum(a), 1/numel).
    pub fn mean(&mut self, a: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        let numel: usize = self.shape(a).iter().product();
        if numel == 0 {
            return Err(Error::EmptyTensor { op: "mean" });
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / numel as f64)
    }

    /// Scalar replicated to the given shape.
    pub fn broadcast(&mut self, a: Expr, shape: Vec<usize>) -> Result<Expr> {
        self.check_tape(a)?;
        if !self.shape(a).is_empty() {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        Ok(self.push(Op::Broadcast(a.node), shape))
    }

    pub fn reshape(&mut self, a: Expr, shape: Vec<usize>) -> Result<Expr> {
        self.check_tape(a)?;
        let from: usize = self.shape(a).iter().product();
        let to: usize = shape.iter().product();
        if from != to {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        Ok(self.push(Op::Reshape(a.node), shape))
    }

    pub fn matmul(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        self.check_tape(b)?;
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul(a.node, b.node), shape))
    }

    pub fn transpose(&mut self, a: Expr) -> Result<Expr> {
        self.check_tape(a)?;
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: sa,
                rhs: vec![],
            });
        }
        Ok(self.push(Op::Transpose(a.node), vec![sa[1], sa[0]]))
    }

    // ── Differentiation ─────────────────────────────────────────────────

    /// Reverse sweep from a scalar `output`, emitting gradient expressions
    /// for each `wrt` node. A `wrt` that does not contribute to `output`
    /// yields a zero expression. The returned expressions live on this tape
    /// and may themselves be passed to `derive` again.
    pub fn derive(&mut self, output: Expr, wrt: &[Expr]) -> Result<Vec<Expr>> {
        self.check_tape(output)?;
        for w in wrt {
            self.check_tape(*w)?;
        }
        if !self.shape(output).is_empty() {
            return Err(Error::NonScalarOutput {
                shape: self.shape(output).to_vec(),
            });
        }

        // ancestors of the output, found by an explicit stack walk
        let mut ancestor = vec![false; output.node + 1];
        let mut stack = vec![output.node];
        while let Some(n) = stack.pop() {
            if ancestor[n] {
                continue;
            }
            ancestor[n] = true;
            for p in self.nodes[n].op.parents().into_iter().flatten() {
                if !ancestor[p] {
                    stack.push(p);
                }
            }
        }

        let mut adjoint: Vec<Option<Expr>> = vec![None; output.node + 1];
        adjoint[output.node] = Some(self.scalar(1.0));

        for i in (0..=output.node).rev() {
            if !ancestor[i] {
                continue;
            }
            let g = match adjoint[i] {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { .. } | Op::Const { .. } => {}
                // masks are defined with zero derivative everywhere
                Op::PositiveMask(_) | Op::IntervalMask { .. } => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    self.accumulate(&mut adjoint, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    let neg = self.scale(g, -1.0)?;
                    self.accumulate(&mut adjoint, b, neg)?;
                }
                Op::Mul(a, b) => {
                    let (ea, eb) = (self.expr(a), self.expr(b));
                    let ca = self.mul(g, eb)?;
                    self.accumulate(&mut adjoint, a, ca)?;
                    let cb = self.mul(g, ea)?;
                    self.accumulate(&mut adjoint, b, cb)?;
                }
                Op::Scale { a, factor } => {
                    let c = self.scale(g, factor)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Relu(a) => {
                    let ea = self.expr(a);
                    let mask = self.positive_mask(ea)?;
                    let c = self.mul(g, mask)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Tanh(a) => {
                    // d tanh = 1 - tanh^2, reusing this node's output
                    let y = self.expr(i);
                    let y2 = self.square(y)?;
                    let one = self.scalar(1.0);
                    let d = self.sub(one, y2)?;
                    let c = self.mul(g, d)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Square(a) => {
                    let ea = self.expr(a);
                    let two_a = self.scale(ea, 2.0)?;
                    let c = self.mul(g, two_a)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Sqrt(a) => {
                    // d sqrt = 1 / (2 sqrt(x)), reusing this node's output
                    let y = self.expr(i);
                    let inv = self.recip(y)?;
                    let half = self.scale(inv, 0.5)?;
                    let c = self.mul(g, half)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Recip(a) => {
                    // d(1/x) = -1/x^2
                    let y = self.expr(i);
                    let y2 = self.square(y)?;
                    let gy2 = self.mul(g, y2)?;
                    let c = self.scale(gy2, -1.0)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Acos(a) => {
                    // d acos = -1 / sqrt(1 - x^2)
                    let ea = self.expr(a);
                    let x2 = self.square(ea)?;
                    let one = self.scalar(1.0);
                    let under = self.sub(one, x2)?;
                    let root = self.sqrt(under)?;
                    let inv = self.recip(root)?;
                    let gi = self.mul(g, inv)?;
                    let c = self.scale(gi, -1.0)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Clamp { a, lo, hi } => {
                    let ea = self.expr(a);
                    let mask = self.interval_mask(ea, lo, hi)?;
                    let c = self.mul(g, mask)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Sum(a) => {
                    let shape = self.nodes[a].shape.clone();
                    let c = if shape.is_empty() {
                        g
                    } else {
                        self.broadcast(g, shape)?
                    };
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Broadcast(a) => {
                    let c = self.sum(g)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a].shape.clone();
                    let c = self.reshape(g, shape)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::MatMul(a, b) => {
                    let (ea, eb) = (self.expr(a), self.expr(b));
                    let bt = self.transpose(eb)?;
                    let ca = self.matmul(g, bt)?;
                    self.accumulate(&mut adjoint, a, ca)?;
                    let at = self.transpose(ea)?;
                    let cb = self.matmul(at, g)?;
                    self.accumulate(&mut adjoint, b, cb)?;
                }
                Op::Transpose(a) => {
                    let c = self.transpose(g)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
            }
        }

        wrt.iter()
            .map(|w| match adjoint.get(w.node).copied().flatten() {
                Some(e) => Ok(e),
                None => {
                    let shape = self.shape(*w).to_vec();
                    Ok(self.constant(Tensor::zeros(shape)))
                }
            })
            .collect()
    }

    fn expr(&self, node: usize) -> Expr {
        Expr {
            tape: self.id,
            node,
        }
    }

    fn accumulate(
        &mut self,
        adjoint: &mut [Option<Expr>],
        parent: usize,
        contrib: Expr,
    ) -> Result<()> {
        let pshape = &self.nodes[parent].shape;
        let cshape = &self.nodes[contrib.node].shape;
        let fitted = if cshape == pshape {
            contrib
        } else if pshape.is_empty() {
            // parent was broadcast into an elementwise op: fold back
            self.sum(contrib)?
        } else {
            return Err(Error::ShapeMismatch {
                op: "adjoint",
                lhs: pshape.clone(),
                rhs: cshape.clone(),
            });
        };
        adjoint[parent] = Some(match adjoint[parent] {
            None => fitted,
            Some(prev) => self.add(prev, fitted)?,
        });
        Ok(())
    }

    // ── Evaluation ──────────────────────────────────────────────────────

    /// Numeric forward evaluation. Deterministic: identical bindings give
    /// bit-identical outputs.
    pub fn evaluate(&self, exprs: &[Expr], bindings: &Bindings) -> Result<Vec<Tensor>> {
        let mut cache = EvalCache::new();
        self.evaluate_cached(exprs, bindings, &mut cache)
    }

    /// Evaluation with a caller-owned value cache. The cache must be
    /// cleared whenever the bindings change.
    pub fn evaluate_cached(
        &self,
        exprs: &[Expr],
        bindings: &Bindings,
        cache: &mut EvalCache,
    ) -> Result<Vec<Tensor>> {
        for e in exprs {
            self.check_tape(*e)?;
        }
        cache.values.resize(self.nodes.len(), None);

        // mark the nodes that still need computing
        let mut needed = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = exprs.iter().map(|e| e.node).collect();
        while let Some(n) = stack.pop() {
            if needed[n] || cache.values[n].is_some() {
                continue;
            }
            needed[n] = true;
            for p in self.nodes[n].op.parents().into_iter().flatten() {
                if !needed[p] && cache.values[p].is_none() {
                    stack.push(p);
                }
            }
        }

        for i in 0..self.nodes.len() {
            if !needed[i] || cache.values[i].is_some() {
                continue;
            }
            let value = self.eval_node(i, bindings, &cache.values)?;
            if !value.all_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
            cache.values[i] = Some(value);
        }

        Ok(exprs
            .iter()
            .map(|e| cache.values[e.node].clone().expect("computed above"))
            .collect())
    }

    fn eval_node(&self, i: usize, bindings: &Bindings, values: &[Option<Tensor>]) -> Result<Tensor> {
        let val = |n: usize| -> &Tensor { values[n].as_ref().expect("parent evaluated first") };
        let node = &self.nodes[i];
        let out = match &node.op {
            Op::Leaf { value } => {
                let t = match bindings.get(i) {
                    Some(bound) => bound,
                    None => value.as_ref().ok_or(Error::UnboundLeaf { node: i })?,
                };
                if t.shape() != node.shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "binding",
                        lhs: node.shape.clone(),
                        rhs: t.shape().to_vec(),
                    });
                }
                t.clone()
            }
            Op::Const { value } => value.clone(),
            Op::Add(a, b) => elementwise(val(*a), val(*b), &node.shape, |x, y| x + y),
            Op::Sub(a, b) => elementwise(val(*a), val(*b), &node.shape, |x, y| x - y),
            Op::Mul(a, b) => elementwise(val(*a), val(*b), &node.shape, |x, y| x * y),
            Op::Scale { a, factor } => map(val(*a), |x| x * factor),
            Op::Relu(a) => map(val(*a), |x| x.max(0.0)),
            Op::Tanh(a) => map(val(*a), |x| x.tanh()),
            Op::Square(a) => map(val(*a), |x| x * x),
            Op::Sqrt(a) => map(val(*a), |x| x.sqrt()),
            Op::Recip(a) => map(val(*a), |x| 1.0 / x),
            Op::Acos(a) => map(val(*a), |x| x.acos()),
            Op::Clamp { a, lo, hi } => map(val(*a), |x| x.clamp(*lo, *hi)),
            Op::PositiveMask(a) => map(val(*a), |x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::IntervalMask { a, lo, hi } => {
                map(val(*a), |x| if x > *lo && x < *hi { 1.0 } else { 0.0 })
            }
            Op::Sum(a) => Tensor::scalar(val(*a).data().iter().sum()),
            Op::Broadcast(a) => Tensor::filled(node.shape.clone(), val(*a).item()),
            Op::Reshape(a) => val(*a).reshaped(node.shape.clone())?,
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut out = vec![0.0; m * n];
                let (da, db) = (ta.data(), tb.data());
                for r in 0..m {
                    for c in 0..n {
                        let mut acc = 0.0;
                        for p in 0..k {
                            acc += da[r * k + p] * db[p * n + c];
                        }
                        out[r * n + c] = acc;
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            Op::Transpose(a) => {
                let t = val(*a);
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let d = t.data();
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        out[c * m + r] = d[r * n + c];
                    }
                }
                Tensor::new(vec![n, m], out)?
            }
        };
        Ok(out)
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        .expect("same shape as input")
}

fn elementwise(a: &Tensor, b: &Tensor, out_shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = if a.shape() == b.shape() {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    } else if a.is_scalar() {
        let x = a.item();
        b.data().iter().map(|&y| f(x, y)).collect()
    } else {
        let y = b.item();
        a.data().iter().map(|&x| f(x, y)).collect()
    };
    Tensor::new(out_shape.to_vec(), data).expect("shape checked at construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(tape: &Tape, e: Expr) -> Tensor {
        tape.evaluate(&[e], &Bindings::new()).unwrap().remove(0)
    }

    #[test]
    fn leaf_identity_and_zero() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(3.0));
        assert_eq!(eval1(&t, a).item(), 3.0);
        let z = t.leaf(Tensor::zeros(vec![2, 2]));
        assert_eq!(eval1(&t, z).data(), &[0.0; 4]);
    }

    #[test]
    fn add_two_and_two() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(2.0));
        let b = t.leaf(Tensor::scalar(2.0));
        let s = t.add(a, b).unwrap();
        assert_eq!(eval1(&t, s).item(), 4.0);
    }

    #[test]
    fn mul_square_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        assert_eq!(eval1(&t, y).item(), 9.0);
    }

    #[test]
    fn relu_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(eval1(&t, y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_hand_checked() {
        // 2x3 times 3x1, against a product computed by hand
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.leaf(Tensor::matrix(3, 1, vec![7.0, 8.0, 9.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        let out = eval1(&t, c);
        assert_eq!(out.shape(), &[2, 1]);
        // row 0: 1*7 + 2*8 + 3*9 = 50; row 1: 4*7 + 5*8 + 6*9 = 122
        assert_eq!(out.data(), &[50.0, 122.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(vec![2, 3]));
        let b = t.leaf(Tensor::zeros(vec![3, 3]));
        match t.add(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![3, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn tape_mixing_is_an_error() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0));
        let b = t2.leaf(Tensor::scalar(1.0));
        assert!(matches!(t1.add(a, b), Err(Error::TapeMismatch)));
    }

    #[test]
    fn derivative_of_square() {
        // d/dx x^2 at x=3 -> 6
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.derive(y, &[x]).unwrap()[0];
        assert_eq!(eval1(&t, g).item(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        // x^3 = x * x^2; d2/dx2 at x=2 -> 12, by applying derive twice
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let x2 = t.square(x).unwrap();
        let x3 = t.mul(x, x2).unwrap();
        let g1 = t.derive(x3, &[x]).unwrap()[0];
        let g2 = t.derive(g1, &[x]).unwrap()[0];
        assert_eq!(eval1(&t, g2).item(), 12.0);
    }

    #[test]
    fn shared_leaf_sums_contributions() {
        // f = x*x + 3x -> df/dx = 2x + 3
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.5));
        let sq = t.mul(x, x).unwrap();
        let three_x = t.scale(x, 3.0).unwrap();
        let f = t.add(sq, three_x).unwrap();
        let g = t.derive(f, &[x]).unwrap()[0];
        assert_eq!(eval1(&t, g).item(), 6.0);
    }

    #[test]
    fn gradient_of_unrelated_node_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        let z = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.square(x).unwrap();
        let g = t.derive(y, &[z]).unwrap()[0];
        let out = eval1(&t, g);
        assert_eq!(out.shape(), &[2]);
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn derive_rejects_non_scalar_output() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = t.square(x).unwrap();
        assert!(matches!(
            t.derive(y, &[x]),
            Err(Error::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.1, -0.7, 2.3]));
        let h = t.tanh(x).unwrap();
        let s = t.square(h).unwrap();
        let m = t.mean(s).unwrap();
        let a = eval1(&t, m).item();
        let b = eval1(&t, m).item();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let mut t = Tape::new();
        let p = t.placeholder(vec![2]);
        let s = t.sum(p).unwrap();
        assert!(matches!(
            t.evaluate(&[s], &Bindings::new()),
            Err(Error::UnboundLeaf { .. })
        ));
    }

    #[test]
    fn binding_overrides_leaf_value() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        let y = t.square(x).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(5.0));
        let out = t.evaluate(&[y], &b).unwrap();
        assert_eq!(out[0].item(), 25.0);
    }

    #[test]
    fn non_finite_intermediate_identifies_node() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let r = t.recip(x).unwrap();
        match t.evaluate(&[r], &Bindings::new()) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, r.id());
                assert_eq!(op, "recip");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn derive_appends_without_changing_existing_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.2));
        let y = t.tanh(x).unwrap();
        let m = t.sum(y).unwrap();
        let before = eval1(&t, m).item();
        let count_before = t.node_count();
        let _ = t.derive(m, &[x]).unwrap();
        assert!(t.node_count() > count_before);
        let after = eval1(&t, m).item();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn scalar_broadcast_in_elementwise_ops() {
        let mut t = Tape::new();
        let v = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let c = t.scalar(10.0);
        let s = t.add(c, v).unwrap();
        assert_eq!(eval1(&t, s).data(), &[11.0, 12.0, 13.0]);
        // gradient w.r.t. the broadcast scalar folds back by summation
        let total = t.sum(s).unwrap();
        let v2 = t.mul(v, v).unwrap();
        let mixed = t.sum(v2).unwrap();
        let all = t.add(total, mixed).unwrap();
        let g = t.derive(all, &[v]).unwrap()[0];
        assert_eq!(eval1(&t, g).data(), &[3.0, 5.0, 7.0]);
    }
}
