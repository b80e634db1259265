//! Shared test oracles: a tiny explicit-graph IR that can be lowered onto
//! a tape *and* differentiated by an independent numeric reverse sweep,
//! plus a seeded random-graph generator. The numeric sweep shares no code
//! with the tape's symbolic `derive`, which is the point.

use hybrid_gradient::autodiff::{Expr, Tape};
use hybrid_gradient::rng::SeedString;
use hybrid_gradient::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Debug)]
pub enum TOp {
    Leaf(Vec<usize>),
    Const(Vec<usize>, f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Acos(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    MatMul(usize, usize),
    Transpose(usize),
}

#[derive(Clone, Debug, Default)]
pub struct TestGraph {
    pub ops: Vec<TOp>,
    pub shapes: Vec<Vec<usize>>,
    pub leaves: Vec<usize>,
}

impl TestGraph {
    fn push(&mut self, op: TOp) -> usize {
        let shape = match &op {
            TOp::Leaf(s) | TOp::Const(s, _) => s.clone(),
            TOp::Add(a, b) | TOp::Sub(a, b) | TOp::Mul(a, b) => {
                let (sa, sb) = (&self.shapes[*a], &self.shapes[*b]);
                if sa.is_empty() { sb.clone() } else { sa.clone() }
            }
            TOp::Scale(a, _)
            | TOp::Relu(a)
            | TOp::Tanh(a)
            | TOp::Square(a)
            | TOp::Sqrt(a)
            | TOp::Recip(a)
            | TOp::Acos(a)
            | TOp::Clamp(a, _, _) => self.shapes[*a].clone(),
            TOp::Sum(_) | TOp::Mean(_) => vec![],
            TOp::MatMul(a, b) => vec![self.shapes[*a][0], self.shapes[*b][1]],
            TOp::Transpose(a) => vec![self.shapes[*a][1], self.shapes[*a][0]],
        };
        if matches!(op, TOp::Leaf(_)) {
            self.leaves.push(self.ops.len());
        }
        self.shapes.push(shape);
        self.ops.push(op);
        self.ops.len() - 1
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.leaves
            .iter()
            .map(|&l| self.shapes[l].iter().product())
            .collect()
    }

    /// Numeric forward pass over explicit leaf values.
    pub fn forward(&self, leaf_values: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.ops.len());
        let mut leaf_idx = 0;
        for op in &self.ops {
            let v = match op {
                TOp::Leaf(_) => {
                    leaf_idx += 1;
                    leaf_values[leaf_idx - 1].clone()
                }
                TOp::Const(s, c) => vec![*c; s.iter().product()],
                TOp::Add(a, b) => broadcast_zip(&values[*a], &values[*b], |x, y| x + y),
                TOp::Sub(a, b) => broadcast_zip(&values[*a], &values[*b], |x, y| x - y),
                TOp::Mul(a, b) => broadcast_zip(&values[*a], &values[*b], |x, y| x * y),
                TOp::Scale(a, c) => values[*a].iter().map(|x| x * c).collect(),
                TOp::Relu(a) => values[*a].iter().map(|x| x.max(0.0)).collect(),
                TOp::Tanh(a) => values[*a].iter().map(|x| x.tanh()).collect(),
                TOp::Square(a) => values[*a].iter().map(|x| x * x).collect(),
                TOp::Sqrt(a) => values[*a].iter().map(|x| x.sqrt()).collect(),
                TOp::Recip(a) => values[*a].iter().map(|x| 1.0 / x).collect(),
                TOp::Acos(a) => values[*a].iter().map(|x| x.acos()).collect(),
                TOp::Clamp(a, lo, hi) => values[*a].iter().map(|x| x.clamp(*lo, *hi)).collect(),
                TOp::Sum(a) => vec![values[*a].iter().sum()],
                TOp::Mean(a) => vec![values[*a].iter().sum::<f64>() / values[*a].len() as f64],
                TOp::MatMul(a, b) => {
                    let (m, k) = (self.shapes[*a][0], self.shapes[*a][1]);
                    let n = self.shapes[*b][1];
                    let mut out = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            for p in 0..k {
                                out[r * n + c] += values[*a][r * k + p] * values[*b][p * n + c];
                            }
                        }
                    }
                    out
                }
                TOp::Transpose(a) => {
                    let (m, n) = (self.shapes[*a][0], self.shapes[*a][1]);
                    let mut out = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            out[c * m + r] = values[*a][r * n + c];
                        }
                    }
                    out
                }
            };
            values.push(v);
        }
        values
    }

    /// Independent numeric reverse sweep seeded at the (scalar) last node;
    /// returns one gradient vector per leaf.
    pub fn numeric_gradients(&self, leaf_values: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let values = self.forward(leaf_values);
        let n = self.ops.len();
        let mut adj: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();
        *adj[n - 1].last_mut().expect("scalar output") = 1.0;

        for i in (0..n).rev() {
            let g = adj[i].clone();
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            match &self.ops[i] {
                TOp::Leaf(_) | TOp::Const(..) => {}
                TOp::Add(a, b) => {
                    spread(&mut adj, *a, &g, 1.0, &values, None);
                    spread(&mut adj, *b, &g, 1.0, &values, None);
                }
                TOp::Sub(a, b) => {
                    spread(&mut adj, *a, &g, 1.0, &values, None);
                    spread(&mut adj, *b, &g, -1.0, &values, None);
                }
                TOp::Mul(a, b) => {
                    let bv = expand(&values[*b], g.len());
                    let av = expand(&values[*a], g.len());
                    spread(&mut adj, *a, &g, 1.0, &values, Some(&bv));
                    spread(&mut adj, *b, &g, 1.0, &values, Some(&av));
                }
                TOp::Scale(a, c) => {
                    for (t, gv) in adj[*a].iter_mut().zip(&g) {
                        *t += gv * c;
                    }
                }
                TOp::Relu(a) => {
                    for (j, gv) in g.iter().enumerate() {
                        if values[*a][j] > 0.0 {
                            adj[*a][j] += gv;
                        }
                    }
                }
                TOp::Tanh(a) => {
                    for (j, gv) in g.iter().enumerate() {
                        let t = values[*a][j].tanh();
                        adj[*a][j] += gv * (1.0 - t * t);
                    }
                }
                TOp::Square(a) => {
                    for (j, gv) in g.iter().enumerate() {
                        adj[*a][j] += gv * 2.0 * values[*a][j];
                    }
                }
                TOp::Sqrt(a) => {
                    for (j, gv) in g.iter().enumerate() {
                        adj[*a][j] += gv * 0.5 / values[*a][j].sqrt();
                    }
                }
                TOp::Recip(a) => {
                    for (j, gv) in g.iter().enumerate() {
                        let x = values[*a][j];
                        adj[*a][j] -= gv / (x * x);
                    }
                }
                TOp::Acos(a) => {
                    for (j, gv) in g.iter().enumerate() {
                        let x = values[*a][j];
                        adj[*a][j] -= gv / (1.0 - x * x).sqrt();
                    }
                }
                TOp::Clamp(a, lo, hi) => {
                    for (j, gv) in g.iter().enumerate() {
                        let x = values[*a][j];
                        if x > *lo && x < *hi {
                            adj[*a][j] += gv;
                        }
                    }
                }
                TOp::Sum(a) => {
                    for t in adj[*a].iter_mut() {
                        *t += g[0];
                    }
                }
                TOp::Mean(a) => {
                    let k = adj[*a].len() as f64;
                    for t in adj[*a].iter_mut() {
                        *t += g[0] / k;
                    }
                }
                TOp::MatMul(a, b) => {
                    let (m, k) = (self.shapes[*a][0], self.shapes[*a][1]);
                    let n = self.shapes[*b][1];
                    for r in 0..m {
                        for p in 0..k {
                            for c in 0..n {
                                adj[*a][r * k + p] += g[r * n + c] * values[*b][p * n + c];
                            }
                        }
                    }
                    for p in 0..k {
                        for c in 0..n {
                            for r in 0..m {
                                adj[*b][p * n + c] += values[*a][r * k + p] * g[r * n + c];
                            }
                        }
                    }
                }
                TOp::Transpose(a) => {
                    let (m, n) = (self.shapes[*a][0], self.shapes[*a][1]);
                    for r in 0..m {
                        for c in 0..n {
                            adj[*a][r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
        }
        self.leaves.iter().map(|&l| adj[l].clone()).collect()
    }

    /// Lower onto a tape; returns the output expression and leaf handles.
    pub fn lower(&self, tape: &mut Tape, leaf_values: &[Vec<f64>]) -> (Expr, Vec<Expr>) {
        let mut exprs: Vec<Expr> = Vec::with_capacity(self.ops.len());
        let mut leaf_exprs = Vec::new();
        let mut leaf_idx = 0;
        for (i, op) in self.ops.iter().enumerate() {
            let e = match op {
                TOp::Leaf(shape) => {
                    let t = Tensor::new(shape.clone(), leaf_values[leaf_idx].clone()).unwrap();
                    leaf_idx += 1;
                    let e = tape.leaf(t);
                    leaf_exprs.push(e);
                    e
                }
                TOp::Const(shape, c) => tape.constant(Tensor::filled(shape.clone(), *c)),
                TOp::Add(a, b) => tape.add(exprs[*a], exprs[*b]).unwrap(),
                TOp::Sub(a, b) => tape.sub(exprs[*a], exprs[*b]).unwrap(),
                TOp::Mul(a, b) => tape.mul(exprs[*a], exprs[*b]).unwrap(),
                TOp::Scale(a, c) => tape.scale(exprs[*a], *c).unwrap(),
                TOp::Relu(a) => tape.relu(exprs[*a]).unwrap(),
                TOp::Tanh(a) => tape.tanh(exprs[*a]).unwrap(),
                TOp::Square(a) => tape.square(exprs[*a]).unwrap(),
                TOp::Sqrt(a) => tape.sqrt(exprs[*a]).unwrap(),
                TOp::Recip(a) => tape.recip(exprs[*a]).unwrap(),
                TOp::Acos(a) => tape.acos(exprs[*a]).unwrap(),
                TOp::Clamp(a, lo, hi) => tape.clamp(exprs[*a], *lo, *hi).unwrap(),
                TOp::Sum(a) => tape.sum(exprs[*a]).unwrap(),
                TOp::Mean(a) => tape.mean(exprs[*a]).unwrap(),
                TOp::MatMul(a, b) => tape.matmul(exprs[*a], exprs[*b]).unwrap(),
                TOp::Transpose(a) => tape.transpose(exprs[*a]).unwrap(),
            };
            debug_assert_eq!(tape.shape(e), self.shapes[i].as_slice());
            exprs.push(e);
        }
        (*exprs.last().unwrap(), leaf_exprs)
    }
}

fn expand(v: &[f64], len: usize) -> Vec<f64> {
    if v.len() == len {
        v.to_vec()
    } else {
        vec![v[0]; len]
    }
}

fn broadcast_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
    } else if a.len() == 1 {
        b.iter().map(|y| f(a[0], *y)).collect()
    } else {
        a.iter().map(|x| f(*x, b[0])).collect()
    }
}

fn spread(
    adj: &mut [Vec<f64>],
    target: usize,
    g: &[f64],
    sign: f64,
    _values: &[Vec<f64>],
    factor: Option<&[f64]>,
) {
    if adj[target].len() == g.len() {
        for (j, gv) in g.iter().enumerate() {
            let f = factor.map(|f| f[j]).unwrap_or(1.0);
            adj[target][j] += sign * gv * f;
        }
    } else {
        // scalar operand of a broadcast op: fold the whole gradient back
        let total: f64 = g
            .iter()
            .enumerate()
            .map(|(j, gv)| sign * gv * factor.map(|f| f[j]).unwrap_or(1.0))
            .sum();
        adj[target][0] += total;
    }
}

/// Random domain-safe composite graph with at most `max_nodes` nodes,
/// reduced to a scalar. Unary ops with restricted domains get their
/// operands squashed first so finite differences stay well-posed.
pub fn random_graph(seed: SeedString, max_nodes: usize) -> TestGraph {
    let mut rng = seed.rng();
    let mut g = TestGraph::default();
    let shapes: [Vec<usize>; 3] = [vec![], vec![3], vec![2, 3]];

    let n_leaves = rng.gen_range(1..=3.min(max_nodes / 3));
    for _ in 0..n_leaves {
        let s = shapes[rng.gen_range(0..3)].clone();
        g.push(TOp::Leaf(s));
    }

    while g.ops.len() < max_nodes.saturating_sub(4) {
        let a = rng.gen_range(0..g.ops.len());
        match rng.gen_range(0..10) {
            0 => {
                // matching-shape or scalar partner for elementwise ops
                let b = (0..g.ops.len())
                    .filter(|&j| {
                        g.shapes[j] == g.shapes[a]
                            || g.shapes[j].is_empty()
                            || g.shapes[a].is_empty()
                    })
                    .max_by_key(|&j| j);
                if let Some(b) = b {
                    let op = match rng.gen_range(0..3) {
                        0 => TOp::Add(a, b),
                        1 => TOp::Sub(a, b),
                        _ => TOp::Mul(a, b),
                    };
                    g.push(op);
                }
            }
            1 => {
                g.push(TOp::Scale(a, rng.gen_range(-1.5..1.5)));
            }
            2 => {
                g.push(TOp::Tanh(a));
            }
            3 => {
                g.push(TOp::Square(a));
            }
            4 => {
                // relu shifted off zero so the kink does not sit on the
                // finite-difference stencil
                let s = g.push(TOp::Scale(a, 1.0));
                let c = g.push(TOp::Const(g.shapes[s].clone(), 0.37));
                let sum = g.push(TOp::Add(s, c));
                g.push(TOp::Relu(sum));
            }
            5 => {
                // sqrt over a positive quantity
                let sq = g.push(TOp::Square(a));
                let c = g.push(TOp::Const(g.shapes[sq].clone(), 0.4));
                let pos = g.push(TOp::Add(sq, c));
                g.push(TOp::Sqrt(pos));
            }
            6 => {
                let sq = g.push(TOp::Square(a));
                let c = g.push(TOp::Const(g.shapes[sq].clone(), 0.6));
                let pos = g.push(TOp::Add(sq, c));
                g.push(TOp::Recip(pos));
            }
            7 => {
                // acos over a squashed operand away from the clamp edges
                let t = g.push(TOp::Tanh(a));
                let s = g.push(TOp::Scale(t, 0.8));
                let cl = g.push(TOp::Clamp(s, -0.9, 0.9));
                g.push(TOp::Acos(cl));
            }
            8 => {
                if g.shapes[a].len() == 2 {
                    g.push(TOp::Transpose(a));
                }
            }
            _ => {
                // matmul over any pair of compatible rank-2 nodes
                let pair = (0..g.ops.len()).rev().find_map(|x| {
                    if g.shapes[x].len() != 2 {
                        return None;
                    }
                    (0..g.ops.len())
                        .rev()
                        .find(|&y| g.shapes[y].len() == 2 && g.shapes[y][0] == g.shapes[x][1])
                        .map(|y| (x, y))
                });
                if let Some((x, y)) = pair {
                    g.push(TOp::MatMul(x, y));
                }
            }
        }
    }

    let last = g.ops.len() - 1;
    g.push(TOp::Mean(last));
    g
}

/// Leaf values drawn uniformly from [-2, 2].
pub fn random_leaf_values(g: &TestGraph, seed: SeedString) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    g.leaves
        .iter()
        .map(|&l| {
            let n: usize = g.shapes[l].iter().product();
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
        })
        .collect()
}
