//! Reverse-mode differentiation over a small vocabulary of vector
//! primitives.
//!
//! A [`DiffGraph`] is an eager tape: every builder call evaluates its node
//! immediately and appends it. [`DiffGraph::gradient`] then sweeps the tape
//! backwards from a scalar output. Binary elementwise ops broadcast a
//! length-1 operand against a vector.
//!
//! Gradient-stopped nodes ([`DiffGraph::stop_gradient`] and the
//! order-statistic threshold) pass values forward but nothing backward.

/// Handle to a node on a [`DiffGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Constant,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Recip(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Silu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Dot(NodeId, NodeId),
    /// Row-wise dot products of a `rows × cols` row-major matrix with a vector.
    MatVec {
        matrix: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Concat(Vec<NodeId>),
    /// Value of the `rank`-th largest entry (1-based); gradient-stopped.
    OrderStatistic,
    StopGradient,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct DiffGraph {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a graph, indexed by [`NodeId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, node: NodeId) -> &[f64] {
        &self.adjoints[node.0]
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl DiffGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, node: NodeId) -> &[f64] {
        &self.nodes[node.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, node: NodeId) -> f64 {
        let v = self.value(node);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v[0]
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn scalar_constant(&mut self, value: f64) -> NodeId {
        self.constant(vec![value])
    }

    fn broadcast(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.len(), vb.len()) {
            (n, m) if n == m => va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect(),
            (1, _) => vb.iter().map(|y| f(va[0], *y)).collect(),
            (_, 1) => va.iter().map(|x| f(*x, vb[0])).collect(),
            (n, m) => panic!("incompatible operand lengths {n} and {m}"),
        }
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(op, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.broadcast(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.broadcast(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Sigmoid-weighted linear unit, `x·σ(x)`.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "dot of unequal lengths");
        let v = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), vec![v])
    }

    pub fn matvec(&mut self, matrix: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let (m, xv) = (self.value(matrix), self.value(x));
        assert_eq!(m.len(), rows * cols, "matrix node has wrong size");
        assert_eq!(xv.len(), cols, "vector length does not match matrix");
        let v = (0..rows)
            .map(|r| m[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec { matrix, x, rows, cols }, v)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let v = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.push(Op::Concat(parts.to_vec()), v)
    }

    /// The `rank`-th largest entry of `a` (1-based), with its gradient
    /// stopped.
    pub fn order_statistic(&mut self, a: NodeId, rank: usize) -> NodeId {
        let v = kth_largest(self.value(a), rank);
        self.push(Op::OrderStatistic, vec![v])
    }

    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).to_vec();
        self.push(Op::StopGradient, v)
    }

    // Composite helpers built from the primitives above.

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.scalar_constant(c);
        self.mul(a, k)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.scalar_constant(c);
        self.add(a, k)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let ones = self.constant(vec![1.0; self.value(a).len()]);
        self.dot(a, ones)
    }

    /// Reverse sweep from the scalar node `output`.
    pub fn gradient(&self, output: NodeId) -> Gradients {
        assert_eq!(self.value(output).len(), 1, "gradient requires a scalar output");
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[output.0][0] = 1.0;

        for idx in (0..=output.0).rev() {
            if adj[idx].iter().all(|g| *g == 0.0) {
                continue;
            }
            let node = &self.nodes[idx];
            let g = std::mem::take(&mut adj[idx]);
            match &node.op {
                Op::Input | Op::Constant | Op::OrderStatistic | Op::StopGradient => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate(&mut adj[b.0], &g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * vb[if vb.len() == 1 { 0 } else { i }])
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * va[if va.len() == 1 { 0 } else { i }])
                        .collect();
                    accumulate(&mut adj[a.0], &ga);
                    accumulate(&mut adj[b.0], &gb);
                }
                Op::Recip(a) => {
                    let y = &node.value;
                    let local: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| -gi * yi * yi).collect();
                    accumulate(&mut adj[a.0], &local);
                }
                Op::Exp(a) => {
                    let local: Vec<f64> = g.iter().zip(&node.value).map(|(gi, yi)| gi * yi).collect();
                    accumulate(&mut adj[a.0], &local);
                }
                Op::Sigmoid(a) => {
                    let local: Vec<f64> = g.iter().zip(&node.value).map(|(gi, s)| gi * s * (1.0 - s)).collect();
                    accumulate(&mut adj[a.0], &local);
                }
                Op::Silu(a) => {
                    let x = &self.nodes[a.0].value;
                    let local: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gi, xi)| {
                            let s = sigmoid(*xi);
                            gi * (s + xi * s * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut adj[a.0], &local);
                }
                Op::Sin(a) => {
                    let x = &self.nodes[a.0].value;
                    let local: Vec<f64> = g.iter().zip(x).map(|(gi, xi)| gi * xi.cos()).collect();
                    accumulate(&mut adj[a.0], &local);
                }
                Op::Cos(a) => {
                    let x = &self.nodes[a.0].value;
                    let local: Vec<f64> = g.iter().zip(x).map(|(gi, xi)| -gi * xi.sin()).collect();
                    accumulate(&mut adj[a.0], &local);
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = vb.iter().map(|y| g[0] * y).collect();
                    let gb: Vec<f64> = va.iter().map(|x| g[0] * x).collect();
                    accumulate(&mut adj[a.0], &ga);
                    accumulate(&mut adj[b.0], &gb);
                }
                Op::MatVec { matrix, x, rows, cols } => {
                    let (m, xv) = (&self.nodes[matrix.0].value, &self.nodes[x.0].value);
                    let mut gm = vec![0.0; rows * cols];
                    let mut gx = vec![0.0; *cols];
                    for r in 0..*rows {
                        let row = &m[r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            gm[r * cols + c] = g[r] * xv[c];
                            gx[c] += g[r] * row[c];
                        }
                    }
                    accumulate(&mut adj[matrix.0], &gm);
                    accumulate(&mut adj[x.0], &gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        let slice = g[offset..offset + n].to_vec();
                        accumulate(&mut adj[p.0], &slice);
                        offset += n;
                    }
                }
            }
            adj[idx] = g;
        }
        Gradients { adjoints: adj }
    }
}

/// Adds `g` into `target`, summing over the broadcast axis when `target` is
/// a scalar and `g` is not.
fn accumulate(target: &mut [f64], g: &[f64]) {
    if target.len() == g.len() {
        for (t, gi) in target.iter_mut().zip(g) {
            *t += gi;
        }
    } else if target.len() == 1 {
        target[0] += g.iter().sum::<f64>();
    } else {
        panic!("adjoint shape mismatch: {} vs {}", target.len(), g.len());
    }
}

/// The `rank`-th largest value (1-based).
pub fn kth_largest(values: &[f64], rank: usize) -> f64 {
    assert!(rank >= 1 && rank <= values.len(), "rank {rank} out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[rank - 1]
}
