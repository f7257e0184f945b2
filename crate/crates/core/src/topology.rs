//! Communication graphs and their doubly-stochastic mixing matrices.
//!
//! Nodes are `0..n`. Edges are stored once as `(i, j)` with `i < j`; the
//! self-weight of every node is produced by the weight rule, never by a loop
//! edge.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Retry budget for rejection-sampling a connected Erdős–Rényi graph.
pub const ER_MAX_ATTEMPTS: usize = 1000;

/// Tolerance on row and column sums accepted as doubly stochastic.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphKind {
    Ring,
    Complete,
    /// Periodic `k x k` grid; requires `n = k^2`.
    Torus2d,
    /// Node 0 is the hub.
    Star,
    /// `G(n, p)` conditioned on connectivity.
    ErdosRenyi { p: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an edge list, normalising orientation and
    /// duplicates. Self-loops and disconnected graphs are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n < 2 {
            return Err(invalid("n", format!("need at least 2 users, got {n}")));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(invalid("edges", format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(invalid("edges", format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let g = Graph {
            n,
            edges: set.into_iter().collect(),
        };
        if !g.is_connected() {
            return Err(Error::Disconnected { n });
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        connected(self.n, &self.edges)
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                stack.push(u);
            }
        }
    }
    count == n
}

/// Constructs one of the supported graph families on `n` nodes.
///
/// Erdős–Rényi draws use `rng::seeded(seed)`: pairs `(i, j)`, `i < j`, are
/// visited in lexicographic order and kept when a uniform `f64` falls below
/// `p`. Disconnected draws are discarded and the same stream continues, for
/// at most [`ER_MAX_ATTEMPTS`] draws.
pub fn build_graph(kind: &GraphKind, n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(invalid("n", format!("need at least 2 users, got {n}")));
    }
    let edges: Vec<(usize, usize)> = match *kind {
        GraphKind::Ring => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        GraphKind::Complete => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
        GraphKind::Star => (1..n).map(|i| (0, i)).collect(),
        GraphKind::Torus2d => {
            let k = integer_sqrt(n);
            if k * k != n {
                return Err(invalid("n", format!("torus2d needs a perfect square, got {n}")));
            }
            let mut e = Vec::with_capacity(2 * n);
            for r in 0..k {
                for c in 0..k {
                    let v = r * k + c;
                    e.push((v, r * k + (c + 1) % k));
                    e.push((v, ((r + 1) % k) * k + c));
                }
            }
            e
        }
        GraphKind::ErdosRenyi { p, seed } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid("p", format!("edge probability must lie in (0, 1], got {p}")));
            }
            let mut rng = rng::seeded(seed);
            let mut found = None;
            for _ in 0..ER_MAX_ATTEMPTS {
                let mut e = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < p {
                            e.push((i, j));
                        }
                    }
                }
                if connected(n, &e) {
                    found = Some(e);
                    break;
                }
            }
            found.ok_or(Error::ConnectivityBudget {
                attempts: ER_MAX_ATTEMPTS,
            })?
        }
    };
    Graph::from_edges(n, edges)
}

fn integer_sqrt(n: usize) -> usize {
    let mut k = libm::sqrt(n as f64) as usize;
    while k * k > n {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= n {
        k += 1;
    }
    k
}

/// A validated doubly-stochastic weight matrix with its cached spectral
/// quantity `lambda = ||W - J||`.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    lambda: f64,
    /// Per row: nonzero `(column, weight)` pairs in ascending column order.
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Wraps an explicit matrix after checking nonnegativity, double
    /// stochasticity and `lambda < 1`.
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self> {
        let lambda = second_singular_value(&weights)?;
        if lambda >= 1.0 - 1e-12 {
            return Err(invalid("weights", format!("lambda = {lambda} is not below 1 (matrix not primitive)")));
        }
        let rows = (0..weights.nrows())
            .map(|i| {
                (0..weights.ncols())
                    .filter_map(|j| {
                        let w = weights[(i, j)];
                        (w != 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(MixingMatrix {
            weights,
            lambda,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Nonzero entries of row `i`, ascending by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `out_i = sum_j w_ij input_j` over `n x d` row-major blocks.
    pub fn mix(&self, input: &[f64], d: usize, out: &mut [f64]) {
        for (i, dst) in out.chunks_exact_mut(d).enumerate() {
            dst.iter_mut().for_each(|v| *v = 0.0);
            for &(j, w) in &self.rows[i] {
                for (o, x) in dst.iter_mut().zip(&input[j * d..(j + 1) * d]) {
                    *o += w * x;
                }
            }
        }
    }

    pub fn check(&self) -> MixingReport {
        check_mixing_properties(&self.weights, self.lambda)
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, with the remaining mass on the diagonal.
pub fn metropolis_weights(g: &Graph) -> MixingMatrix {
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for &(a, b) in g.edges() {
        let v = 1.0 / (1 + deg[a].max(deg[b])) as f64;
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_matrix(w).expect("Metropolis weights of a connected graph satisfy A1")
}

fn averaging(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0 / n as f64)
}

fn stochastic_residual(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let r: f64 = w.row(i).iter().sum();
        let c: f64 = w.column(i).iter().sum();
        worst = worst.max((r - 1.0).abs()).max((c - 1.0).abs());
    }
    worst
}

/// `||W - J||` in the spectral norm, i.e. the second largest singular value
/// of a doubly stochastic `W`, from a dense SVD.
pub fn second_singular_value(w: &DMatrix<f64>) -> Result<f64> {
    if w.nrows() != w.ncols() {
        return Err(Error::DimensionMismatch {
            expected: w.nrows(),
            got: w.ncols(),
        });
    }
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(invalid("weights", "entries must be finite and nonnegative"));
    }
    let residual = stochastic_residual(w);
    if residual > STOCHASTIC_TOL {
        return Err(Error::NotStochastic { residual });
    }
    let gap = w - averaging(w.nrows());
    let svd = gap.svd(false, false);
    Ok(svd.singular_values.iter().cloned().fold(0.0, f64::max))
}

/// Residuals of the standard mixing identities. The spectral-norm residual
/// uses a symmetric eigen-decomposition of `(W-J)^T (W-J)`, independent of
/// the SVD that produced `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingReport {
    /// `||W 1 - 1||`
    pub w1_residual: f64,
    /// `||J W - J||_F`
    pub jw_residual: f64,
    /// `||W J - J||_F`
    pub wj_residual: f64,
    /// `| ||W - J|| - lambda |`
    pub norm_gap_residual: f64,
}

impl MixingReport {
    pub fn max_residual(&self) -> f64 {
        self.w1_residual
            .max(self.jw_residual)
            .max(self.wj_residual)
            .max(self.norm_gap_residual)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

pub fn check_mixing_properties(w: &DMatrix<f64>, lambda: f64) -> MixingReport {
    let n = w.nrows();
    let j = averaging(n);
    let ones = nalgebra::DVector::from_element(n, 1.0);
    let w1_residual = (w * &ones - &ones).norm();
    let jw_residual = (&j * w - &j).norm();
    let wj_residual = (w * &j - &j).norm();
    let gap = w - &j;
    let gram = gap.transpose() * &gap;
    let top = gram
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let norm_gap_residual = (libm::sqrt(top.max(0.0)) - lambda).abs();
    MixingReport {
        w1_residual,
        jw_residual,
        wj_residual,
        norm_gap_residual,
    }
}
