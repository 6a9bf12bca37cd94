//! Network topologies, combination matrices and Perron eigenvectors.
//!
//! A combination matrix `A` is left-stochastic: entry `(ℓ, k)` is the weight
//! agent `k` puts on the state received from `ℓ`, and every column sums to
//! one. Together with strong connectivity and at least one self-loop this
//! makes `A` primitive, so it has a unique positive right eigenvector for the
//! eigenvalue one (the Perron vector).

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("combination matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("combination matrix is empty")]
    Empty,
    #[error("entry ({row}, {col}) is negative or not finite: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("column {column} sums to {sum}, expected 1")]
    NotColumnStochastic { column: usize, sum: f64 },
    #[error("network is not strongly connected: no directed path from {from} to {to}")]
    NotStronglyConnected { from: usize, to: usize },
    #[error("network has no self-loop")]
    NoSelfLoop,
    #[error("node index {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("iteration did not converge within {max_iters} iterations")]
    NoConvergence { max_iters: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Directed graph with optional self-loops. An edge `(ℓ, k)` means `ℓ ∈ N_k`,
/// i.e. information flows from `ℓ` to `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    self_loops: Vec<bool>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: BTreeSet::new(),
            self_loops: vec![false; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds the directed edge `from → to`. `from == to` sets the self-loop.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<(), TopologyError> {
        for index in [from, to] {
            if index >= self.n {
                return Err(TopologyError::NodeOutOfRange { index, n: self.n });
            }
        }
        if from == to {
            self.self_loops[from] = true;
        } else {
            self.edges.insert((from, to));
        }
        Ok(())
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) -> Result<(), TopologyError> {
        self.add_edge(a, b)?;
        self.add_edge(b, a)
    }

    pub fn add_self_loops(&mut self) {
        self.self_loops.iter_mut().for_each(|s| *s = true);
    }

    pub fn has_self_loop(&self, k: usize) -> bool {
        self.self_loops[k]
    }

    /// Directed non-loop edges in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// In-neighborhood `N_k` (ascending, including `k` when it has a self-loop).
    pub fn in_neighbors(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, to)| to == k)
            .map(|&(from, _)| from)
            .collect();
        if self.self_loops[k] {
            out.push(k);
        }
        out.sort_unstable();
        out
    }

    /// Number of distinct neighbors, excluding the self-loop.
    pub fn degree(&self, k: usize) -> usize {
        self.edges.iter().filter(|&&(_, to)| to == k).count()
    }

    /// Serializes as an edge list: a `nodes N` header followed by one
    /// `from to` line per directed edge (self-loops as `k k`).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        writeln!(out, "nodes {}", self.n).unwrap();
        let mut all: Vec<(usize, usize)> = self.edges.iter().copied().collect();
        all.extend((0..self.n).filter(|&k| self.self_loops[k]).map(|k| (k, k)));
        all.sort_unstable();
        for (a, b) in all {
            writeln!(out, "{a} {b}").unwrap();
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut adj: Option<Adjacency> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| TopologyError::Parse {
                line: line_no,
                message,
            };
            let mut parts = line.split_whitespace();
            let first = parts.next().unwrap();
            if first == "nodes" {
                if adj.is_some() {
                    return Err(parse_err("duplicate nodes header".into()));
                }
                let n = parts
                    .next()
                    .ok_or_else(|| parse_err("missing node count".into()))?
                    .parse::<usize>()
                    .map_err(|e| parse_err(e.to_string()))?;
                adj = Some(Adjacency::new(n));
                continue;
            }
            let graph = adj
                .as_mut()
                .ok_or_else(|| parse_err("edge before nodes header".into()))?;
            let from = first.parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
            let to = parts
                .next()
                .ok_or_else(|| parse_err("edge needs two endpoints".into()))?
                .parse::<usize>()
                .map_err(|e| parse_err(e.to_string()))?;
            if parts.next().is_some() {
                return Err(parse_err("trailing tokens".into()));
            }
            graph.add_edge(from, to)?;
        }
        adj.ok_or(TopologyError::Parse {
            line: 0,
            message: "missing nodes header".into(),
        })
    }
}

/// Validated left-stochastic primitive combination matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix<T: Real> {
    a: DMatrix<T>,
}

impl<T: Real> CombinationMatrix<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Weight `a_{ℓk}`.
    pub fn weight(&self, from: usize, to: usize) -> T {
        self.a[(from, to)]
    }

    /// In-neighborhood of `k` (entries with `a_{ℓk} > 0`), ascending.
    pub fn in_neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&l| self.a[(l, k)] > T::zero()).collect()
    }

    /// Out-neighborhood of `ℓ` (agents that listen to `ℓ`), ascending.
    pub fn out_neighbors(&self, l: usize) -> Vec<usize> {
        (0..self.n()).filter(|&k| self.a[(l, k)] > T::zero()).collect()
    }

    /// Dense CSV export: row `ℓ`, column `k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.a.row_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Parses a dense CSV matrix (no header).
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>, TopologyError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TopologyError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(TopologyError::NotSquare { rows: n, cols: bad.len() });
    }
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}

/// Validates the combination-matrix assumptions.
pub fn validate<T: Real>(a: DMatrix<T>) -> Result<CombinationMatrix<T>, TopologyError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(TopologyError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(TopologyError::Empty);
    }
    let n = rows;
    for k in 0..n {
        for l in 0..n {
            let v = a[(l, k)];
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(TopologyError::NegativeEntry {
                    row: l,
                    col: k,
                    value: v.to_f64_lossy(),
                });
            }
        }
    }
    let tol = T::tolerance(1e-12, n as f64);
    for k in 0..n {
        let sum = a.column(k).iter().fold(T::zero(), |acc, v| acc + *v);
        if (sum - T::one()).abs() > tol {
            return Err(TopologyError::NotColumnStochastic {
                column: k,
                sum: sum.to_f64_lossy(),
            });
        }
    }
    let linked = |from: usize, to: usize| a[(from, to)] > T::zero();
    if let Some(to) = unreachable_from(n, 0, |l, k| linked(l, k)) {
        return Err(TopologyError::NotStronglyConnected { from: 0, to });
    }
    if let Some(from) = unreachable_from(n, 0, |l, k| linked(k, l)) {
        return Err(TopologyError::NotStronglyConnected { from, to: 0 });
    }
    if !(0..n).any(|m| a[(m, m)] > T::zero()) {
        return Err(TopologyError::NoSelfLoop);
    }
    Ok(CombinationMatrix { a })
}

/// First node not reachable from `start` along `edge(from, to)`.
fn unreachable_from(n: usize, start: usize, edge: impl Fn(usize, usize) -> bool) -> Option<usize> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && edge(u, v) {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Positive, sum-one eigenvector of `A` for the eigenvalue one.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronVector<T: Real> {
    pi: DVector<T>,
}

impl<T: Real> PerronVector<T> {
    pub fn as_slice(&self) -> &[T] {
        self.pi.as_slice()
    }

    pub fn vector(&self) -> &DVector<T> {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// `‖Aπ − π‖∞`.
    pub fn residual(&self, matrix: &CombinationMatrix<T>) -> T {
        (matrix.matrix() * &self.pi - &self.pi).amax()
    }
}

fn normalized<T: Real>(mut v: DVector<T>) -> DVector<T> {
    let s = v.sum();
    v /= s;
    v
}

/// Power iteration `π ← Aπ` from the uniform vector until the ℓ∞ change is
/// below `tol`.
pub fn perron<T: Real>(
    matrix: &CombinationMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<PerronVector<T>, TopologyError> {
    let n = matrix.n();
    let a = matrix.matrix();
    let mut x = DVector::from_element(n, T::one() / T::of_usize(n));
    let mut next = DVector::zeros(n);
    for _ in 0..max_iters {
        a.mul_to(&x, &mut next);
        let s = next.sum();
        next /= s;
        let change = (&next - &x).amax();
        std::mem::swap(&mut x, &mut next);
        if change < tol {
            return Ok(PerronVector { pi: x });
        }
    }
    Err(TopologyError::NoConvergence { max_iters })
}

/// Result of the consensus-based Perron estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusEstimate<T: Real> {
    pub perron: PerronVector<T>,
    /// Iterations used by each of the `N` consensus runs.
    pub iterations: Vec<usize>,
}

/// Estimates `π` with `N` averaging-consensus runs `y_t = Aᵀ y_{t−1}`, the
/// `k`-th started from the canonical vector `e_k`; every agent's value in run
/// `k` converges to `π_k`.
pub fn consensus_perron_estimate<T: Real>(
    matrix: &CombinationMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<ConsensusEstimate<T>, TopologyError> {
    let n = matrix.n();
    let at = matrix.matrix().transpose();
    let mut pi = DVector::zeros(n);
    let mut iterations = Vec::with_capacity(n);
    for k in 0..n {
        let mut y = DVector::from_fn(n, |i, _| if i == k { T::one() } else { T::zero() });
        let mut next = DVector::zeros(n);
        let mut converged = None;
        for t in 1..=max_iters {
            at.mul_to(&y, &mut next);
            std::mem::swap(&mut y, &mut next);
            let spread = y.max() - y.min();
            if spread < tol {
                converged = Some(t);
                break;
            }
        }
        let t = converged.ok_or(TopologyError::NoConvergence { max_iters })?;
        pi[k] = y.mean();
        iterations.push(t);
    }
    Ok(ConsensusEstimate {
        perron: PerronVector { pi: normalized(pi) },
        iterations,
    })
}

/// Simplified sequential-edge Bollobás–Riordan preferential attachment.
///
/// Nodes `0` and `1` start connected; every further node draws
/// `attachment_edges` targets among the existing nodes with probability
/// proportional to their current degree (updated after every edge, duplicate
/// targets collapsed). Edges are made symmetric and every node gets a
/// self-loop.
pub fn bollobas_riordan<R: Rng + ?Sized>(
    n: usize,
    attachment_edges: usize,
    rng: &mut R,
) -> Result<Adjacency, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidParameters(format!("need n >= 2, got {n}")));
    }
    if attachment_edges == 0 {
        return Err(TopologyError::InvalidParameters("attachment_edges must be >= 1".into()));
    }
    let mut adj = Adjacency::new(n);
    // every edge endpoint appears once, so uniform picks are degree-weighted
    let mut endpoints: Vec<usize> = vec![0, 1];
    adj.add_undirected(0, 1)?;
    for node in 2..n {
        let mut targets = BTreeSet::new();
        for _ in 0..attachment_edges {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if targets.insert(t) {
                adj.add_undirected(node, t)?;
                endpoints.push(node);
                endpoints.push(t);
            }
        }
    }
    adj.add_self_loops();
    Ok(adj)
}

/// Uniform averaging: `a_{ℓk} = 1/|N_k|` for `ℓ ∈ N_k`.
pub fn averaging_rule<T: Real>(adj: &Adjacency) -> Result<CombinationMatrix<T>, TopologyError> {
    let n = adj.n();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let nbrs = adj.in_neighbors(k);
        if nbrs.is_empty() {
            return Err(TopologyError::NotStronglyConnected { from: (k + 1) % n, to: k });
        }
        let w = T::one() / T::of_usize(nbrs.len());
        for l in nbrs {
            a[(l, k)] = w;
        }
    }
    validate(a)
}

/// Relative degree: `a_{ℓk} = n_ℓ / Σ_{m∈N_k} n_m` with `n_ℓ = |N_ℓ|`.
pub fn relative_degree_rule<T: Real>(adj: &Adjacency) -> Result<CombinationMatrix<T>, TopologyError> {
    let n = adj.n();
    let sizes: Vec<usize> = (0..n).map(|k| adj.in_neighbors(k).len()).collect();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let nbrs = adj.in_neighbors(k);
        if nbrs.is_empty() {
            return Err(TopologyError::NotStronglyConnected { from: (k + 1) % n, to: k });
        }
        let total: usize = nbrs.iter().map(|&l| sizes[l]).sum();
        for l in nbrs {
            a[(l, k)] = T::of_usize(sizes[l]) / T::of_usize(total);
        }
    }
    validate(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, rows, data)
    }

    #[test]
    fn validate_examples() {
        assert!(validate(m(2, &[0.5, 0.5, 0.5, 0.5])).is_ok());
        assert_eq!(validate(m(2, &[0.0, 1.0, 1.0, 0.0])), Err(TopologyError::NoSelfLoop));
        let isolated = m(3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(validate(isolated), Err(TopologyError::NotStronglyConnected { .. })));
        assert!(matches!(
            validate(m(2, &[0.5, 0.5, 0.6, 0.5])),
            Err(TopologyError::NotColumnStochastic { column: 0, .. })
        ));
        assert!(matches!(
            validate(DMatrix::<f64>::zeros(2, 3)),
            Err(TopologyError::NotSquare { .. })
        ));
    }

    #[test]
    fn one_way_reachability_is_reported() {
        // 0 → 1 only: node 0 cannot be reached from 1
        let a = m(2, &[0.5, 0.5, 0.5, 0.5]);
        let mut b = a.clone();
        b[(1, 0)] = 0.0;
        b[(0, 0)] = 1.0;
        assert_eq!(validate(b), Err(TopologyError::NotStronglyConnected { from: 1, to: 0 }));
    }

    #[test]
    fn perron_of_doubly_stochastic_is_uniform() {
        let a = validate(m(3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5])).unwrap();
        let p = perron(&a, 1e-14, 10_000).unwrap();
        for v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
        let c = consensus_perron_estimate(&a, 1e-14, 10_000).unwrap();
        for v in c.perron.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let one = validate(m(1, &[1.0])).unwrap();
        assert_eq!(perron(&one, 1e-14, 10).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn rules_on_small_graphs() {
        let mut complete = Adjacency::new(4);
        for i in 0..4 {
            for j in 0..4 {
                complete.add_edge(i, j).unwrap();
            }
        }
        let a = averaging_rule::<f64>(&complete).unwrap();
        assert!(a.matrix().iter().all(|v| *v == 0.25));
        let r = relative_degree_rule::<f64>(&complete).unwrap();
        assert_eq!(a, r);

        let mut star = Adjacency::new(4);
        for leaf in 1..4 {
            star.add_undirected(0, leaf).unwrap();
        }
        star.add_self_loops();
        let a = averaging_rule::<f64>(&star).unwrap();
        assert_eq!(a.weight(2, 2), 0.5);
        assert_eq!(a.weight(0, 2), 0.5);
        assert_eq!(a.weight(1, 2), 0.0);

        let mut path = Adjacency::new(3);
        path.add_undirected(0, 1).unwrap();
        path.add_undirected(1, 2).unwrap();
        path.add_self_loops();
        let r = relative_degree_rule::<f64>(&path).unwrap();
        assert!((r.weight(0, 1) - 2.0 / 7.0).abs() < 1e-15);
        assert!((r.weight(1, 1) - 3.0 / 7.0).abs() < 1e-15);
        assert!((r.weight(2, 1) - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn bollobas_riordan_small_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = bollobas_riordan(2, 1, &mut rng).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert!(g.has_self_loop(0) && g.has_self_loop(1));

        let a = bollobas_riordan(10, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = bollobas_riordan(10, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert!(bollobas_riordan(1, 1, &mut rng).is_err());
        assert!(bollobas_riordan(5, 0, &mut rng).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = bollobas_riordan(8, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("nodes 8\n"));
        assert_eq!(Adjacency::from_edge_list(&text).unwrap(), g);
        assert!(matches!(
            Adjacency::from_edge_list("0 1\n"),
            Err(TopologyError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Adjacency::from_edge_list("nodes 2\n0 5\n"),
            Err(TopologyError::NodeOutOfRange { index: 5, n: 2 })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let g = bollobas_riordan(6, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let a = relative_degree_rule::<f64>(&g).unwrap();
        let back = parse_matrix_csv(&a.to_csv()).unwrap();
        assert_eq!(&back, a.matrix());
    }
}
