//! Robot proximity graphs and the normalized-Laplacian shift operator.
//!
//! Everything here is dense: swarms of a few hundred robots at most, so an
//! `N x N` matrix is cheaper to reason about than a sparse format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Undirected simple graph over `num_nodes` robots.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: DMatrix<f64>,
}

impl Graph {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            edges: BTreeSet::new(),
            adjacency: DMatrix::zeros(num_nodes, num_nodes),
        }
    }

    /// Builds a graph from unordered pairs. Self loops are rejected,
    /// duplicates and reversed pairs collapse to one edge.
    pub fn from_edges(
        num_nodes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut g = Self::empty(num_nodes);
        for (i, j) in pairs {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self loop on node {i}")));
            }
            g.insert(i, j);
        }
        Ok(g)
    }

    fn insert(&mut self, i: usize, j: usize) {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.insert((a, b));
        self.adjacency[(a, b)] = 1.0;
        self.adjacency[(b, a)] = 1.0;
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.contains(&key)
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self, n: usize) -> Vec<usize> {
        (0..self.num_nodes)
            .filter(|&j| j != n && self.adjacency[(n, j)] != 0.0)
            .collect()
    }

    /// Hop distances from `source`; `None` for unreachable nodes.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes];
        let mut frontier = vec![source];
        dist[source] = Some(0);
        let mut hops = 0;
        while !frontier.is_empty() {
            hops += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for v in self.neighbors(u) {
                    if dist[v].is_none() {
                        dist[v] = Some(hops);
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// Relabels nodes so that new node `i` is old node `p.source(i)`.
    pub fn permuted(&self, p: &Permutation) -> Result<Self> {
        check_perm_size(p, self.num_nodes)?;
        let inverse = p.inverse();
        Graph::from_edges(
            self.num_nodes,
            self.edges
                .iter()
                .map(|&(i, j)| (inverse.source(i), inverse.source(j))),
        )
    }

    /// Edge-list text: an optional `# nodes N` header, then one sorted,
    /// zero-indexed `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.num_nodes);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut declared = None;
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut words = rest.split_whitespace();
                if words.next() == Some("nodes") {
                    let n = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| {
                        Error::InvalidInput(format!("line {}: bad node header", lineno + 1))
                    })?;
                    declared = Some(n);
                }
                continue;
            }
            let mut words = line.split_whitespace();
            let parse = |w: Option<&str>| -> Result<usize> {
                w.and_then(|w| w.parse().ok()).ok_or_else(|| {
                    Error::InvalidInput(format!("line {}: expected `i j`", lineno + 1))
                })
            };
            let i = parse(words.next())?;
            let j = parse(words.next())?;
            if words.next().is_some() {
                return Err(Error::InvalidInput(format!(
                    "line {}: trailing tokens",
                    lineno + 1
                )));
            }
            pairs.push((i, j));
        }
        let inferred = pairs.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
        Graph::from_edges(declared.unwrap_or(inferred), pairs)
    }
}

fn check_points(positions: &[Point]) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::InvalidInput("graph needs at least one node".into()));
    }
    if let Some(n) = positions.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite position for node {n}")));
    }
    Ok(())
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn distance_sq(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Disk graph: robots closer than `lambda` (inclusive) are connected.
pub fn build_epsilon_graph(positions: &[Point], lambda: f64) -> Result<Graph> {
    check_points(positions)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let n = positions.len();
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if distance(positions[i], positions[j]) <= lambda {
                g.insert(i, j);
            }
        }
    }
    Ok(g)
}

/// Each robot links to its `k` nearest robots; the result is symmetrized by
/// union. Equidistant candidates resolve toward the lower index.
pub fn build_knn_graph(positions: &[Point], k: usize) -> Result<Graph> {
    check_points(positions)?;
    let n = positions.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "k-nearest graph needs 1 <= k < N, got k={k} with N={n}"
        )));
    }
    let mut g = Graph::empty(n);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (distance_sq(positions[i], positions[j]), j)),
        );
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k) {
            g.insert(i, j);
        }
    }
    Ok(g)
}

/// Graph shift operator together with the node degrees it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftOperator {
    matrix: DMatrix<f64>,
    degree: Vec<f64>,
}

impl ShiftOperator {
    /// Wraps an arbitrary square matrix, mostly for tests and custom operators.
    pub fn from_matrix(matrix: DMatrix<f64>, degree: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() || degree.len() != matrix.nrows() {
            return Err(Error::dims(
                "shift operator",
                format!("square {0}x{0} with {0} degrees", degree.len()),
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        Ok(Self { matrix, degree })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
            degree: vec![0.0; n],
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `S = I - D^{-1/2} A D^{-1/2}`, with `D^{-1/2}` taken as zero on isolated
/// nodes so their rows stay identity rows.
pub fn normalized_laplacian(g: &Graph) -> ShiftOperator {
    let n = g.num_nodes();
    let degree: Vec<f64> = g.degrees().into_iter().map(|d| d as f64).collect();
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut s = DMatrix::identity(n, n);
    for (i, j) in g.edges() {
        let w = inv_sqrt[i] * inv_sqrt[j];
        s[(i, j)] = -w;
        s[(j, i)] = -w;
    }
    ShiftOperator { matrix: s, degree }
}

/// `[S^0, S^1, ..., S^K]`, shared cheaply between forward caches.
#[derive(Clone, Debug)]
pub struct ShiftPowers(Arc<Vec<DMatrix<f64>>>);

impl ShiftPowers {
    pub fn taps(&self) -> usize {
        self.0.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.0[0].nrows()
    }

    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.0[k]
    }

    pub fn as_slice(&self) -> &[DMatrix<f64>] {
        &self.0
    }
}

pub fn shift_powers(s: &ShiftOperator, taps: usize) -> ShiftPowers {
    let n = s.num_nodes();
    let mut powers = Vec::with_capacity(taps + 1);
    powers.push(DMatrix::identity(n, n));
    for k in 1..=taps {
        let next = &s.matrix * &powers[k - 1];
        powers.push(next);
    }
    ShiftPowers(Arc::new(powers))
}

/// One-hop exchange `S x`.
pub fn aggregate(s: &ShiftOperator, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != s.num_nodes() {
        return Err(Error::dims("aggregate", s.num_nodes(), x.nrows()));
    }
    Ok(&s.matrix * x)
}

/// Node relabeling. `source(i)` names the old node that becomes node `i`, so
/// with `P[source(i), i] = 1` applying the permutation to a signal is `P^T x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    source: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            source: (0..n).collect(),
        }
    }

    pub fn new(source: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; source.len()];
        for &s in &source {
            if s >= source.len() || std::mem::replace(&mut seen[s], true) {
                return Err(Error::InvalidInput(format!("{source:?} is not a bijection")));
            }
        }
        Ok(Self { source })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut source: Vec<usize> = (0..n).collect();
        source.shuffle(rng);
        Self { source }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self, i: usize) -> usize {
        self.source[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.source.len()];
        for (i, &s) in self.source.iter().enumerate() {
            inv[s] = i;
        }
        Self { source: inv }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(n, n);
        for (i, &s) in self.source.iter().enumerate() {
            p[(s, i)] = 1.0;
        }
        p
    }

    /// `P^T x`: row `i` of the result is row `source(i)` of `x`.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.len() {
            return Err(Error::dims("permutation", self.len(), x.nrows()));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| x[(self.source[i], c)]))
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.len() {
            return Err(Error::dims("permutation", self.len(), items.len()));
        }
        Ok(self.source.iter().map(|&s| items[s].clone()).collect())
    }
}

fn check_perm_size(p: &Permutation, n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::dims("permutation", n, p.len()));
    }
    Ok(())
}

/// `P^T S P` with the degree vector relabeled the same way.
pub fn permute_graph(s: &ShiftOperator, p: &Permutation) -> Result<ShiftOperator> {
    check_perm_size(p, s.num_nodes())?;
    let pm = p.matrix();
    let matrix = pm.transpose() * &s.matrix * &pm;
    let degree = p.apply(&s.degree)?;
    Ok(ShiftOperator { matrix, degree })
}
