//! Graphs, graph shift operators and locality primitives.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weighted graph on nodes `0..N`.
///
/// An edge `(j, i, w)` lets node `i` read from node `j` with weight `w`,
/// i.e. it contributes `S[i][j] = w` to the adjacency shift operator.
/// Undirected graphs store both orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    n_nodes: usize,
    edges: BTreeMap<(usize, usize), T>,
    coordinates: Option<Vec<[f64; 2]>>,
}

impl<T: Scalar> Graph<T> {
    pub fn empty(n_nodes: usize) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        Ok(Self {
            n_nodes,
            edges: BTreeMap::new(),
            coordinates: None,
        })
    }

    /// Builds a graph from directed `(j, i, w)` triples.
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self> {
        let mut g = Self::empty(n_nodes)?;
        for (j, i, w) in edges {
            g.insert_edge(j, i, w)?;
        }
        Ok(g)
    }

    /// Inserts `(j, i, w)`; a second weight for the same ordered pair is rejected.
    pub fn insert_edge(&mut self, j: usize, i: usize, w: T) -> Result<()> {
        if j >= self.n_nodes || i >= self.n_nodes {
            return Err(Error::invalid(format!(
                "edge ({j}, {i}) references a node outside 0..{}",
                self.n_nodes
            )));
        }
        if self.edges.insert((j, i), w).is_some() {
            return Err(Error::invalid(format!("duplicate edge ({j}, {i})")));
        }
        Ok(())
    }

    /// Inserts both orientations of `{a, b}`.
    pub fn insert_undirected(&mut self, a: usize, b: usize, w: T) -> Result<()> {
        self.insert_edge(a, b, w)?;
        if a != b {
            self.insert_edge(b, a, w)?;
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Directed edges `(j, i, w)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.edges.iter().map(|(&(j, i), &w)| (j, i, w))
    }

    pub fn n_directed_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of unordered pairs `{a, b}`, `a ≠ b`, connected in either direction.
    pub fn n_undirected_edges(&self) -> usize {
        self.edges
            .keys()
            .filter(|&&(j, i)| j != i)
            .map(|&(j, i)| (j.min(i), j.max(i)))
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn has_edge(&self, j: usize, i: usize) -> bool {
        self.edges.contains_key(&(j, i))
    }

    pub fn weight(&self, j: usize, i: usize) -> Option<T> {
        self.edges.get(&(j, i)).copied()
    }

    /// `𝒩_i = { j : (j, i) ∈ ℰ }`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .keys()
            .filter(|&&(_, dst)| dst == i)
            .map(|&(src, _)| src)
            .collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.edges.keys().filter(|&&(_, dst)| dst == i).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges
            .iter()
            .all(|(&(j, i), &w)| self.edges.get(&(i, j)) == Some(&w))
    }

    pub fn coordinates(&self) -> Option<&[[f64; 2]]> {
        self.coordinates.as_deref()
    }

    pub fn with_coordinates(mut self, coordinates: Vec<[f64; 2]>) -> Result<Self> {
        if coordinates.len() != self.n_nodes {
            return Err(Error::invalid(format!(
                "{} coordinates for {} nodes",
                coordinates.len(),
                self.n_nodes
            )));
        }
        self.coordinates = Some(coordinates);
        Ok(self)
    }

    /// Same graph with node `v` renamed to `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_nodes)?;
        let mut g = Self::empty(self.n_nodes)?;
        for (j, i, w) in self.edges() {
            g.insert_edge(perm[j], perm[i], w)?;
        }
        if let Some(c) = &self.coordinates {
            let mut moved = c.clone();
            for (v, &p) in perm.iter().enumerate() {
                moved[p] = c[v];
            }
            g.coordinates = Some(moved);
        }
        Ok(g)
    }

    /// Writes the plain-text edge list: a line with `N`, then one `j i w` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = format!("{}\n", self.n_nodes);
        for (j, i, w) in self.edges() {
            writeln!(buf, "{j} {i} {:?}", w.to_f64_lossy()).expect("string write");
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_edge_list<R: Read>(input: R) -> Result<Self> {
        let mut graph: Option<Self> = None;
        for (lineno, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line_no = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: line_no, msg };
            match graph.as_mut() {
                None => {
                    let n: usize = trimmed
                        .parse()
                        .map_err(|_| parse_err(format!("expected node count, got `{trimmed}`")))?;
                    graph = Some(Self::empty(n).map_err(|e| parse_err(e.to_string()))?);
                }
                Some(g) => {
                    let fields: Vec<&str> = trimmed.split_whitespace().collect();
                    if fields.len() != 3 {
                        return Err(parse_err(format!("expected `j i w`, got `{trimmed}`")));
                    }
                    let j: usize = fields[0]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node index `{}`", fields[0])))?;
                    let i: usize = fields[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node index `{}`", fields[1])))?;
                    let w: f64 = fields[2]
                        .parse()
                        .map_err(|_| parse_err(format!("bad weight `{}`", fields[2])))?;
                    g.insert_edge(j, i, T::lit(w))
                        .map_err(|e| parse_err(e.to_string()))?;
                }
            }
        }
        graph.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "missing node count".into(),
        })
    }
}

/// Stochastic block model with contiguous, equally sized communities.
///
/// Every unordered pair is drawn once, with probability `p_intra` inside a
/// community and `p_inter` across communities. Unit weights, no self loops.
pub fn sbm_generate<T: Scalar>(
    n: usize,
    n_communities: usize,
    p_intra: f64,
    p_inter: f64,
    seed: u64,
) -> Result<Graph<T>> {
    if n == 0 || n_communities == 0 || n % n_communities != 0 {
        return Err(Error::invalid(format!(
            "{n} nodes cannot be split into {n_communities} equal communities"
        )));
    }
    for (name, p) in [("p_intra", p_intra), ("p_inter", p_inter)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} = {p} is not a probability")));
        }
    }
    if p_inter > p_intra {
        return Err(Error::invalid(format!(
            "p_inter ({p_inter}) exceeds p_intra ({p_intra})"
        )));
    }
    let block = n / n_communities;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(n)?;
    for a in 0..n {
        for b in a + 1..n {
            let p = if a / block == b / block { p_intra } else { p_inter };
            if rng.random_bool(p) {
                g.insert_undirected(a, b, T::one())?;
            }
        }
    }
    Ok(g)
}

/// Community of node `v` under [`sbm_generate`]'s block assignment.
pub fn sbm_community(v: usize, n: usize, n_communities: usize) -> usize {
    v / (n / n_communities)
}

/// Symmetrized k-nearest-neighbor graph over planar points with unit weights.
///
/// Distance ties are broken by lower node index.
pub fn knn_graph<T: Scalar>(coordinates: &[[f64; 2]], k: usize) -> Result<Graph<T>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if coordinates.len() < k + 1 {
        return Err(Error::invalid(format!(
            "{} points cannot have {k} neighbors each",
            coordinates.len()
        )));
    }
    if coordinates.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("coordinates must be finite"));
    }
    let n = coordinates.len();
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (distance(coordinates[i], coordinates[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let mut g = Graph::empty(n)?;
    for (a, b) in pairs {
        g.insert_undirected(a, b, T::one())?;
    }
    g.with_coordinates(coordinates.to_vec())
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsoKind {
    Adjacency,
    NormalizedAdjacency,
}

impl std::str::FromStr for GsoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(GsoKind::Adjacency),
            "normalized_adjacency" => Ok(GsoKind::NormalizedAdjacency),
            other => Err(Error::invalid(format!("unknown shift operator kind `{other}`"))),
        }
    }
}

/// Dense graph shift operator `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gso<T> {
    matrix: Tensor<T>,
    kind: GsoKind,
}

impl<T: Scalar> Gso<T> {
    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn kind(&self) -> GsoKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.rows()
    }

    /// Wraps a raw matrix as an adjacency-type operator (no sparsity check).
    pub fn from_matrix(matrix: Tensor<T>) -> Result<Self> {
        if !matrix.is_matrix() || matrix.rows() != matrix.cols() {
            return Err(Error::shape("gso", format!("{:?} is not square", matrix.shape())));
        }
        Ok(Self {
            matrix,
            kind: GsoKind::Adjacency,
        })
    }

    /// `P S Pᵀ` for the relabeling `v ↦ perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        check_permutation(perm, n)?;
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                m.set(perm[i], perm[j], self.matrix.at(i, j));
            }
        }
        Ok(Self {
            matrix: m,
            kind: self.kind,
        })
    }

    pub fn spectral_radius(&self) -> T {
        spectral_radius(&self.matrix)
    }
}

/// Builds `S` with `S[i][j] = w` for every edge `(j, i, w)`; the normalized
/// kind divides by the spectral radius.
pub fn build_gso<T: Scalar>(graph: &Graph<T>, kind: GsoKind) -> Result<Gso<T>> {
    let n = graph.n_nodes();
    let mut m = Tensor::zeros(&[n, n]);
    for (j, i, w) in graph.edges() {
        m.set(i, j, w);
    }
    if kind == GsoKind::NormalizedAdjacency {
        let rho = spectral_radius(&m);
        if rho <= T::epsilon() {
            return Err(Error::invalid("cannot normalize a shift operator with zero spectral radius"));
        }
        m = m.map(|v| v / rho);
    }
    Ok(Gso { matrix: m, kind })
}

/// Power-iteration estimate of the spectral radius of a square matrix.
///
/// Iterates on `M²` so that eigenvalue pairs `±λ` (bipartite graphs) do not
/// stall convergence; stops at relative change below `1e-10`.
pub fn spectral_radius<T: Scalar>(m: &Tensor<T>) -> T {
    let n = m.rows();
    let mut x: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.01) * T::lit((i as f64 + 1.0).sin()))
        .collect();
    let mut estimate = T::zero();
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(16.0));
    for _ in 0..100_000 {
        let y = matvec(m, &matvec(m, &x));
        let norm_x = norm(&x);
        let norm_y = norm(&y);
        if norm_y == T::zero() {
            return T::zero();
        }
        let next = (norm_y / norm_x).sqrt();
        x = y.into_iter().map(|v| v / norm_y).collect();
        if (next - estimate).abs() <= tol * next {
            // one more squared step tightens the estimate well past tol
            let y = matvec(m, &matvec(m, &x));
            return (norm(&y) / norm(&x)).sqrt();
        }
        estimate = next;
    }
    estimate
}

fn matvec<T: Scalar>(m: &Tensor<T>, x: &[T]) -> Vec<T> {
    let n = m.cols();
    m.data()
        .chunks(n)
        .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
        .collect()
}

fn norm<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// One value per node.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSignal<T> {
    values: Vec<T>,
}

impl<T: Scalar> GraphSignal<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }
}

impl<T> Deref for GraphSignal<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.values
    }
}

/// `[Sx]_i = Σ_{j ∈ 𝒩_i} s_ij x_j`.
pub fn graph_shift<T: Scalar>(gso: &Gso<T>, x: &GraphSignal<T>) -> Result<GraphSignal<T>> {
    if x.len() != gso.n_nodes() {
        return Err(Error::shape(
            "graph_shift",
            format!("signal of length {} on {} nodes", x.len(), gso.n_nodes()),
        ));
    }
    Ok(GraphSignal::new(matvec(&gso.matrix, x)))
}

/// Nodes reachable from `i` in at most `k` hops along edges into `i`.
pub fn k_hop_neighborhood<T: Scalar>(graph: &Graph<T>, i: usize, k: usize) -> Result<BTreeSet<usize>> {
    let n = graph.n_nodes();
    if i >= n {
        return Err(Error::invalid(format!("node {i} outside 0..{n}")));
    }
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, dst, _) in graph.edges() {
        into[dst].push(j);
    }
    let mut seen = BTreeSet::from([i]);
    let mut queue = VecDeque::from([(i, 0usize)]);
    while let Some((v, d)) = queue.pop_front() {
        if d == k {
            continue;
        }
        for &u in &into[v] {
            if seen.insert(u) {
                queue.push_back((u, d + 1));
            }
        }
    }
    Ok(seen)
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let distinct: BTreeSet<usize> = perm.iter().copied().collect();
    if perm.len() != n || distinct.len() != n || perm.iter().any(|&p| p >= n) {
        return Err(Error::invalid("not a permutation of the node set"));
    }
    Ok(())
}
