//! DAG representation, topological ordering, relabeling and the weighted
//! transitive closure `W = (I - A)^{-1}`.
//!
//! Edges are stored as `(target, source, weight)`, matching the adjacency
//! convention `A[target, source] = weight` for an edge `source -> target`.
//! Node indices are 0-based.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, ZERO_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub target: usize,
    pub source: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(target: usize, source: usize, weight: f64) -> Self {
        Self {
            target,
            source,
            weight,
        }
    }

    pub fn unit(target: usize, source: usize) -> Self {
        Self::new(target, source, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    n: usize,
    edges: Vec<Edge>,
    order: Vec<usize>,
    /// `parents[i]` lists `(source, weight)` for every edge into `i`.
    parents: Vec<Vec<(usize, f64)>>,
}

impl Dag {
    /// Validates the edge list and computes a topological order with Kahn's
    /// algorithm, always releasing the smallest ready index first.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for e in &edges {
            for index in [e.target, e.source] {
                if index >= n {
                    return Err(Error::NodeOutOfRange { index, n });
                }
            }
            if e.target == e.source {
                return Err(Error::SelfLoop(e.target));
            }
            if !seen.insert((e.target, e.source)) {
                return Err(Error::DuplicateEdge {
                    target: e.target,
                    origin: e.source,
                });
            }
            parents[e.target].push((e.source, e.weight));
            children[e.source].push(e.target);
            indeg[e.target] += 1;
        }

        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &c in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() != n {
            return Err(Error::CycleDetected);
        }
        for p in &mut parents {
            p.sort_by_key(|&(s, _)| s);
        }
        Ok(Self {
            n,
            edges,
            order,
            parents,
        })
    }

    pub fn edgeless(n: usize) -> Result<Self> {
        Self::new(n, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn parents(&self, i: usize) -> &[(usize, f64)] {
        &self.parents[i]
    }

    /// Position of every node in the topological order.
    pub fn rank(&self) -> Vec<usize> {
        let mut rank = vec![0; self.n];
        for (pos, &i) in self.order.iter().enumerate() {
            rank[i] = pos;
        }
        rank
    }

    pub fn adjacency(&self) -> CsrMatrix {
        let t: Vec<_> = self
            .edges
            .iter()
            .map(|e| (e.target, e.source, e.weight))
            .collect();
        CsrMatrix::from_triplets(self.n, self.n, &t)
    }

    pub fn adjacency_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            a[(e.target, e.source)] = e.weight;
        }
        a
    }

    /// Edge set as `(target, source)` pairs.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.target, e.source)).collect()
    }

    /// Structural ancestor sets: `ancestors()[i][j]` is true when a directed
    /// path `j -> ... -> i` exists (`i` itself excluded).
    pub fn ancestors(&self) -> Vec<Vec<bool>> {
        let mut anc = vec![vec![false; self.n]; self.n];
        for &i in &self.order {
            let mut row = vec![false; self.n];
            for &(p, _) in &self.parents[i] {
                row[p] = true;
                for (r, &a) in row.iter_mut().zip(&anc[p]) {
                    *r |= a;
                }
            }
            anc[i] = row;
        }
        anc
    }

    /// Same graph with every edge reversed.
    pub fn reversed(&self) -> Dag {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge::new(e.source, e.target, e.weight))
            .collect();
        Dag::new(self.n, edges).expect("reversing a DAG keeps it acyclic")
    }

    /// Writes the `n=<count>` / `target,source,weight` edge-list text format.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n={}\n", self.n);
        for e in &self.edges {
            writeln!(s, "{},{},{}", e.target, e.source, e.weight).unwrap();
        }
        s
    }

    /// Parses the edge-list text format. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let n: usize = header
            .strip_prefix("n=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("expected `n=<count>` header, got `{header}`")))?;
        let mut edges = Vec::new();
        for (no, line) in lines {
            let fields: Vec<_> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::ColumnMismatch {
                    expected: 3,
                    got: fields.len(),
                    line: no,
                });
            }
            let bad = |what: &str| Error::Parse(format!("line {no}: bad {what} in `{line}`"));
            let target = fields[0].parse().map_err(|_| bad("target"))?;
            let source = fields[1].parse().map_err(|_| bad("source"))?;
            let weight: f64 = fields[2].parse().map_err(|_| bad("weight"))?;
            if weight == 0.0 || !weight.is_finite() {
                return Err(bad("weight"));
            }
            edges.push(Edge::new(target, source, weight));
        }
        Dag::new(n, edges)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        Self::from_edge_list(&std::fs::read_to_string(path)?)
    }
}

/// A relabeling of nodes: node `i` becomes `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut hit = vec![false; n];
        for &m in &map {
            if m >= n || hit[m] {
                return Err(Error::InvalidParams(format!("{map:?} is not a permutation")));
            }
            hit[m] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// `P x`: entry `i` moves to position `map[i]`.
    pub fn apply_vec<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.map.len());
        let mut y = vec![T::default(); x.len()];
        for (i, &v) in x.iter().enumerate() {
            y[self.map[i]] = v;
        }
        y
    }

    /// `P X` acting on rows.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.map.len());
        let mut y = DMatrix::zeros(x.nrows(), x.ncols());
        for (i, &m) in self.map.iter().enumerate() {
            y.set_row(m, &x.row(i));
        }
        y
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.map.len();
        let mut p = DMatrix::zeros(n, n);
        for (i, &m) in self.map.iter().enumerate() {
            p[(m, i)] = 1.0;
        }
        p
    }

    /// `P M Pᵀ` for a dense square matrix.
    pub fn conjugate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.map.len();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.map[i], self.map[j])] = m[(i, j)];
            }
        }
        out
    }

    /// `P M Pᵀ` for a sparse square matrix.
    pub fn conjugate_sparse(&self, m: &CsrMatrix) -> CsrMatrix {
        let t: Vec<_> = m
            .triplets()
            .map(|(i, j, v)| (self.map[i], self.map[j], v))
            .collect();
        CsrMatrix::from_triplets(m.nrows(), m.ncols(), &t)
    }
}

/// Relabels every edge `(i, j, w)` to `(p(i), p(j), w)`, i.e. `A' = P A Pᵀ`.
pub fn permute_dag(d: &Dag, p: &Permutation) -> Dag {
    assert_eq!(p.len(), d.n(), "permutation size must match node count");
    let edges = d
        .edges()
        .iter()
        .map(|e| Edge::new(p.apply(e.target), p.apply(e.source), e.weight))
        .collect();
    Dag::new(d.n(), edges).expect("relabeling preserves acyclicity")
}

/// Weighted transitive closure of a DAG together with `I - A`.
#[derive(Debug, Clone)]
pub struct Closure {
    w: DMatrix<f64>,
    w_inv: CsrMatrix,
    ancestors: Vec<Vec<bool>>,
}

impl Closure {
    /// `W`, dense; `W[i, j]` sums path-weight products over all paths `j -> i`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W⁻¹ = I - A`.
    pub fn w_inv(&self) -> &CsrMatrix {
        &self.w_inv
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// True when `j = i` or a path `j -> i` exists, i.e. `j ≤ i` in the
    /// partial order.
    pub fn precedes(&self, j: usize, i: usize) -> bool {
        j == i || self.ancestors[i][j]
    }
}

/// Computes `W = I + A + A² + …` row by row in topological order using
/// `W[i, :] = e_i + Σ_{j ∈ parents(i)} A[i, j] W[j, :]`.
pub fn transitive_closure(d: &Dag) -> Closure {
    let n = d.n();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut support: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut acc = vec![0.0; n];
    let mut touched = vec![false; n];
    for &i in d.order() {
        let mut cols = vec![i];
        touched[i] = true;
        acc[i] = 1.0;
        for &(p, a) in d.parents(i) {
            for &c in &support[p] {
                if !touched[c] {
                    touched[c] = true;
                    cols.push(c);
                }
                acc[c] += a * w[(p, c)];
            }
        }
        for &c in &cols {
            w[(i, c)] = acc[c];
            acc[c] = 0.0;
            touched[c] = false;
        }
        cols.sort_unstable();
        support[i] = cols;
    }

    let mut trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
    trip.extend(d.edges().iter().map(|e| (e.target, e.source, -e.weight)));
    let w_inv = CsrMatrix::from_triplets(n, n, &trip);
    Closure {
        w,
        w_inv,
        ancestors: d.ancestors(),
    }
}

/// Edges of the reachability DAG: `(i, j)` with `i ≠ j` and `W[i, j] ≠ 0`.
pub fn reachability_edges(c: &Closure) -> BTreeSet<(usize, usize)> {
    let n = c.n();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && c.w[(i, j)].abs() > ZERO_TOL {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Canonical form of a small weighted DAG, equal for isomorphic graphs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalCode(Vec<u64>);

pub const CANONICAL_MAX_NODES: usize = 6;

/// Lexicographically smallest relabeled adjacency string over all `n!`
/// relabelings.
pub fn canonical_small_dag(d: &Dag) -> Result<CanonicalCode> {
    let n = d.n();
    if n > CANONICAL_MAX_NODES {
        return Err(Error::TooLarge(n));
    }
    let a = d.adjacency_dense();
    let mut best: Option<Vec<u64>> = None;
    for_each_permutation(n, |perm| {
        let code = encode_relabeled(&a, perm);
        if best.as_ref().is_none_or(|b| code < *b) {
            best = Some(code);
        }
    });
    Ok(CanonicalCode(best.expect("n >= 1 has a permutation")))
}

fn encode_relabeled(a: &DMatrix<f64>, map: &[usize]) -> Vec<u64> {
    let n = map.len();
    let mut code = vec![0u64; n * n + 1];
    code[0] = n as u64;
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            // +0.0 and -0.0 collapse so zero entries compare equal
            let bits = if v == 0.0 { 0 } else { v.to_bits() };
            code[1 + map[i] * n + map[j]] = bits;
        }
    }
    code
}

/// Heap's algorithm over permutations of `0..n`.
pub(crate) fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&perm);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
