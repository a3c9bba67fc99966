//! Causal graph-shift operators `S_k = W D_k W⁻¹`.
//!
//! `D_k` is the 0/1 diagonal marking the predecessors of anchor `k`
//! (including `k`). Because `W⁻¹ = I - A` is sparse and `D_k` zeroes every
//! row outside the predecessor set, `S_k` only has nonzero columns inside
//! that set; those are the only columns touched by products.

use rand::seq::index;
use rand::Rng;

use crate::dag::{Closure, Dag, Permutation};
use crate::error::{Error, Result};
use crate::par;
use crate::sparse::{CsrMatrix, ZERO_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct CausalGso {
    anchor: usize,
    mat: CsrMatrix,
    d_diag: Vec<bool>,
}

impl CausalGso {
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// Stored operator, rows are targets.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.mat
    }

    /// Diagonal of `D_k`: `true` for predecessors of the anchor.
    pub fn d_diag(&self) -> &[bool] {
        &self.d_diag
    }

    pub fn n(&self) -> usize {
        self.d_diag.len()
    }

    pub fn transposed(&self) -> CausalGso {
        CausalGso {
            anchor: self.anchor,
            mat: self.mat.transpose(),
            d_diag: self.d_diag.clone(),
        }
    }
}

/// `[D_k]_ii = 1` iff `i ≤ k` in the DAG partial order.
pub fn indicator_matrix(c: &Closure, d: &Dag, k: usize) -> Vec<bool> {
    assert!(k < d.n(), "anchor {k} out of range");
    (0..d.n()).map(|i| c.precedes(i, k)).collect()
}

/// Builds `S_k = W · D_k · (I - A)` row by row.
pub fn causal_gso(c: &Closure, d: &Dag, k: usize) -> CausalGso {
    let n = d.n();
    let d_diag = indicator_matrix(c, d, k);
    let preds: Vec<usize> = (0..n).filter(|&j| d_diag[j]).collect();
    let w = c.w();
    let w_inv = c.w_inv();

    let mut acc = vec![0.0; n];
    let mut touched = vec![false; n];
    let mut cols = Vec::new();
    let rows = (0..n).map(|i| {
        cols.clear();
        for &j in &preds {
            let wij = w[(i, j)];
            if wij.abs() <= ZERO_TOL {
                continue;
            }
            for (l, v) in w_inv.row(j) {
                if !touched[l] {
                    touched[l] = true;
                    cols.push(l);
                }
                acc[l] += wij * v;
            }
        }
        cols.sort_unstable();
        cols.iter()
            .map(|&l| {
                let v = acc[l];
                acc[l] = 0.0;
                touched[l] = false;
                (l, v)
            })
            .collect::<Vec<_>>()
    });
    let rows: Vec<_> = rows.collect();
    CausalGso {
        anchor: k,
        mat: CsrMatrix::from_rows(n, rows),
        d_diag,
    }
}

/// `S_k x`.
pub fn apply_gso(s: &CausalGso, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != s.n() {
        return Err(Error::DimensionMismatch {
            expected: s.n(),
            got: x.len(),
        });
    }
    Ok(s.mat.mul_vec(x))
}

/// Relabels the anchor and conjugates the operator: `S' = P S Pᵀ`.
pub fn permute_gso(s: &CausalGso, p: &Permutation) -> CausalGso {
    CausalGso {
        anchor: p.apply(s.anchor),
        mat: p.conjugate_sparse(&s.mat),
        d_diag: p.apply_vec(&s.d_diag),
    }
}

/// Which anchors a GSO set uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnchorSelection {
    All,
    Nodes(Vec<usize>),
}

impl AnchorSelection {
    /// Uniform sample of `count` distinct anchors, returned in sampling order.
    pub fn sample<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptySubset);
        }
        if count > n {
            return Err(Error::InvalidParams(format!(
                "cannot sample {count} anchors from {n} nodes"
            )));
        }
        Ok(Self::Nodes(index::sample(rng, n, count).into_vec()))
    }

    pub fn resolve(&self, n: usize) -> Vec<usize> {
        match self {
            Self::All => (0..n).collect(),
            Self::Nodes(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CausalGsoSet {
    n: usize,
    members: Vec<CausalGso>,
    transposed: bool,
}

impl CausalGsoSet {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[CausalGso] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    pub fn anchors(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.anchor).collect()
    }

    pub fn total_nnz(&self) -> usize {
        self.members.iter().map(|m| m.mat.nnz()).sum()
    }

    /// Every member relabeled by `p`; member order is kept so per-anchor
    /// parameters stay attached to the same operator.
    pub fn permuted(&self, p: &Permutation) -> CausalGsoSet {
        CausalGsoSet {
            n: self.n,
            members: self.members.iter().map(|m| permute_gso(m, p)).collect(),
            transposed: self.transposed,
        }
    }

    /// Subset of members by position.
    pub fn select(&self, positions: &[usize]) -> CausalGsoSet {
        CausalGsoSet {
            n: self.n,
            members: positions.iter().map(|&i| self.members[i].clone()).collect(),
            transposed: self.transposed,
        }
    }
}

/// Builds `S_k` for every anchor in `subset`, transposing each if requested.
pub fn gso_set(
    d: &Dag,
    c: &Closure,
    subset: &AnchorSelection,
    transposed: bool,
) -> Result<CausalGsoSet> {
    let anchors = subset.resolve(d.n());
    if anchors.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut seen = vec![false; d.n()];
    for &k in &anchors {
        if k >= d.n() {
            return Err(Error::NodeOutOfRange { index: k, n: d.n() });
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::DuplicateAnchor(k));
        }
    }
    let members = par::map(&anchors, |&k| {
        let s = causal_gso(c, d, k);
        if transposed {
            s.transposed()
        } else {
            s
        }
    });
    Ok(CausalGsoSet {
        n: d.n(),
        members,
        transposed,
    })
}
