//! Compressed sparse row matrices and the handful of products the rest of
//! the crate needs.

use nalgebra::DMatrix;

/// Block count from which batched products switch to a row-major kernel.
const WIDE_BLOCKS: usize = 4;

/// Transposes a column-major `rows × cols` buffer into row-major order.
fn to_row_major(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for c in 0..cols {
        for r in 0..rows {
            t[r * cols + c] = x[c * rows + r];
        }
    }
    t
}

/// Entries with magnitude at or below this are treated as structural zeros.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from (row, col, value) triplets. Duplicates are summed and
    /// entries with |v| <= [`ZERO_TOL`] are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v.abs() > ZERO_TOL {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from dense rows; entries with |v| <= [`ZERO_TOL`] are dropped.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut row_ptr = Vec::with_capacity(m.nrows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.abs() > ZERO_TOL {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: m.nrows(),
            ncols: m.ncols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Appends rows one at a time; used by builders that produce rows in order.
    pub(crate) fn from_rows<I>(ncols: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = Vec<(usize, f64)>>,
    {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (c, v) in row {
                if v.abs() > ZERO_TOL {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: row_ptr.len() - 1,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// Columns that hold at least one stored entry.
    pub fn nonzero_columns(&self) -> Vec<bool> {
        let mut used = vec![false; self.ncols];
        for &c in &self.col_idx {
            used[c] = true;
        }
        used
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Applies the operator to every length-`nrows` block of a column-major
    /// buffer, i.e. `self · X` where `X` is `ncols × (len / ncols)`.
    ///
    /// A `(B·n) × F` activation matrix stored column-major is exactly an
    /// `n × (F·B)` matrix, so one call shifts a whole minibatch.
    pub fn mul_blocks(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.ncols;
        let n_out = self.nrows;
        assert_eq!(x.len() % n_in, 0);
        let blocks = x.len() / n_in;
        assert_eq!(out.len(), blocks * n_out);
        if blocks >= WIDE_BLOCKS {
            let xt = to_row_major(x, n_in, blocks);
            let mut row = vec![0.0; blocks];
            for i in 0..n_out {
                row.fill(0.0);
                for (j, v) in self.row(i) {
                    for (r, &xv) in row.iter_mut().zip(&xt[j * blocks..(j + 1) * blocks]) {
                        *r += v * xv;
                    }
                }
                for (b, &r) in row.iter().enumerate() {
                    out[b * n_out + i] = r;
                }
            }
            return;
        }
        for b in 0..blocks {
            let xb = &x[b * n_in..(b + 1) * n_in];
            let ob = &mut out[b * n_out..(b + 1) * n_out];
            for (i, o) in ob.iter_mut().enumerate() {
                let span = self.row_ptr[i]..self.row_ptr[i + 1];
                let mut acc = 0.0;
                for (&j, &v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                    acc += v * xb[j];
                }
                *o = acc;
            }
        }
    }

    /// Accumulates `selfᵀ · X` into `out`, blockwise as in [`Self::mul_blocks`].
    pub fn tr_mul_blocks_acc(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.nrows;
        let n_out = self.ncols;
        assert_eq!(x.len() % n_in, 0);
        let blocks = x.len() / n_in;
        assert_eq!(out.len(), blocks * n_out);
        if blocks >= WIDE_BLOCKS {
            let xt = to_row_major(x, n_in, blocks);
            let mut ot = vec![0.0; n_out * blocks];
            for i in 0..n_in {
                let xi = &xt[i * blocks..(i + 1) * blocks];
                for (j, v) in self.row(i) {
                    for (o, &xv) in ot[j * blocks..(j + 1) * blocks].iter_mut().zip(xi) {
                        *o += v * xv;
                    }
                }
            }
            for j in 0..n_out {
                for b in 0..blocks {
                    out[b * n_out + j] += ot[j * blocks + b];
                }
            }
            return;
        }
        for b in 0..blocks {
            let xb = &x[b * n_in..(b + 1) * n_in];
            let ob = &mut out[b * n_out..(b + 1) * n_out];
            for (i, &xi) in xb.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let span = self.row_ptr[i]..self.row_ptr[i + 1];
                for (&j, &v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                    ob[j] += v * xi;
                }
            }
        }
    }

    /// `self · X` for a dense `X` with `ncols` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        self.mul_blocks(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, rhs: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, rhs.nrows);
        let mut acc = vec![0.0; rhs.ncols];
        let mut touched = vec![false; rhs.ncols];
        let mut cols = Vec::new();
        let rows = (0..self.nrows).map(|i| {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            let row: Vec<_> = cols
                .iter()
                .map(|&j| {
                    let v = acc[j];
                    acc[j] = 0.0;
                    touched[j] = false;
                    (j, v)
                })
                .collect();
            row
        });
        let rows: Vec<_> = rows.collect();
        CsrMatrix::from_rows(rhs.ncols, rows)
    }

    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        (self.to_dense() - other.to_dense()).amax()
    }
}
