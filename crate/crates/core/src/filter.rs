//! Causal graph filters `H = Σ_k θ_k S_k` and the least-squares tap
//! estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gso::CausalGsoSet;
use crate::par;

/// Singular values below `RANK_RTOL · σ_max` are treated as zero.
pub const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CausalFilter {
    gsos: CausalGsoSet,
    theta: Vec<f64>,
}

pub fn build_filter(g: CausalGsoSet, theta: Vec<f64>) -> Result<CausalFilter> {
    if theta.len() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: g.len(),
            got: theta.len(),
        });
    }
    Ok(CausalFilter { gsos: g, theta })
}

impl CausalFilter {
    pub fn gsos(&self) -> &CausalGsoSet {
        &self.gsos
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n(&self) -> usize {
        self.gsos.n()
    }

    /// `y = Σ_k θ_k (S_k x)`, one sparse product per operator.
    pub fn convolve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; n];
        let mut shifted = vec![0.0; n];
        for (s, &t) in self.gsos.members().iter().zip(&self.theta) {
            if t == 0.0 {
                continue;
            }
            s.matrix().mul_blocks(x, &mut shifted);
            for (yi, si) in y.iter_mut().zip(&shifted) {
                *yi += t * si;
            }
        }
        Ok(y)
    }

    /// Diagonal of `Σ_k θ_k D_k`.
    pub fn frequency_response(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n()];
        for (s, &t) in self.gsos.members().iter().zip(&self.theta) {
            for (ri, &on) in r.iter_mut().zip(s.d_diag()) {
                if on {
                    *ri += t;
                }
            }
        }
        r
    }

    #[cfg(test)]
    pub(crate) fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::zeros(n, n);
        for (s, &t) in self.gsos.members().iter().zip(&self.theta) {
            h += s.matrix().to_dense() * t;
        }
        h
    }
}

/// Convenience for [`CausalFilter::convolve`].
pub fn convolve(f: &CausalFilter, x: &[f64]) -> Result<Vec<f64>> {
    f.convolve(x)
}

/// Rows of `[S_1 x | S_2 x | …]` for one input signal, stored `n × |U|`.
fn design_block(g: &CausalGsoSet, x: &[f64]) -> DMatrix<f64> {
    let n = g.n();
    let mut block = DMatrix::zeros(n, g.len());
    for (col, s) in g.members().iter().enumerate() {
        s.matrix()
            .mul_blocks(x, block.column_mut(col).as_mut_slice());
    }
    block
}

/// Pairs folded into one orthogonal-reduction step.
const LS_CHUNK: usize = 64;

/// Minimum-norm least-squares estimate of the taps from `(x, y)` pairs.
///
/// The stacked regression is reduced chunk by chunk with Householder QR
/// (keeping only the triangular factor and the rotated right-hand side),
/// and the final triangular system is solved through an SVD with a
/// relative rank cut of [`RANK_RTOL`].
pub fn ls_fit(g: &CausalGsoSet, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
    let n = g.n();
    let p = g.len();
    if pairs.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    for (x, y) in pairs {
        for v in [x, y] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
    }

    let mut r_acc = DMatrix::<f64>::zeros(0, p);
    let mut z_acc = DVector::<f64>::zeros(0);
    for chunk in pairs.chunks(LS_CHUNK) {
        let blocks = par::map(chunk, |(x, _)| design_block(g, x));
        let rows = r_acc.nrows() + chunk.len() * n;
        let mut a = DMatrix::<f64>::zeros(rows, p);
        let mut b = DVector::<f64>::zeros(rows);
        a.rows_mut(0, r_acc.nrows()).copy_from(&r_acc);
        b.rows_mut(0, z_acc.nrows()).copy_from(&z_acc);
        let mut off = r_acc.nrows();
        for (block, (_, y)) in blocks.iter().zip(chunk) {
            a.rows_mut(off, n).copy_from(block);
            b.rows_mut(off, n).copy_from_slice(y);
            off += n;
        }
        let qr = a.qr();
        let keep = rows.min(p);
        qr.q_tr_mul(&mut b);
        r_acc = qr.r();
        z_acc = b.rows(0, keep).into_owned();
    }

    let svd = r_acc.svd(true, true);
    let smax = svd.singular_values.max();
    if !smax.is_finite() {
        return Err(Error::Numerical("non-finite singular values in LS design".into()));
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let utz = u.transpose() * &z_acc;
    let mut theta = DVector::<f64>::zeros(p);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && sv > RANK_RTOL * smax {
            theta += vt.row(i).transpose() * (utz[i] / sv);
        }
    }
    Ok(theta.iter().copied().collect())
}
