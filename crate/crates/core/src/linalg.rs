//! Linear solves for the coefficient update `(X^T X + rho K^T K) beta = b`.
//!
//! `K^T K = 2I + D^T D` is sparse and banded under the grid ordering, so it is
//! factored once with an envelope (profile) Cholesky. When `n < p` the system
//! is solved through the Woodbury identity
//!
//! ```text
//! (rho M + X^T X)^-1 = (1/rho) [ M^-1 - Z (rho I + X Z)^-1 Z^T ],  Z = M^-1 X^T
//! ```
//!
//! so a change of `rho` only refactors an `n x n` matrix. Otherwise the dense
//! `p x p` matrix is factored directly.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use sprs::CsMat;

use crate::error::{FsglError, Result};
use crate::penalty::PenaltyOperator;

/// Inner product with four partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cholesky factor of a symmetric positive-definite matrix stored by rows
/// over each row's envelope (first structural nonzero to the diagonal).
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors the symmetric matrix `a`; only its lower triangle is read.
    pub fn factor(a: &CsMat<f64>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(FsglError::Internal(
                "envelope Cholesky needs a square matrix".into(),
            ));
        }
        let a = a.to_csr();
        let mut first: Vec<usize> = (0..n).collect();
        for (i, row) in a.outer_iterator().enumerate() {
            for (j, _) in row.iter() {
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            row_start.push(total);
            total += i - first[i] + 1;
        }
        row_start.push(total);
        let mut data = vec![0.0; total];
        for (i, row) in a.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                if j <= i {
                    data[row_start[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let ri = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let rj = row_start[j];
                let k0 = fi.max(fj);
                let li = &data[ri + k0 - fi..ri + j - fi];
                let lj = &data[rj + k0 - fj..rj + j - fj];
                let dot = dot(li, lj);
                let diag = data[rj + j - fj];
                data[ri + j - fi] = (data[ri + j - fi] - dot) / diag;
            }
            let row = &data[ri..ri + i - fi];
            let d = data[ri + i - fi] - dot(row, row);
            if !(d > 0.0) {
                return Err(FsglError::Internal(format!(
                    "matrix is not positive definite (pivot {d:e} at row {i})"
                )));
            }
            data[ri + i - fi] = d.sqrt();
        }
        let inv_diag = (0..n)
            .map(|i| 1.0 / data[row_start[i] + i - first[i]])
            .collect();
        Ok(Self {
            first,
            row_start,
            data,
            inv_diag,
        })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Number of stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.data[self.row_start[i] + i - self.first[i]]
    }

    /// Smallest diagonal entry of `L`.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.diag(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Overwrites `b` with `A^-1 b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.row_start[i];
            let row = &self.data[ri..ri + i - fi];
            b[i] = (b[i] - dot(row, &b[fi..i])) * self.inv_diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.row_start[i];
            b[i] *= self.inv_diag[i];
            let xi = b[i];
            for (bk, l) in b[fi..i].iter_mut().zip(&self.data[ri..ri + i - fi]) {
                *bk -= l * xi;
            }
        }
    }
}

/// The `rho`-independent part of the coefficient-update system for one design.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    x: DMatrix<f64>,
    kind: SystemKind,
}

#[derive(Debug, Clone)]
enum SystemKind {
    Dense {
        xtx: DMatrix<f64>,
        gram: DMatrix<f64>,
    },
    Woodbury {
        gram_factor: Arc<EnvelopeCholesky>,
        /// `Z = M^-1 X^T`, p x n.
        z: DMatrix<f64>,
        /// `H = X Z`, n x n.
        h: DMatrix<f64>,
    },
}

/// Factorization of the update matrix for one value of `rho`.
#[derive(Debug, Clone)]
pub struct BetaFactor {
    rho: f64,
    chol: Cholesky<f64, Dyn>,
    min_pivot: f64,
}

impl BetaFactor {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Smallest diagonal entry of the Cholesky factor that was computed.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }
}

impl NormalSystem {
    pub fn new(x: &DMatrix<f64>, penalty: &PenaltyOperator) -> Result<Self> {
        let (n, p) = x.shape();
        if p != penalty.p() {
            return Err(FsglError::Validation(format!(
                "design has {p} columns but penalty has p = {}",
                penalty.p()
            )));
        }
        let kind = if n < p {
            let gram_factor = penalty.gram_factor()?;
            let mut z = x.transpose();
            for mut col in z.column_iter_mut() {
                gram_factor.solve_in_place(col.as_mut_slice());
            }
            let h = x * &z;
            SystemKind::Woodbury { gram_factor, z, h }
        } else {
            SystemKind::Dense {
                xtx: x.transpose() * x,
                gram: penalty.gram_dense(),
            }
        };
        Ok(Self { x: x.clone(), kind })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn uses_woodbury(&self) -> bool {
        matches!(self.kind, SystemKind::Woodbury { .. })
    }

    pub fn factor(&self, rho: f64) -> Result<BetaFactor> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(FsglError::Internal(format!(
                "step size must be positive, got {rho}"
            )));
        }
        let mat = match &self.kind {
            SystemKind::Dense { xtx, gram } => xtx + gram * rho,
            SystemKind::Woodbury { h, .. } => {
                let mut c = h.clone();
                for i in 0..c.nrows() {
                    c[(i, i)] += rho;
                }
                c
            }
        };
        let chol = Cholesky::new(mat).ok_or_else(|| {
            FsglError::Internal(format!(
                "coefficient-update system not positive definite at rho = {rho}"
            ))
        })?;
        let l = chol.l_dirty();
        let min_pivot = (0..l.nrows())
            .map(|i| l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if !(min_pivot > 0.0) {
            return Err(FsglError::Internal(format!(
                "nonpositive Cholesky pivot {min_pivot:e} at rho = {rho}"
            )));
        }
        Ok(BetaFactor {
            rho,
            chol,
            min_pivot,
        })
    }

    /// Solves `(X^T X + rho K^T K) beta = rhs`, also writing `X beta` into
    /// `fitted` (length `n`).
    pub fn solve(
        &self,
        factor: &BetaFactor,
        rhs: &[f64],
        beta: &mut [f64],
        fitted: &mut DVector<f64>,
    ) {
        let rho = factor.rho;
        match &self.kind {
            SystemKind::Dense { .. } => {
                let mut b = DVector::from_column_slice(rhs);
                factor.chol.solve_mut(&mut b);
                beta.copy_from_slice(b.as_slice());
                fitted.gemv(1.0, &self.x, &b, 0.0);
            }
            SystemKind::Woodbury { gram_factor, z, .. } => {
                beta.copy_from_slice(rhs);
                gram_factor.solve_in_place(beta);
                // fitted <- X u, then c = (rho I + H)^-1 X u, which equals X beta.
                let p = self.p();
                fitted.fill(0.0);
                let fs = fitted.as_mut_slice();
                for (j, col) in self.x.as_slice().chunks_exact(self.n()).enumerate() {
                    let uj = beta[j];
                    if uj != 0.0 {
                        for (f, &xij) in fs.iter_mut().zip(col) {
                            *f += uj * xij;
                        }
                    }
                }
                factor.chol.solve_mut(fitted);
                for (k, zk) in z.as_slice().chunks_exact(p).enumerate() {
                    let ck = fitted[k];
                    for (b, &zjk) in beta.iter_mut().zip(zk) {
                        *b -= ck * zjk;
                    }
                }
                let inv = 1.0 / rho;
                for b in beta.iter_mut() {
                    *b *= inv;
                }
            }
        }
    }
}
