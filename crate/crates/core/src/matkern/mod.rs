//! Dense symmetric-matrix kernels and distribution tails used throughout the crate.
//!
//! Everything here is a pure function of its inputs. Matrices are stored in
//! [`nalgebra::DMatrix`]; [`SymMatrix`] wraps one and guarantees exact symmetry.

mod special;

pub use special::{beta_reg, chi2_sf, f_sf, gamma_q, ln_gamma, t_sf_two_sided};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A square matrix whose storage is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, replacing it by `(m + mᵀ) / 2` so that symmetry holds bit-for-bit.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Builds from a row-major slice. The lower triangle is mirrored from the upper.
    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        let mut m = DMatrix::from_row_slice(n, n, data);
        for i in 0..n {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPair {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        &scaled * self.vectors.transpose()
    }
}

pub fn sym_eigen(a: &SymMatrix) -> Result<EigenPair> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(
            "non-finite entry in symmetric matrix".into(),
        ));
    }
    let n = a.dim();
    if n == 0 {
        return Ok(EigenPair {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenPair { values, vectors })
}

/// Default relative rank tolerance: `dim · ε`.
pub fn default_rank_tol(dim: usize) -> f64 {
    dim.max(1) as f64 * f64::EPSILON
}

/// `V · diag(f(λ)) · Vᵀ` over the eigenvalues above `rank_tol · λ_max`; the rest map to zero.
///
/// Fails with `NotPsd` when an eigenvalue falls below `-rank_tol · λ_max`.
fn psd_spectral_map(
    a: &SymMatrix,
    rank_tol: Option<f64>,
    f: impl Fn(f64) -> f64,
) -> Result<SymMatrix> {
    let n = a.dim();
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(n));
    let eig = sym_eigen(a)?;
    if n == 0 {
        return Ok(SymMatrix(DMatrix::zeros(0, 0)));
    }
    let lambda_max = eig.values[0].max(0.0);
    let cutoff = tol * lambda_max;
    let lambda_min = eig.values[n - 1];
    if lambda_min < -cutoff {
        return Err(Error::NotPsd {
            eigenvalue: lambda_min,
            tolerance: cutoff,
        });
    }
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.values[k];
        if lam <= cutoff || lam <= 0.0 {
            continue;
        }
        let w = f(lam);
        let v = eig.vectors.column(k);
        out.ger(w, &v, &v, 1.0);
    }
    Ok(SymMatrix::symmetrized(out))
}

/// Symmetric square root of the Moore-Penrose inverse of a PSD matrix.
pub fn pinv_sqrt_psd(a: &SymMatrix, rank_tol: Option<f64>) -> Result<SymMatrix> {
    psd_spectral_map(a, rank_tol, |l| 1.0 / l.sqrt())
}

/// Moore-Penrose inverse of a PSD matrix.
pub fn pinv_psd(a: &SymMatrix, rank_tol: Option<f64>) -> Result<SymMatrix> {
    psd_spectral_map(a, rank_tol, |l| 1.0 / l)
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn inv_sqrt_pd(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eigen(a)?;
    let n = a.dim();
    if n > 0 && eig.values[n - 1] <= 0.0 {
        return Err(Error::NotPd { pivot: n - 1 });
    }
    psd_spectral_map(a, Some(0.0), |l| 1.0 / l.sqrt())
}

/// Upper-triangular `D` with `DᵀD = a` and a positive diagonal.
pub fn chol_upper(a: &SymMatrix) -> Result<DMatrix<f64>> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(
            "non-finite entry in symmetric matrix".into(),
        ));
    }
    let n = a.dim();
    let a = a.as_matrix();
    let mut d = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= d[(k, j)] * d[(k, j)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPd { pivot: j });
        }
        let djj = diag.sqrt();
        d[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(j, i)];
            for k in 0..j {
                s -= d[(k, j)] * d[(k, i)];
            }
            d[(j, i)] = s / djj;
        }
    }
    Ok(d)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn inv_pd(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim();
    let d = chol_upper(a)?;
    let dinv = d
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPd { pivot: 0 })?;
    Ok(SymMatrix::symmetrized(&dinv * dinv.transpose()))
}

/// Ratio of the largest to the smallest absolute eigenvalue (infinite when singular).
pub fn condition_number(a: &SymMatrix) -> Result<f64> {
    let eig = sym_eigen(a)?;
    let n = a.dim();
    if n == 0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in eig.values.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    Ok(if lo == 0.0 { f64::INFINITY } else { hi / lo })
}

/// Greedy selection of linearly independent columns in input order.
///
/// `gram` is the `W` Gram matrix of the candidate columns; a column is kept when its
/// squared residual after projecting on the kept set exceeds `tol` times
/// `reference[j]` (its squared norm before any absorption).
pub fn independent_columns(gram: &DMatrix<f64>, reference: &[f64], tol: f64) -> Vec<usize> {
    let k = gram.nrows();
    let mut kept: Vec<usize> = Vec::new();
    // rows of the lower Cholesky factor of the kept columns' Gram matrix
    let mut chol: Vec<Vec<f64>> = Vec::new();
    for j in 0..k {
        let mut coeffs = Vec::with_capacity(kept.len());
        let mut resid = gram[(j, j)];
        for (a, &ka) in kept.iter().enumerate() {
            let mut v = gram[(ka, j)];
            for b in 0..a {
                v -= chol[a][b] * coeffs[b];
            }
            v /= chol[a][a];
            resid -= v * v;
            coeffs.push(v);
        }
        let scale = reference[j].max(gram[(j, j)]);
        if scale > 0.0 && resid > tol * scale {
            coeffs.push(resid.sqrt());
            chol.push(coeffs);
            kept.push(j);
        }
    }
    kept
}
