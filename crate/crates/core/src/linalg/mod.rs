//! Dense linear algebra used by the redundancy analysis: centering,
//! symmetric eigendecomposition, reduced SVD, orthogonal projection and
//! trace-based variance.
//!
//! Everything here is a pure function of its inputs.

mod eigen;
mod matrix;
mod svd;

pub use eigen::{sym_eig, EigResult, MAX_SWEEPS, OFF_DIAGONAL_TOL, SYMMETRY_TOL};
pub use matrix::DenseMatrix;
pub(crate) use matrix::{matmul_into, matmul_t_into, t_matmul_into};
pub use svd::{reduced_svd_direct, reduced_svd_via_gram, ReducedSvd, DIRECT_RANK_TOL, GRAM_RANK_TOL};

use crate::error::{Error, Result};

/// Subtracts the column means. Returns the centered matrix and the means
/// that were removed, so `centered + means` restores the input.
pub fn mean_normalize(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let (n, m) = a.shape();
    if let Some(pos) = a.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: pos / m, col: pos % m });
    }
    let mut means = column_means(a);
    let mut out = a.clone();
    subtract_row_vector(&mut out, &means);
    // second pass removes the rounding residue of the first
    let residue = column_means(&out);
    subtract_row_vector(&mut out, &residue);
    for (mu, r) in means.iter_mut().zip(&residue) {
        *mu += r;
    }
    debug_assert_eq!(out.rows(), n);
    Ok((out, means))
}

fn column_means(a: &DenseMatrix) -> Vec<f64> {
    let (n, m) = a.shape();
    let mut sums = vec![0.0; m];
    for i in 0..n {
        for (s, v) in sums.iter_mut().zip(a.row(i)) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / n as f64).collect()
}

fn subtract_row_vector(a: &mut DenseMatrix, v: &[f64]) {
    for i in 0..a.rows() {
        for (x, mu) in a.row_mut(i).iter_mut().zip(v) {
            *x -= mu;
        }
    }
}

/// Orthogonal projection of `a_r` onto the column span of the orthonormal
/// basis `u`: `(U Uᵀ) A_r`, evaluated as `U (Uᵀ A_r)`.
pub fn project_onto_basis(u: &DenseMatrix, a_r: &DenseMatrix) -> Result<DenseMatrix> {
    if u.rows() != a_r.rows() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows but the projected matrix has {}",
            u.rows(),
            a_r.rows()
        )));
    }
    let coeffs = u.t_matmul(a_r)?;
    u.matmul(&coeffs)
}

/// `tr(AᵀA) / (n - 1)`: the total variance of a mean-normalized matrix.
pub fn trace_variance(a: &DenseMatrix, n_samples: usize) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::TooFewSamples(n_samples));
    }
    Ok(a.sum_of_squares() / (n_samples - 1) as f64)
}

/// Sample covariance `AᵀA / (n - 1)` of an already centered matrix.
pub fn covariance(a_centered: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a_centered.rows();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    Ok(a_centered.gram().scale(1.0 / (n - 1) as f64))
}

/// Principal-component variances of a centered matrix, i.e. the clamped
/// eigenvalues of its covariance in descending order.
pub fn pca_variances(a_centered: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(sym_eig(&covariance(a_centered)?)?.clamped_eigenvalues())
}
