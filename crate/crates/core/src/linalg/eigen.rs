//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Maximum number of full cyclic sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;
/// Convergence when the off-diagonal Frobenius norm drops below this
/// fraction of `‖G‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Allowed absolute asymmetry, relative to `max(1, max|G|)`.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
///
/// Column `i` of `eigenvectors` pairs with `eigenvalues[i]`. Equal
/// eigenvalues keep the order of their original diagonal positions.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
    pub sweeps: usize,
}

impl EigResult {
    /// Eigenvalues with round-off negatives clamped to zero, for
    /// positive-semidefinite inputs such as covariance matrices.
    pub fn clamped_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| l.max(0.0)).collect()
    }

    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }
}

/// Diagonalizes a symmetric matrix.
pub fn sym_eig(g: &DenseMatrix) -> Result<EigResult> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            g.cols()
        )));
    }
    let scale = g.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (g.get(i, j) - g.get(j, i)).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::NotSymmetric { i, j, diff });
            }
        }
    }

    let mut a = g.as_slice().to_vec();
    // symmetrize exactly so rotations see a consistent matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = DenseMatrix::identity(n).into_vec();
    let norm = g.frobenius_norm();
    let target = OFF_DIAGONAL_TOL * norm;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a, n);
        if off <= target {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, n, p, q);
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep ascending original index
    order.sort_by(|&x, &y| diag[y].partial_cmp(&diag[x]).unwrap_or(std::cmp::Ordering::Equal));

    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, dst, v[r * n + src]);
        }
    }
    Ok(EigResult { eigenvalues, eigenvectors: vecs, sweeps })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation that annihilates `a[p][q]`.
fn rotate(a: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = a[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
    a[p * n + q] = 0.0;
    a[q * n + p] = 0.0;

    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = c * vkp - s * vkq;
        v[k * n + q] = s * vkp + c * vkq;
    }
}
