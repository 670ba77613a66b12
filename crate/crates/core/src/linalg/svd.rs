//! Reduced singular value decompositions of tall activation matrices.

use log::warn;

use super::eigen::sym_eig;
use super::DenseMatrix;
use crate::error::Result;

/// Relative singular-value cutoff for the Gram route. Singular values
/// recovered from `AᵀA` carry an absolute error of roughly
/// `sqrt(eps) * σ_max`, so anything below this is indistinguishable from
/// zero.
pub const GRAM_RANK_TOL: f64 = 1e-6;
/// Relative singular-value cutoff for the direct (one-sided Jacobi) route.
pub const DIRECT_RANK_TOL: f64 = 1e-10;

const DIRECT_MAX_SWEEPS: usize = 100;
const DIRECT_ORTH_TOL: f64 = 1e-15;

/// `A ≈ U Σ Vᵀ` restricted to the numerically nonzero singular values.
///
/// When `retained_rank == 0` (an all-zero input) both bases are `None`.
#[derive(Debug, Clone)]
pub struct ReducedSvd {
    pub left_basis: Option<DenseMatrix>,
    pub singular_values: Vec<f64>,
    pub right_basis: Option<DenseMatrix>,
    pub retained_rank: usize,
}

impl ReducedSvd {
    pub fn is_zero(&self) -> bool {
        self.retained_rank == 0
    }

    /// `U Σ Vᵀ`, or `None` for a rank-0 decomposition.
    pub fn reconstruct(&self) -> Option<DenseMatrix> {
        let u = self.left_basis.as_ref()?;
        let v = self.right_basis.as_ref()?;
        let mut us = u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        us.matmul_t(v).ok()
    }
}

/// Reduced SVD through the eigendecomposition of the small `f×f` Gram
/// matrix `AᵀA`, then `U = A V Σ⁻¹`.
///
/// Intended for `rows ≥ cols`. The left basis is re-orthonormalized with
/// one modified Gram–Schmidt pass, which leaves its span unchanged but
/// removes the `eps·κ²` orthogonality loss of the Gram route.
pub fn reduced_svd_via_gram(a: &DenseMatrix) -> Result<ReducedSvd> {
    if a.rows() < a.cols() {
        warn!(
            "Gram-route SVD on a wide {}x{} matrix; the direct route is more accurate here",
            a.rows(),
            a.cols()
        );
    }
    let eig = sym_eig(&a.gram())?;
    let sigmas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let sigma_max = sigmas.first().copied().unwrap_or(0.0);
    let rank = if sigma_max > 0.0 {
        sigmas.iter().take_while(|&&s| s > GRAM_RANK_TOL * sigma_max).count()
    } else {
        0
    };
    if rank == 0 {
        return Ok(zero_svd());
    }

    let f = a.cols();
    let mut v = DenseMatrix::zeros(f, rank);
    for i in 0..f {
        for j in 0..rank {
            v.set(i, j, eig.eigenvectors.get(i, j));
        }
    }
    let mut u = a.matmul(&v)?;
    for i in 0..u.rows() {
        for (x, s) in u.row_mut(i).iter_mut().zip(&sigmas) {
            *x /= s;
        }
    }
    let rank = orthonormalize_columns(&mut u, &mut v, &sigmas[..rank]);
    if rank == 0 {
        return Ok(zero_svd());
    }
    Ok(ReducedSvd {
        left_basis: Some(u),
        singular_values: sigmas[..rank].to_vec(),
        right_basis: Some(v),
        retained_rank: rank,
    })
}

/// Reduced SVD by one-sided (Hestenes) Jacobi directly on `A`. Accurate for
/// any aspect ratio, including `rows < cols`.
pub fn reduced_svd_direct(a: &DenseMatrix) -> Result<ReducedSvd> {
    let (n, f) = a.shape();
    // work on columns stored contiguously
    let mut cols: Vec<Vec<f64>> = (0..f).map(|j| a.column(j)).collect();
    let mut v = DenseMatrix::identity(f).into_vec();

    for _ in 0..DIRECT_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..f {
            for q in (p + 1)..f {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= DIRECT_ORTH_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let xp = *x;
                    let xq = *y;
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
                for k in 0..f {
                    let vp = v[k * f + p];
                    let vq = v[k * f + q];
                    v[k * f + p] = c * vp - s * vq;
                    v[k * f + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));
    let sigma_max = norms[order[0]];
    let rank = if sigma_max > 0.0 {
        order.iter().take_while(|&&j| norms[j] > DIRECT_RANK_TOL * sigma_max).count()
    } else {
        0
    };
    if rank == 0 {
        return Ok(zero_svd());
    }

    let mut u = DenseMatrix::zeros(n, rank);
    let mut vr = DenseMatrix::zeros(f, rank);
    let mut sigmas = Vec::with_capacity(rank);
    for (dst, &src) in order.iter().take(rank).enumerate() {
        let s = norms[src];
        sigmas.push(s);
        for i in 0..n {
            u.set(i, dst, cols[src][i] / s);
        }
        for k in 0..f {
            vr.set(k, dst, v[k * f + src]);
        }
    }
    Ok(ReducedSvd {
        left_basis: Some(u),
        singular_values: sigmas,
        right_basis: Some(vr),
        retained_rank: rank,
    })
}

fn zero_svd() -> ReducedSvd {
    ReducedSvd { left_basis: None, singular_values: Vec::new(), right_basis: None, retained_rank: 0 }
}

/// Modified Gram–Schmidt on the columns of `u`, in place. Columns that
/// collapse are dropped from both `u` and `v`. Returns the surviving rank.
fn orthonormalize_columns(u: &mut DenseMatrix, v: &mut DenseMatrix, sigmas: &[f64]) -> usize {
    let (n, k) = u.shape();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| u.column(j)).collect();
    let mut keep = Vec::with_capacity(k);
    for j in 0..k {
        for &i in &keep {
            let prev: &Vec<f64> = &cols[i];
            let d: f64 = prev.iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            let prev = prev.clone();
            for (x, p) in cols[j].iter_mut().zip(&prev) {
                *x -= d * p;
            }
        }
        let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for x in cols[j].iter_mut() {
                *x /= norm;
            }
            keep.push(j);
        } else {
            warn!("dropping near-degenerate basis column {j} (σ = {:e})", sigmas[j]);
        }
    }
    let rank = keep.len();
    if rank == k {
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                u.set(i, j, c[i]);
            }
        }
        return rank;
    }
    if rank == 0 {
        return 0;
    }
    let mut nu = DenseMatrix::zeros(n, rank);
    let mut nv = DenseMatrix::zeros(v.rows(), rank);
    for (dst, &src) in keep.iter().enumerate() {
        for i in 0..n {
            nu.set(i, dst, cols[src][i]);
        }
        for i in 0..v.rows() {
            nv.set(i, dst, v.get(i, src));
        }
    }
    *u = nu;
    *v = nv;
    rank
}
