//! Dense symmetric helpers: minimum eigenvalue via Householder
//! tridiagonalization + Sturm bisection, and symmetric square-root factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{MooError, Result};

/// Householder reduction of a symmetric matrix to tridiagonal form.
/// Returns (diagonal, off-diagonal). Only the tridiagonal data is kept;
/// eigenvectors are not needed for the bisection path.
pub fn tridiagonalize(a: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n.saturating_sub(1)];

    for k in 0..n.saturating_sub(2) {
        // annihilate column k below the first subdiagonal
        let mut alpha = 0.0f64;
        for i in k + 1..n {
            alpha += m[(i, k)] * m[(i, k)];
        }
        alpha = alpha.sqrt();
        if alpha == 0.0 {
            continue;
        }
        if m[(k + 1, k)] > 0.0 {
            alpha = -alpha;
        }
        let r2 = alpha * alpha - m[(k + 1, k)] * alpha;
        if r2 <= 0.0 {
            continue;
        }
        let mut v = DVector::zeros(n);
        v[k + 1] = m[(k + 1, k)] - alpha;
        for i in k + 2..n {
            v[i] = m[(i, k)];
        }

        // m <- H m H with H = I - v v^T / r2 (note v^T v = 2 r2)
        let w = &m * &v;
        let scale = v.dot(&w) / (2.0 * r2);
        let u = (&w - &v * scale) * (1.0 / r2);
        // symmetric rank-2 update: m -= v u^T + u v^T
        for i in 0..n {
            let vi = v[i];
            let ui = u[i];
            if vi == 0.0 && ui == 0.0 {
                continue;
            }
            for j in 0..n {
                m[(i, j)] -= vi * u[j] + ui * v[j];
            }
        }
    }
    for i in 0..n {
        d[i] = m[(i, i)];
    }
    for i in 0..n.saturating_sub(1) {
        e[i] = m[(i + 1, i)];
    }
    (d, e)
}

/// Number of eigenvalues of the tridiagonal (d, e) strictly below `x`,
/// by the Sturm sequence of the LDL^T recurrence.
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let n = d.len();
    let mut count = 0usize;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..n {
        let denom = if q == 0.0 { 1e-300 } else { q };
        q = d[i] - x - e[i - 1] * e[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Minimum eigenvalue of a symmetric matrix by tridiagonalization and
/// bisection. Exact to ~1e-14 relative on the Gershgorin scale.
pub fn eig_min_symmetric(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(MooError::DimensionMismatch(format!("{}x{}", a.nrows(), a.ncols())));
    }
    if n == 1 {
        return Ok(a[(0, 0)]);
    }
    let (d, e) = tridiagonalize(a);

    // Gershgorin bounds for the tridiagonal
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let left = if i > 0 { e[i - 1].abs() } else { 0.0 };
        let right = if i < n - 1 { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - left - right);
        hi = hi.max(d[i] + left + right);
    }
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    let (mut lo, mut hi) = (lo - scale * 1e-12, hi + scale * 1e-12);

    let mut iters = 0usize;
    while hi - lo > 1e-15 * scale {
        let mid = 0.5 * (lo + hi);
        if count_below(&d, &e, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
        if iters > 200 {
            return Err(MooError::EigenFailure(format!(
                "bisection stalled: interval [{lo}, {hi}]"
            )));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Symmetric square root and inverse square root of a positive definite
/// matrix, from the full symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymSqrt {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl SymSqrt {
    pub fn condition(&self) -> f64 {
        self.eig_max / self.eig_min
    }
}

pub fn sym_sqrt_factors(b: &DMatrix<f64>, cond_cap: f64) -> Result<SymSqrt> {
    let n = b.nrows();
    if n == 0 || b.ncols() != n {
        return Err(MooError::DimensionMismatch(format!("{}x{}", b.nrows(), b.ncols())));
    }
    let eig = nalgebra::SymmetricEigen::new(b.clone());
    let mut eig_min = f64::INFINITY;
    let mut eig_max = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        eig_min = eig_min.min(l);
        eig_max = eig_max.max(l);
    }
    if eig_min <= 0.0 {
        return Err(MooError::NotPositiveDefinite(format!("min eigenvalue {eig_min:.3e}")));
    }
    let cond = eig_max / eig_min;
    if cond > cond_cap {
        return Err(MooError::IllConditioned { cond, cap: cond_cap });
    }
    let v = &eig.eigenvectors;
    let mut sqrt = DMatrix::zeros(n, n);
    let mut inv_sqrt = DMatrix::zeros(n, n);
    for k in 0..n {
        let s = eig.eigenvalues[k].sqrt();
        let col = v.column(k);
        for i in 0..n {
            for j in 0..n {
                sqrt[(i, j)] += s * col[i] * col[j];
                inv_sqrt[(i, j)] += col[i] * col[j] / s;
            }
        }
    }
    Ok(SymSqrt { sqrt, inv_sqrt, eig_min, eig_max })
}
