//! Small dense helpers shared across modules.

use crate::{CMatrix, C64};

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Largest entry of `|m - m†|`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn kron_all(factors: &[CMatrix]) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for f in factors {
        out = out.kronecker(f);
    }
    out
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm1 * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a.scale(scale);
    let mut result = CMatrix::identity(n, n);
    let mut term = CMatrix::identity(n, n);
    for k in 1..40 {
        term = &term * &x / C64::new(k as f64, 0.0);
        result += &term;
        if max_abs(&term) < 1e-18 * max_abs(&result).max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Lower-triangular `L` with `a = L L†` for Hermitian PSD `a`. Pivots at or
/// below `tol` zero their column instead of failing.
pub fn psd_cholesky(a: &CMatrix, tol: f64) -> Option<CMatrix> {
    let n = a.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                if s.norm() > tol.sqrt().max(1e-9) {
                    return None;
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}
