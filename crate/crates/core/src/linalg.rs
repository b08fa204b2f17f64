//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration
/// (Rayleigh quotient of the final iterate).
pub fn largest_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |k, _| 1.0 + (k as f64 + 1.0) / (n as f64 + 1.0));
    v /= v.norm();
    let mut rq = 0.0;
    for _ in 0..500 {
        let hv = h * &v;
        let norm = hv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&hv);
        v = hv / norm;
        if (next - rq).abs() <= 1e-12 * next.abs() {
            rq = next;
            break;
        }
        rq = next;
    }
    rq.max((h * &v).norm())
}

/// Solves `h x = rhs` for symmetric PSD `h`. Falls back to a tiny diagonal
/// shift when the plain factorization fails.
pub fn psd_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    for shift in [1e-13, 1e-10, 1e-7] {
        let mut hs = h.clone();
        for k in 0..hs.nrows() {
            hs[(k, k)] += shift * scale;
        }
        if let Some(ch) = hs.cholesky() {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
    }
    None
}

/// Minimum-norm least-squares solution of `a x ≈ b` via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Ridge-regularized least squares through the normal equations, with the
/// SVD route when `ridge` is zero or the factorization fails.
pub fn ridge_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> DVector<f64> {
    if ridge > 0.0 {
        let mut g = a.transpose() * a;
        for k in 0..g.nrows() {
            g[(k, k)] += ridge;
        }
        if let Some(ch) = g.cholesky() {
            let x = ch.solve(&(a.transpose() * b));
            if x.iter().all(|v| v.is_finite()) {
                return x;
            }
        }
    }
    lstsq(a, b)
}
