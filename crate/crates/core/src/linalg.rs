//! Small dense solvers.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Solve `A x = b` for symmetric positive definite `A` by Cholesky factorization.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::Degenerate("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[[i, k]] * y[k]).sum();
        y[i] = (b[i] - s) / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[[k, i]] * x[k]).sum();
        x[i] = (y[i] - s) / l[[i, i]];
    }
    Ok(x)
}

/// Least-squares solution of `min ‖X β - y‖` by Householder QR.
/// Fails with a degenerate-input error when `X` is (numerically) rank deficient.
pub fn lstsq_qr(x: &Array2<f64>, y: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, n) = x.dim();
    if m < n {
        return Err(Error::Degenerate(format!(
            "{m} observations cannot determine {n} coefficients"
        )));
    }
    let mut r = x.clone();
    let mut qty = y.clone();
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let norm = (k..m).map(|i| r[[i, k]] * r[[i, k]]).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale * (m as f64).sqrt() {
            return Err(Error::Degenerate("design matrix is rank deficient".into()));
        }
        let alpha = if r[[k, k]] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| r[[i, k]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * r[[i, j]]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..m {
                    r[[i, j]] -= f * v[i - k];
                }
            }
            let dot: f64 = (k..m).map(|i| v[i - k] * qty[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                qty[i] -= f * v[i - k];
            }
        }
    }
    let diag_max = (0..n).fold(0.0f64, |a, k| a.max(r[[k, k]].abs()));
    if (0..n).any(|k| r[[k, k]].abs() <= 1e-10 * diag_max) {
        return Err(Error::Degenerate("design matrix is rank deficient".into()));
    }
    let mut beta = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| r[[i, j]] * beta[j]).sum();
        beta[i] = (qty[i] - s) / r[[i, i]];
    }
    Ok(beta)
}
