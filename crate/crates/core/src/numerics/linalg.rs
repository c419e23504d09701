//! Small dense solvers for closed-form fits.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Solves `A x = b` for symmetric positive definite `A` (row-major, n x n)
/// by Cholesky factorization.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::shape(
            "matrix is not square with the right-hand side",
        ));
    }
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::degenerate("matrix is not positive definite"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = alloc::vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = alloc::vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

/// Ordinary least squares: coefficients minimizing `||basis^T c - y||`,
/// where `basis` holds one basis vector per row.
pub fn least_squares(basis: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = basis.len();
    if basis.iter().any(|r| r.len() != y.len()) {
        return Err(Error::shape("basis vectors and target differ in length"));
    }
    let mut gram = alloc::vec![0.0; m * m];
    let mut rhs = alloc::vec![0.0; m];
    for i in 0..m {
        for j in 0..=i {
            let d: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
            gram[i * m + j] = d;
            gram[j * m + i] = d;
        }
        rhs[i] = basis[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    solve_spd(&gram, &rhs)
}
