//! Thomas algorithm for tridiagonal systems.

use alloc::vec::Vec;

/// Solves `A x = rhs` in place, with `lower[i] = A[i][i-1]` (`lower[0]` unused),
/// `diag[i] = A[i][i]` and `upper[i] = A[i][i+1]` (last entry unused).
///
/// No pivoting; the callers only build diagonally dominant M-matrices or SPD matrices.
pub(crate) fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    debug_assert!(lower.len() == n && diag.len() == n && upper.len() == n);
    if n == 0 {
        return;
    }
    let mut c = Vec::with_capacity(n);
    let mut denom = diag[0];
    c.push(upper[0] / denom);
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        c.push(upper[i] / denom);
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn matches_dense_product() {
        let lower = vec![0.0, -1.0, -2.0, -0.5, -1.0];
        let diag = vec![4.0, 5.0, 6.0, 3.0, 4.0];
        let upper = vec![-1.0, -1.5, -1.0, -2.0, 0.0];
        let x = vec![1.0, -2.0, 0.5, 3.0, 0.25];
        let mut rhs: Vec<f64> = (0..5)
            .map(|i| {
                let mut s = diag[i] * x[i];
                if i > 0 {
                    s += lower[i] * x[i - 1];
                }
                if i < 4 {
                    s += upper[i] * x[i + 1];
                }
                s
            })
            .collect();
        solve(&lower, &diag, &upper, &mut rhs);
        for (a, b) in rhs.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
