//! Thomas algorithm for tridiagonal systems.

/// Solves `lower[j] u[j-1] + diag[j] u[j] + upper[j] u[j+1] = rhs[j]` in
/// place (`rhs` receives the solution). `lower[0]` and `upper[n-1]` are
/// ignored. `scratch` must hold at least `n` entries.
///
/// No pivoting: the callers only build diagonally dominant systems.
pub fn solve_in_place(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) {
    let n = rhs.len();
    debug_assert!(lower.len() >= n && diag.len() >= n && upper.len() >= n && scratch.len() >= n);
    if n == 0 {
        return;
    }
    let mut beta = diag[0];
    rhs[0] /= beta;
    for j in 1..n {
        scratch[j] = upper[j - 1] / beta;
        beta = diag[j] - lower[j] * scratch[j];
        rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= scratch[j + 1] * rhs[j + 1];
    }
}
