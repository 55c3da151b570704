//! Dense linear-algebra helpers shared by the modules.
//!
//! Rank decisions use singular values with the threshold
//! `max(rows, cols) * eps * sigma_max`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Singular-value cutoff for a matrix of the given shape.
pub fn rank_tolerance(nrows: usize, ncols: usize, sigma_max: f64) -> f64 {
    nrows.max(ncols) as f64 * f64::EPSILON * sigma_max
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Numerical rank via singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
    s.iter().filter(|&&v| v > tol).count()
}

/// Moore-Penrose pseudo-inverse through the SVD.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = rank_tolerance(r, c, smax);
    let k = s.len();
    // V * diag(1/s) * U^T, skipping singular values at or below the cutoff.
    let mut out = DMatrix::zeros(c, r);
    for i in 0..k {
        if s[i] <= tol || s[i] == 0.0 {
            continue;
        }
        let vi = v_t.row(i).transpose();
        out.ger(1.0 / s[i], &vi, &u.column(i), 1.0);
    }
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorization with a single jitter retry.
///
/// On failure, adds `jitter_scale * tr(m) / n * I` once and tries again.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, jitter_scale: f64) -> Option<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch);
    }
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let jitter = jitter_scale * m.trace().abs() / n as f64;
    if !(jitter > 0.0) || !jitter.is_finite() {
        return None;
    }
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted)
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Vertical concatenation.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let ncols = blocks.first().map_or(0, |b| b.ncols());
    let nrows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn vstack_vec(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(*p);
        r += p.len();
    }
    out
}
