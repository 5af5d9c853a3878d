//! Thin dense linear-algebra layer over `faer`.
//!
//! Everything in the toolkit is a finite complex matrix, so this module only
//! wraps the handful of decompositions the physics code needs and adds the
//! residual measures used by the invariant checks.

use faer::{Mat, Side};
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

pub type CMat = Mat<c64>;

pub const I: c64 = c64 { re: 0.0, im: 1.0 };

pub fn zeros(rows: usize, cols: usize) -> CMat {
    Mat::zeros(rows, cols)
}

pub fn eye(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) })
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn conj(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

pub fn scale(a: &CMat, s: c64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

/// `[a, b] = ab - ba`
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn frobenius(a: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// `max |a - a*|`, zero for exactly Hermitian input.
pub fn hermiticity_residual(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

pub fn trace(a: &CMat) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

fn check_square(a: &CMat, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Hermitian eigendecomposition, eigenvalues ascending, eigenvectors in columns.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    check_square(a, "eigh")?;
    if a.nrows() == 0 {
        return Ok((Vec::new(), zeros(0, 0)));
    }
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("self-adjoint eigensolver: {e:?}")))?;
    let s = evd.S();
    let vals = (0..a.nrows()).map(|i| s[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn eigvalsh(a: &CMat) -> Result<Vec<f64>> {
    check_square(a, "eigvalsh")?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("self-adjoint eigensolver: {e:?}")))
}

/// Eigenvalues of a general complex matrix (unordered).
pub fn eigvals(a: &CMat) -> Result<Vec<c64>> {
    check_square(a, "eigvals")?;
    a.eigenvalues()
        .map_err(|e| Error::Linalg(format!("eigensolver: {e:?}")))
}

pub fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values()
        .map_err(|e| Error::Linalg(format!("svd: {e:?}")))
}

/// 2-norm condition number (`inf` for singular input).
pub fn condition_number(a: &CMat) -> Result<f64> {
    let s = singular_values(a)?;
    let (max, min) = (s[0], s[s.len() - 1]);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Inverse of a square matrix via partially pivoted LU.
pub fn inverse(a: &CMat) -> CMat {
    use faer::linalg::solvers::DenseSolveCore;
    a.partial_piv_lu().inverse()
}

/// Solves `a x = b`.
pub fn solve(a: &CMat, b: &CMat) -> CMat {
    use faer::linalg::solvers::Solve;
    a.partial_piv_lu().solve(b)
}

/// Orthonormal basis of the dominant `rank`-dimensional column space.
pub fn orthonormal_columns(a: &CMat, rank: usize) -> Result<CMat> {
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Linalg(format!("svd: {e:?}")))?;
    Ok(svd.U().subcols(0, rank).to_owned())
}

/// Selects columns of `a`.
pub fn columns(a: &CMat, idx: &[usize]) -> CMat {
    Mat::from_fn(a.nrows(), idx.len(), |i, j| a[(i, idx[j])])
}

/// `V diag(f) V*` for the columns of `v`.
pub fn spectral_sum(v: &CMat, weights: &[f64]) -> CMat {
    let scaled = Mat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * weights[j]);
    &scaled * v.adjoint()
}

fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest-magnitude eigenvalue of a Hermitian operator given as a matvec.
///
/// Lanczos with full reorthogonalization from a fixed start vector, stopped
/// when the Ritz residual of the extreme pair drops below `tol` relative to
/// the estimate.
pub fn hermitian_norm(n: usize, apply: impl Fn(&[c64]) -> Vec<c64>, tol: f64) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    // Deterministic start vector with no special structure.
    let mut q: Vec<c64> = (0..n)
        .map(|i| c64::new(1.0 + 0.37 * ((i as f64) * 0.754_877_666).sin(), 0.11 * ((i as f64) * 1.3).cos()))
        .collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|x| *x /= nq);

    let max_steps = n.min(300);
    let mut basis: Vec<Vec<c64>> = Vec::with_capacity(max_steps);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = 0.0;
    for step in 0..max_steps {
        let mut w = apply(&q);
        let a = dot(&q, &w).re;
        basis.push(q.clone());
        alpha.push(a);
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bnext = norm(&w);

        let m = alpha.len();
        let tri = Mat::from_fn(m, m, |i, j| {
            if i == j {
                c64::new(alpha[i], 0.0)
            } else if i + 1 == j || j + 1 == i {
                c64::new(beta[i.min(j)], 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let (theta, y) = eigh(&tri)?;
        let (idx, est) = if theta[0].abs() > theta[m - 1].abs() {
            (0, theta[0].abs())
        } else {
            (m - 1, theta[m - 1].abs())
        };
        let resid = bnext * y[(m - 1, idx)].norm();
        if est == 0.0 && bnext < 1e-300 {
            return Ok(0.0);
        }
        if resid <= tol * est.max(f64::MIN_POSITIVE) || bnext < 1e-14 * est.max(1e-300) || step + 1 == n {
            return Ok(est);
        }
        if (est - last).abs() <= 1e-15 * est && step > 50 {
            return Ok(est);
        }
        last = est;
        beta.push(bnext);
        q = w.into_iter().map(|x| x / bnext).collect();
    }
    Ok(last)
}

/// Operator 2-norm of a general matrix, `sqrt(lambda_max(a* a))`.
pub fn operator_norm(a: &CMat) -> Result<f64> {
    let ah = adjoint(a);
    let n = a.ncols();
    let apply = |x: &[c64]| {
        let v = Mat::from_fn(n, 1, |i, _| x[i]);
        let w = &ah * (a * &v);
        (0..n).map(|i| w[(i, 0)]).collect::<Vec<_>>()
    };
    Ok(hermitian_norm(n, apply, 1e-12)?.sqrt())
}
