//! Spin Chern numbers from transfer matrices at the Fermi level.
//!
//! For a spin block in Jacobi form, the row equation at fixed momentum `k`
//! along direction 1 reads `A phi_{n-1} + M phi_n + A^* phi_{n+1} = E phi_n`.
//! The transfer matrix
//!
//! ```text
//! T(k) = [ (E - M(k)) A(k)^{-1}   -A(k)^* ]
//!        [        A(k)^{-1}           0   ]
//! ```
//!
//! maps `(A psi_m, psi_{m-1})` to `(A psi_{m+1}, psi_m)` with `psi_m = phi_{-m}`,
//! i.e. it propagates towards decreasing `n2`. Its contracting subspace is
//! mapped to a unitary `U(k)` whose determinant winds once per unit of Chern
//! number; the orientation relative to the Brillouin-zone Chern number is
//! fixed by [`ORIENTATION`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, eigvals, eye, frobenius, inverse, max_abs, orthonormal_columns, CMat, I};
use crate::model::{to_jacobi_form, JacobiForm, ModelSpec};

/// Largest condition number of `A(k)` or of the `U` denominator.
pub const MAX_CONDITION: f64 = 1e12;
/// Width of the forbidden annulus around the unit circle.
pub const HYPERBOLIC_MARGIN: f64 = 1e-6;
/// Winding per unit of Brillouin-zone Chern number. `T(k)` propagates towards
/// decreasing `n2`, which reverses the orientation of the `(k, n2)` cylinder.
pub const ORIENTATION: i64 = -1;

/// Phase step above which a k-interval is bisected.
const REFINE_STEP: f64 = PI / 2.0;
const MAX_REFINEMENTS: u32 = 2;
const MAX_DEFECT: f64 = 0.05;

/// `T(k)` for the block `jf` at energy `e_g`, without the hyperbolicity check.
pub fn transfer_matrix_unchecked(jf: &JacobiForm, e_g: f64, k: f64) -> Result<CMat> {
    let a = jf.a_matrix(k);
    let cond = condition_number(&a)?;
    if !(cond < MAX_CONDITION) {
        return Err(Error::TransferUndefined { k, cond });
    }
    let ainv = inverse(&a);
    let r = jf.dim();
    let em = &crate::linalg::scale(&eye(r), c64::new(e_g, 0.0)) - &jf.row_matrix(k);
    let top_left = &em * &ainv;
    Ok(Mat::from_fn(2 * r, 2 * r, |i, j| match (i < r, j < r) {
        (true, true) => top_left[(i, j)],
        (true, false) => -a[(j - r, i)].conj(),
        (false, true) => ainv[(i - r, j)],
        (false, false) => c64::new(0.0, 0.0),
    }))
}

/// Smallest `||mu| - 1|` over the eigenvalues of `t`.
pub fn hyperbolicity_margin(t: &CMat) -> Result<f64> {
    Ok(eigvals(t)?.iter().map(|m| (m.norm() - 1.0).abs()).fold(f64::INFINITY, f64::min))
}

/// Largest mismatch of the pairing `mu <-> 1 / conj(mu)`, relative to `|mu|`.
pub fn reflection_pairing_residual(t: &CMat) -> Result<f64> {
    let mu = eigvals(t)?;
    let mut worst = 0.0f64;
    for m in &mu {
        let partner = c64::new(1.0, 0.0) / m.conj();
        let best = mu.iter().map(|x| (x - partner).norm() / partner.norm()).fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    Ok(worst)
}

/// `T(k)` with the hyperbolicity check.
pub fn transfer_matrix(jf: &JacobiForm, e_g: f64, k: f64) -> Result<CMat> {
    let t = transfer_matrix_unchecked(jf, e_g, k)?;
    let margin = hyperbolicity_margin(&t)?;
    if margin < HYPERBOLIC_MARGIN {
        return Err(Error::NotHyperbolic { k, margin });
    }
    Ok(t)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(c: &CMat) -> Result<CMat> {
    let n = c.nrows();
    let mut x = c.clone();
    for it in 0..100 {
        let xi = inverse(&x);
        // determinant-free norm scaling speeds up the first iterations
        let g = if it < 8 { (frobenius(&xi) / frobenius(&x)).sqrt() } else { 1.0 };
        let next = Mat::from_fn(n, n, |i, j| (x[(i, j)] * g + xi[(i, j)] / g) * 0.5);
        let diff = max_abs(&(&next - &x));
        x = next;
        if diff <= 1e-14 * max_abs(&x).max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::Linalg("matrix sign iteration did not converge".into()))
}

/// Orthonormal frame of the contracting invariant subspace of `t`.
///
/// Uses the Cayley transform `(T + 1)^{-1}(T - 1)`, which sends the open unit
/// disc to the open left half plane, and the matrix sign function; Jordan
/// blocks are handled without computing eigenvectors.
pub fn stable_subspace(t: &CMat, expected: usize) -> Result<CMat> {
    let n = t.nrows();
    let id = eye(n);
    let c = &inverse(&(t + &id)) * &(t - &id);
    let sign = matrix_sign(&c)?;
    let proj = Mat::from_fn(n, n, |i, j| (id[(i, j)] - sign[(i, j)]) * 0.5);
    let tr: f64 = (0..n).map(|i| proj[(i, i)].re).sum();
    let contracting = tr.round().max(0.0) as usize;
    if contracting != expected || (tr - tr.round()).abs() > 1e-6 {
        return Err(Error::SymplecticSplit { contracting, expected });
    }
    orthonormal_columns(&proj, contracting)
}

/// Relative residual of `T Phi` outside `span(Phi)`.
pub fn invariance_residual(t: &CMat, phi: &CMat) -> f64 {
    let tp = t * phi;
    let outside = &tp - &(phi * &(phi.adjoint() * &tp));
    frobenius(&outside) / frobenius(&tp).max(f64::MIN_POSITIVE)
}

/// `U = (1, -i) Phi [(1, i) Phi]^{-1}` for a `2r x r` frame.
pub fn u_matrix(phi: &CMat, k: f64) -> Result<CMat> {
    let r = phi.ncols();
    if phi.nrows() != 2 * r {
        return Err(Error::DimensionMismatch(format!("frame is {}x{}", phi.nrows(), r)));
    }
    let num = Mat::from_fn(r, r, |i, j| phi[(i, j)] - I * phi[(i + r, j)]);
    let den = Mat::from_fn(r, r, |i, j| phi[(i, j)] + I * phi[(i + r, j)]);
    let cond = condition_number(&den)?;
    if !(cond < MAX_CONDITION) {
        return Err(Error::UUndefined { k, cond });
    }
    Ok(&num * &inverse(&den))
}

pub fn unitarity_residual(u: &CMat) -> f64 {
    max_abs(&(&(u * u.adjoint()) - &eye(u.nrows())))
}

fn det(a: &CMat) -> c64 {
    a.determinant()
}

/// Per-k diagnostics: hyperbolicity margin, unitarity residual of `U`, `arg det U`.
#[derive(Debug, Clone, Serialize)]
pub struct KDiagnostic {
    pub k: f64,
    pub margin: f64,
    pub residual: f64,
    pub phase: f64,
}

/// Everything computed at one momentum.
#[derive(Debug, Clone)]
pub struct Fiber {
    pub k: f64,
    pub det_u: c64,
    pub diag: KDiagnostic,
    pub pairing: f64,
    pub invariance: f64,
}

pub fn fiber(jf: &JacobiForm, e_g: f64, k: f64) -> Result<Fiber> {
    let t = transfer_matrix_unchecked(jf, e_g, k)?;
    let margin = hyperbolicity_margin(&t)?;
    if margin < HYPERBOLIC_MARGIN {
        return Err(Error::NotHyperbolic { k, margin });
    }
    let phi = stable_subspace(&t, jf.dim())?;
    let u = u_matrix(&phi, k)?;
    let d = det(&u);
    Ok(Fiber {
        k,
        det_u: d,
        diag: KDiagnostic { k, margin, residual: unitarity_residual(&u), phase: d.arg() },
        pairing: reflection_pairing_residual(&t)?,
        invariance: invariance_residual(&t, &phi),
    })
}

/// Winding number of a phase function sampled on a uniform grid of `[-pi, pi)`.
#[derive(Debug, Clone, Serialize)]
pub struct Winding {
    pub ch: i64,
    pub phase_defect: f64,
    pub total_phase: f64,
    pub refinements: usize,
}

fn principal(d: f64) -> f64 {
    let mut x = d.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Accumulates `arg f(k)` over `n_k` steps, bisecting steps whose principal
/// phase difference exceeds `pi/2` (at most twice). Points where `f` fails
/// with an undefined-matrix error are moved by half a grid step.
pub fn winding_number(f: impl Fn(f64) -> Result<c64> + Sync, n_k: usize) -> Result<Winding> {
    if n_k < 2 {
        return Err(Error::invalid("winding needs at least two k-points"));
    }
    let h = 2.0 * PI / n_k as f64;
    let eval = |k: f64| -> Result<(f64, c64)> {
        match f(k) {
            Err(Error::TransferUndefined { .. } | Error::UUndefined { .. }) => {
                let k2 = k + 0.5 * h;
                f(k2).map(|v| (k2, v))
            }
            other => other.map(|v| (k, v)),
        }
    };
    let grid: Vec<(f64, c64)> = (0..n_k).into_par_iter().map(|j| eval(-PI + h * j as f64)).collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut refinements = 0;
    for j in 0..n_k {
        let (ka, va) = grid[j];
        let (kb, vb) = if j + 1 < n_k { grid[j + 1] } else { (grid[0].0 + 2.0 * PI, grid[0].1) };
        total += step(&f, ka, va, kb, vb, 0, &mut refinements)?;
    }
    let w = total / (2.0 * PI);
    let ch = w.round();
    let phase_defect = (w - ch).abs();
    if phase_defect >= MAX_DEFECT {
        return Err(Error::WindingUnreliable { defect: phase_defect });
    }
    Ok(Winding { ch: ch as i64, phase_defect, total_phase: total, refinements })
}

fn step(
    f: &(impl Fn(f64) -> Result<c64> + Sync),
    ka: f64,
    va: c64,
    kb: f64,
    vb: c64,
    depth: u32,
    count: &mut usize,
) -> Result<f64> {
    let d = principal(vb.arg() - va.arg());
    if d.abs() <= REFINE_STEP {
        return Ok(d);
    }
    if depth == MAX_REFINEMENTS {
        return Err(Error::InsufficientResolution { k: ka, step: d.abs() });
    }
    *count += 1;
    let km = 0.5 * (ka + kb);
    let vm = f(km)?;
    Ok(step(f, ka, va, km, vm, depth + 1, count)? + step(f, km, vm, kb, vb, depth + 1, count)?)
}

/// Winding of `det U(k)` for one spin block, plus per-k diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct BlockResult {
    pub level: f64,
    pub winding: Winding,
    pub max_unitarity_residual: f64,
    pub max_pairing_residual: f64,
    pub max_invariance_residual: f64,
    pub min_margin: f64,
    #[serde(skip)]
    pub diagnostics: Vec<KDiagnostic>,
}

pub fn block_winding(jf: &JacobiForm, e_g: f64, n_k: usize) -> Result<BlockResult> {
    let h = 2.0 * PI / n_k as f64;
    let fibers: Vec<Fiber> = (0..n_k)
        .into_par_iter()
        .map(|j| {
            let k = -PI + h * j as f64;
            match fiber(jf, e_g, k) {
                Err(Error::TransferUndefined { .. } | Error::UUndefined { .. }) => fiber(jf, e_g, k + 0.5 * h),
                other => other,
            }
        })
        .collect::<Result<_>>()?;
    let winding = winding_number(|k| fiber(jf, e_g, k).map(|f| f.det_u), n_k)?;
    let fold = |g: fn(&Fiber) -> f64| fibers.iter().map(g).fold(0.0f64, f64::max);
    Ok(BlockResult {
        level: jf.level,
        winding: Winding { ch: ORIENTATION * winding.ch, ..winding },
        max_unitarity_residual: fold(|f| f.diag.residual),
        max_pairing_residual: fold(|f| f.pairing),
        max_invariance_residual: fold(|f| f.invariance),
        min_margin: fibers.iter().map(|f| f.diag.margin).fold(f64::INFINITY, f64::min),
        diagnostics: fibers.into_iter().map(|f| f.diag).collect(),
    })
}

/// Spin Chern number of every level of a conserving, clean, flux-free model.
pub fn spin_chern_transfer(spec: &ModelSpec, e_g: f64, n_k: usize) -> Result<BTreeMap<String, BlockResult>> {
    if n_k < 64 {
        return Err(Error::invalid(format!("N_k = {n_k} below the minimum of 64")));
    }
    let s = spec.spin()?;
    let mut out = BTreeMap::new();
    for l in s.levels() {
        let jf = to_jacobi_form(spec, l)?;
        out.insert(level_key(l), block_winding(&jf, e_g, n_k)?);
    }
    Ok(out)
}

/// Canonical text form of a spin level, e.g. `+1/2`, `-3/2`.
pub fn level_key(l: f64) -> String {
    let twice = (2.0 * l).round() as i64;
    format!("{}{}/2", if twice < 0 { "-" } else { "+" }, twice.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> CMat {
        Mat::from_fn(1, 1, |_, _| c64::new(x, 0.0))
    }

    fn chain(w: f64) -> JacobiForm {
        JacobiForm {
            t: [scalar(0.0), scalar(1.0), scalar(0.0), scalar(0.0)],
            w: scalar(w),
            supercell: [1, 1],
            orbitals: 1,
            level: 0.5,
        }
    }

    #[test]
    fn band_centre_chain_is_not_hyperbolic() {
        let t = transfer_matrix_unchecked(&chain(0.0), 0.0, 0.3).unwrap();
        assert_eq!(t[(0, 1)], c64::new(-1.0, 0.0));
        assert_eq!(t[(1, 0)], c64::new(1.0, 0.0));
        assert_eq!(t[(0, 0)], c64::new(0.0, 0.0));
        let err = transfer_matrix(&chain(0.0), 0.0, 0.3).unwrap_err();
        assert_eq!(err.guard(), Some("not hyperbolic"));
    }

    #[test]
    fn offset_chain_pairs_eigenvalues() {
        // mu^2 + 3 mu + 1 = 0, roots (-3 +- sqrt 5)/2
        let t = transfer_matrix(&chain(3.0), 0.0, 0.0).unwrap();
        let mut mu: Vec<f64> = eigvals(&t).unwrap().iter().map(|m| m.re).collect();
        mu.sort_by(f64::total_cmp);
        let s5 = 5f64.sqrt();
        assert!((mu[0] - (-3.0 - s5) / 2.0).abs() < 1e-12);
        assert!((mu[1] - (-3.0 + s5) / 2.0).abs() < 1e-12);
        assert!(reflection_pairing_residual(&t).unwrap() < 1e-12);
    }

    #[test]
    fn diagonal_frame() {
        let t = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => c64::new(0.5, 0.0),
            (1, 1) => c64::new(2.0, 0.0),
            _ => c64::new(0.0, 0.0),
        });
        let phi = stable_subspace(&t, 1).unwrap();
        assert!((phi[(0, 0)].norm() - 1.0).abs() < 1e-12);
        assert!(phi[(1, 0)].norm() < 1e-12);
        assert!(stable_subspace(&t, 2).is_err());
    }

    #[test]
    fn jordan_block_frame() {
        // 2x2 Jordan block at 1/2 and one at 3, conjugated by a fixed matrix
        let j = Mat::from_fn(4, 4, |i, k| match (i, k) {
            (0, 0) | (1, 1) => c64::new(0.5, 0.0),
            (0, 1) => c64::new(1.0, 0.0),
            (2, 2) | (3, 3) => c64::new(3.0, 0.0),
            (2, 3) => c64::new(1.0, 0.0),
            _ => c64::new(0.0, 0.0),
        });
        let s = Mat::from_fn(4, 4, |i, k| c64::new(((i * 4 + k) as f64 * 0.7).sin() + if i == k { 2.0 } else { 0.0 }, 0.1 * (i as f64 - k as f64)));
        let t = &(&s * &j) * &inverse(&s);
        let phi = stable_subspace(&t, 2).unwrap();
        assert!(invariance_residual(&t, &phi) < 1e-8);
        // the frame spans the first two columns of s
        let target = orthonormal_columns(&Mat::from_fn(4, 2, |i, k| s[(i, k)]), 2).unwrap();
        let overlap = phi.adjoint() * &target;
        let sv = crate::linalg::singular_values(&overlap).unwrap();
        assert!(sv.iter().all(|x| (x - 1.0).abs() < 1e-8), "{sv:?}");
    }

    #[test]
    fn trivial_frames() {
        let up = Mat::from_fn(2, 1, |i, _| c64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        let u = u_matrix(&up, 0.0).unwrap();
        assert!((u[(0, 0)] - c64::new(1.0, 0.0)).norm() < 1e-15);
        let down = Mat::from_fn(2, 1, |i, _| c64::new(if i == 1 { 1.0 } else { 0.0 }, 0.0));
        let u = u_matrix(&down, 0.0).unwrap();
        assert!((u[(0, 0)] - c64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn definitional_windings() {
        let w = winding_number(|_| Ok(c64::new(1.0, 0.0)), 64).unwrap();
        assert_eq!(w.ch, 0);
        let w = winding_number(|k| Ok(c64::from_polar(1.0, k)), 64).unwrap();
        assert_eq!(w.ch, 1);
        assert!(w.phase_defect < 1e-12);
        let w = winding_number(|k| Ok(c64::from_polar(1.0, -3.0 * k)), 64).unwrap();
        assert_eq!(w.ch, -3);
    }

    #[test]
    fn coarse_grid_refines_or_fails() {
        // a phase jump of 0.9 pi cannot be resolved by bisection
        let jump = |k: f64| Ok(c64::from_polar(1.0, if k < 0.1 { 0.0 } else { 0.9 * PI }));
        let err = winding_number(jump, 64).unwrap_err();
        assert_eq!(err.guard(), Some("insufficient k-resolution"));
        // 40 turns on 64 points: steps of 3.9 rad, rescued by two bisections
        let w = winding_number(|k| Ok(c64::from_polar(1.0, 40.0 * k)), 64).unwrap();
        assert_eq!(w.ch, 40);
        assert!(w.refinements > 0);
    }

    #[test]
    fn determinant() {
        let a = Mat::from_fn(3, 3, |i, j| c64::new((i + 2 * j) as f64 + if i == j { 1.0 } else { 0.0 }, (i * j) as f64 * 0.3));
        let ev = eigvals(&a).unwrap();
        let prod = ev.iter().fold(c64::new(1.0, 0.0), |p, x| p * x);
        assert!((det(&a) - prod).norm() < 1e-10 * prod.norm());
    }

    #[test]
    fn level_keys() {
        assert_eq!(level_key(0.5), "+1/2");
        assert_eq!(level_key(-1.5), "-3/2");
    }
}
