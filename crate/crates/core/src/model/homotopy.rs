//! Interpolation to the spin-conserving part and the `[H, s^z]` norm.

use faer::Mat;
use num_complex::Complex64 as c64;

use super::build::HamiltonianMatrix;
use crate::error::{Error, Result};
use crate::linalg::{eigh, hermitian_norm, CMat, I};

/// `H(lambda) = H0 + lambda H1` with `H0` the `s^z`-block-diagonal part.
#[derive(Debug, Clone)]
pub struct Homotopy {
    pub h_lambda: CMat,
    pub h0: CMat,
    pub h1: CMat,
}

fn check_dims(h: &CMat, sz: &CMat) -> Result<()> {
    if h.nrows() != h.ncols() || sz.nrows() != sz.ncols() || h.nrows() != sz.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, s^z is {}x{}",
            h.nrows(),
            h.ncols(),
            sz.nrows(),
            sz.ncols()
        )));
    }
    Ok(())
}

fn is_diagonal(a: &CMat) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| i == j || a[(i, j)] == c64::new(0.0, 0.0)))
}

/// Block-diagonal part of `h` with respect to the eigenspaces of `sz`
/// (the pinching `sum_l P_l h P_l`).
pub fn spin_diagonal_part(h: &CMat, sz: &CMat) -> Result<CMat> {
    check_dims(h, sz)?;
    let n = h.nrows();
    if is_diagonal(sz) {
        return Ok(Mat::from_fn(n, n, |i, j| {
            if (sz[(i, i)].re - sz[(j, j)].re).abs() < 1e-12 {
                h[(i, j)]
            } else {
                c64::new(0.0, 0.0)
            }
        }));
    }
    let (vals, vecs) = eigh(sz)?;
    let rotated = &(vecs.adjoint() * h) * &vecs;
    let pinched = Mat::from_fn(n, n, |i, j| {
        if (vals[i] - vals[j]).abs() < 1e-9 {
            rotated[(i, j)]
        } else {
            c64::new(0.0, 0.0)
        }
    });
    Ok(&(&vecs * &pinched) * vecs.adjoint())
}

/// Homotopy from the spin-conserving `H(0)` to `H(1) = H`.
///
/// For `s = 1/2` this coincides with `H + (1 - lambda)/2 (sigma H sigma - H)`,
/// `sigma = 2 s^z`; for larger spins the block-diagonal pinching is the
/// conserving endpoint.
pub fn apply_homotopy(h: &CMat, sz: &CMat, lambda: f64) -> Result<Homotopy> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("homotopy parameter {lambda} outside [0, 1]")));
    }
    let h0 = spin_diagonal_part(h, sz)?;
    let h1 = h - &h0;
    let h_lambda = if lambda == 1.0 {
        h.clone()
    } else {
        Mat::from_fn(h.nrows(), h.ncols(), |i, j| h0[(i, j)] + h1[(i, j)] * lambda)
    };
    Ok(Homotopy { h_lambda, h0, h1 })
}

pub fn apply_homotopy_matrix(h: &HamiltonianMatrix, sz: &CMat, lambda: f64) -> Result<(HamiltonianMatrix, Homotopy)> {
    let hom = apply_homotopy(&h.matrix, sz, lambda)?;
    Ok((h.with_matrix(hom.h_lambda.clone()), hom))
}

/// Operator 2-norm of `[H, s^z]`.
pub fn commutator_norm(h: &CMat, sz: &CMat) -> Result<f64> {
    check_dims(h, sz)?;
    let n = h.nrows();
    let apply = |x: &[c64]| {
        let v = Mat::from_fn(n, 1, |i, _| x[i]);
        let a = h * (sz * &v);
        let b = sz * (h * &v);
        (0..n).map(|i| (a[(i, 0)] - b[(i, 0)]) * I).collect::<Vec<_>>()
    };
    hermitian_norm(n, apply, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator, eye, max_abs, operator_norm};
    use crate::model::{build, Geometry, ModelSpec, TightBinding};

    fn km_torus(rashba: f64) -> (CMat, CMat) {
        let spec = ModelSpec::kane_mele(0.2).with_rashba(rashba);
        let tb = TightBinding::new(&spec).unwrap();
        let h = build(&spec, &Geometry::Torus { n1: 4, n2: 4 }).unwrap();
        let sz = h.sz_full(&tb.spin);
        (h.matrix, sz)
    }

    #[test]
    fn endpoints() {
        let (h, sz) = km_torus(0.05);
        let one = apply_homotopy(&h, &sz, 1.0).unwrap();
        assert_eq!(max_abs(&(&one.h_lambda - &h)), 0.0);
        let zero = apply_homotopy(&h, &sz, 0.0).unwrap();
        assert!(max_abs(&commutator(&zero.h_lambda, &sz)) < 1e-12);
        let half = apply_homotopy(&h, &sz, 0.5).unwrap();
        let lin = &half.h0 + &crate::linalg::scale(&half.h1, c64::new(0.5, 0.0));
        assert!(max_abs(&(&half.h_lambda - &lin)) < 1e-15);
    }

    #[test]
    fn spin_half_matches_sigma_formula() {
        let (h, sz) = km_torus(0.05);
        let sigma = crate::linalg::scale(&sz, c64::new(2.0, 0.0));
        for lambda in [0.0, 0.3, 0.8] {
            let hom = apply_homotopy(&h, &sz, lambda).unwrap();
            let shs = &(&sigma * &h) * &sigma;
            let direct = &h + &crate::linalg::scale(&(&shs - &h), c64::new((1.0 - lambda) / 2.0, 0.0));
            assert!(max_abs(&(&hom.h_lambda - &direct)) < 1e-14);
        }
    }

    #[test]
    fn h1_bound_spin_half() {
        // For s = 1/2 the off-diagonal part has exactly the norm of [H, s^z].
        let (h, sz) = km_torus(0.05);
        let hom = apply_homotopy(&h, &sz, 1.0).unwrap();
        let h1 = operator_norm(&hom.h1).unwrap();
        let c = commutator_norm(&h, &sz).unwrap();
        assert!((h1 - c).abs() < 1e-9 * c, "{h1} vs {c}");
    }

    #[test]
    fn general_sz_basis() {
        // a rotated s^z goes through the eigenvector path
        let (h, sz) = km_torus(0.05);
        let n = h.nrows();
        let u = Mat::from_fn(n, n, |i, j| {
            if i == j {
                c64::new(0.0, 1.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let sz_r = &(&u * &sz) * u.adjoint();
        let a = spin_diagonal_part(&h, &sz).unwrap();
        let b = spin_diagonal_part(&h, &sz_r).unwrap();
        assert!(max_abs(&(&a - &b)) < 1e-12);
    }

    #[test]
    fn commutator_norm_cases() {
        let (h, sz) = km_torus(0.0);
        assert!(commutator_norm(&h, &sz).unwrap() < 1e-12);
        assert_eq!(commutator_norm(&eye(h.nrows()), &sz).unwrap(), 0.0);
        let (h1, sz) = km_torus(0.05);
        let (h2, _) = km_torus(0.10);
        let c1 = commutator_norm(&h1, &sz).unwrap();
        let c2 = commutator_norm(&h2, &sz).unwrap();
        assert!(c1 > 0.0);
        assert!((c2 - 2.0 * c1).abs() < 1e-10 * c2);
        // dense oracle
        let exact = operator_norm(&commutator(&h1, &sz)).unwrap();
        assert!((c1 - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(apply_homotopy(&eye(3), &eye(4), 0.5).is_err());
        assert!(commutator_norm(&eye(3), &eye(4)).is_err());
    }
}
