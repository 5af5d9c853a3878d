//! Block-Jacobi form of a spin-conserving model restricted to one spin level.
//!
//! The lattice is regrouped into supercells `(m1, m2)` large enough that only
//! the nearest supercell translations `v1 = (1,0)`, `v2 = (0,1)`,
//! `v3 = (-1,1)`, `v4 = (1,1)` (and their inverses) are needed:
//! `H_{n + v_j, n} = T_j`, `H_{n, n} = W`.

use std::collections::HashMap;

use faer::Mat;
use num_complex::Complex64 as c64;

use super::lattice::TightBinding;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::linalg::{conj, hermiticity_residual, CMat};

pub const SHIFTS: [[i64; 2]; 4] = [[1, 0], [0, 1], [-1, 1], [1, 1]];

#[derive(Debug, Clone)]
pub struct JacobiForm {
    pub t: [CMat; 4],
    pub w: CMat,
    /// Base cells per supercell in each direction.
    pub supercell: [usize; 2],
    /// Orbitals of the base lattice.
    pub orbitals: usize,
    /// Spin level `l` this block describes.
    pub level: f64,
}

/// Restricts `spec` to spin level `l` and brings it to block-Jacobi form.
pub fn to_jacobi_form(spec: &ModelSpec, l: f64) -> Result<JacobiForm> {
    if let Some(name) = spec.nonconserving_coupling() {
        return Err(Error::invalid(format!("Jacobi form needs s^z conservation, but {name} != 0")));
    }
    if spec.lambda_dis != 0.0 {
        return Err(Error::invalid("Jacobi form needs lambda_dis = 0"));
    }
    if !spec.flux.is_zero() {
        return Err(Error::invalid("Jacobi form needs flux_B = 0"));
    }
    let tb = TightBinding::new(spec)?;
    let m = tb
        .spin
        .s
        .index_of(l)
        .ok_or_else(|| Error::invalid(format!("level {l} is not one of -s..=s for s = {}", spec.s)))?;
    let ro = tb.orbitals();
    let m1 = tb.hops.iter().map(|h| h.shift[0].unsigned_abs()).max().unwrap_or(0).max(1) as i64;
    let m2 = tb.hops.iter().map(|h| h.shift[1].unsigned_abs()).max().unwrap_or(0).max(1) as i64;
    let dim = (m1 * m2) as usize * ro;
    let fold = |c1: i64, c2: i64, o: usize| ((c2 * m1 + c1) as usize) * ro + o;

    let mut w: CMat = Mat::zeros(dim, dim);
    let mut t: [CMat; 4] = std::array::from_fn(|_| Mat::zeros(dim, dim));
    let which: HashMap<[i64; 2], usize> = SHIFTS.iter().enumerate().map(|(j, &v)| (v, j)).collect();

    for hop in &tb.hops {
        let a = hop.amp[(m, m)];
        if a == c64::new(0.0, 0.0) {
            continue;
        }
        for c2 in 0..m2 {
            for c1 in 0..m1 {
                let tgt = [c1 + hop.shift[0], c2 + hop.shift[1]];
                let d = [tgt[0].div_euclid(m1), tgt[1].div_euclid(m2)];
                let (i, j) = (fold(tgt[0].rem_euclid(m1), tgt[1].rem_euclid(m2), hop.to), fold(c1, c2, hop.from));
                if d == [0, 0] {
                    w[(i, j)] += a;
                } else if let Some(&k) = which.get(&d) {
                    t[k][(i, j)] += a;
                } else if which.contains_key(&[-d[0], -d[1]]) {
                    // stored through the partner hop
                } else {
                    return Err(Error::invalid(format!("hop across supercell offset {d:?} has no Jacobi slot")));
                }
            }
        }
    }
    for c2 in 0..m2 {
        for c1 in 0..m1 {
            for o in 0..ro {
                let i = fold(c1, c2, o);
                w[(i, i)] += tb.onsite[o][(m, m)];
            }
        }
    }
    if hermiticity_residual(&w) > 1e-12 {
        return Err(Error::Linalg("intra-cell block is not Hermitian".into()));
    }
    Ok(JacobiForm { t, w, supercell: [m1 as usize, m2 as usize], orbitals: ro, level: l })
}

impl JacobiForm {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `A(k) = T2 + e^{ik} T3 + e^{-ik} T4`, the coupling between rows.
    pub fn a_matrix(&self, k: f64) -> CMat {
        let (p, m) = (c64::from_polar(1.0, k), c64::from_polar(1.0, -k));
        Mat::from_fn(self.dim(), self.dim(), |i, j| self.t[1][(i, j)] + p * self.t[2][(i, j)] + m * self.t[3][(i, j)])
    }

    /// `M(k) = e^{ik} T1^* + e^{-ik} T1 + W`, the Fourier transformed row.
    pub fn row_matrix(&self, k: f64) -> CMat {
        let (p, m) = (c64::from_polar(1.0, k), c64::from_polar(1.0, -k));
        let t1a = self.t[0].adjoint().to_owned();
        Mat::from_fn(self.dim(), self.dim(), |i, j| p * t1a[(i, j)] + m * self.t[0][(i, j)] + self.w[(i, j)])
    }

    /// Full Bloch matrix at supercell momentum `k`.
    pub fn bloch(&self, k: [f64; 2]) -> CMat {
        let mut h = self.w.clone();
        for (j, v) in SHIFTS.iter().enumerate() {
            let ph = c64::from_polar(1.0, -(k[0] * v[0] as f64 + k[1] * v[1] as f64));
            let ta = self.t[j].adjoint().to_owned();
            h = Mat::from_fn(self.dim(), self.dim(), |a, b| h[(a, b)] + ph * self.t[j][(a, b)] + ph.conj() * ta[(a, b)]);
        }
        h
    }

    /// Periodic `n1 x n2` supercell torus, indexed `(c2 * n1 + c1) * dim + a`.
    pub fn assemble_torus(&self, n1: usize, n2: usize) -> CMat {
        let d = self.dim();
        let mut h: CMat = Mat::zeros(n1 * n2 * d, n1 * n2 * d);
        let cell = |c1: i64, c2: i64| (c2.rem_euclid(n2 as i64) as usize * n1 + c1.rem_euclid(n1 as i64) as usize) * d;
        for c2 in 0..n2 as i64 {
            for c1 in 0..n1 as i64 {
                let src = cell(c1, c2);
                for a in 0..d {
                    for b in 0..d {
                        h[(src + a, src + b)] += self.w[(a, b)];
                    }
                }
                for (j, v) in SHIFTS.iter().enumerate() {
                    let tgt = cell(c1 + v[0], c2 + v[1]);
                    for a in 0..d {
                        for b in 0..d {
                            let x = self.t[j][(a, b)];
                            h[(tgt + a, src + b)] += x;
                            h[(src + b, tgt + a)] += x.conj();
                        }
                    }
                }
            }
        }
        h
    }

    /// Entrywise complex conjugate of every block.
    pub fn conj(&self) -> JacobiForm {
        JacobiForm {
            t: std::array::from_fn(|j| conj(&self.t[j])),
            w: conj(&self.w),
            supercell: self.supercell,
            orbitals: self.orbitals,
            level: -self.level,
        }
    }
}
