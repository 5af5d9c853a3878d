//! Irreducible spin-s representation.
//!
//! Basis ordering is `m = s, s-1, ..., -s` (index 0 is the top level), which
//! makes `sx`, `sz` real and `sy` purely imaginary.

use faer::Mat;
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};
use crate::linalg::CMat;

/// A half-integer spin value stored as `2s` (always odd).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HalfInteger(u32);

impl HalfInteger {
    pub fn from_f64(s: f64) -> Result<Self> {
        let two_s = 2.0 * s;
        if !(s > 0.0) || (two_s - two_s.round()).abs() > 1e-12 || (two_s.round() as i64) % 2 == 0 {
            return Err(Error::invalid(format!("spin s = {s} is not a half-integer (need 2s odd, s >= 1/2)")));
        }
        Ok(HalfInteger(two_s.round() as u32))
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Representation dimension `r = 2s + 1`.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }

    /// Spin level for basis index `m` (0 is the top level `+s`).
    pub fn level(self, m: usize) -> f64 {
        self.value() - m as f64
    }

    /// Basis index of level `l`, if it is one of `-s..=s`.
    pub fn index_of(self, l: f64) -> Option<usize> {
        let m = self.value() - l;
        let mr = m.round();
        if (m - mr).abs() < 1e-9 && mr >= 0.0 && (mr as usize) < self.dim() {
            Some(mr as usize)
        } else {
            None
        }
    }

    pub fn levels(self) -> Vec<f64> {
        (0..self.dim()).map(|m| self.level(m)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SpinRep {
    pub s: HalfInteger,
    pub sx: CMat,
    pub sy: CMat,
    pub sz: CMat,
}

impl SpinRep {
    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    /// `b . s` for a 3-vector `b`.
    pub fn along(&self, b: [f64; 3]) -> CMat {
        let r = self.dim();
        Mat::from_fn(r, r, |i, j| self.sx[(i, j)] * b[0] + self.sy[(i, j)] * b[1] + self.sz[(i, j)] * b[2])
    }
}

pub fn spin_matrices(s: f64) -> Result<SpinRep> {
    let s = HalfInteger::from_f64(s)?;
    let r = s.dim();
    let sv = s.value();
    // <m+1|s+|m> = sqrt(s(s+1) - m(m+1)); index i holds level s - i
    let splus = Mat::from_fn(r, r, |i, j| {
        if i + 1 == j {
            let m = s.level(j);
            c64::new((sv * (sv + 1.0) - m * (m + 1.0)).sqrt(), 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    let sminus = splus.adjoint().to_owned();
    let sx = Mat::from_fn(r, r, |i, j| (splus[(i, j)] + sminus[(i, j)]) * 0.5);
    let sy = Mat::from_fn(r, r, |i, j| (splus[(i, j)] - sminus[(i, j)]) * c64::new(0.0, -0.5));
    let sz = Mat::from_fn(r, r, |i, j| {
        if i == j {
            c64::new(s.level(i), 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    Ok(SpinRep { s, sx, sy, sz })
}
