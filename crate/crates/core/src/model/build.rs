//! Assembly of finite Hamiltonian matrices from a [`TightBinding`] table.
//!
//! Row ordering is `((n2 * N1 + n1) * R + orbital) * r + m`, where `m`
//! indexes spin levels from `+s` down to `-s`.
//!
//! Magnetic flux uses the Landau gauge `A = (-2 pi phi y, 0)` in fractional
//! coordinates, so a straight hop with fractional displacement `(dx, dy)`
//! starting at height `y` picks up `exp(-2 pi i phi dx (y + dy/2))`. On a
//! torus, hops wrapping `w2` times through the direction-2 seam pick up the
//! extra factor `exp(2 pi i phi N2 w2 x_target)`; this needs `phi N1 N2` to
//! be an integer.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use super::disorder::Disorder;
use super::lattice::TightBinding;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::linalg::{eye, kron, CMat};
use crate::spin::SpinRep;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Periodic in both directions.
    Torus { n1: usize, n2: usize },
    /// Bloch fiber `H(k)` of a translation-invariant model, `L x L`.
    BlochFiber { k: [f64; 2] },
    /// Periodic (Bloch phase `k` per supercell) in direction 1, `n2` open rows.
    RibbonFiber { k: f64, n2: usize, supercell: usize },
    /// Open boundaries in both directions.
    Open { n1: usize, n2: usize },
}

impl Geometry {
    pub fn ribbon(k: f64, n2: usize) -> Self {
        Geometry::RibbonFiber { k, n2, supercell: 1 }
    }

    /// Number of cells in each direction of the finite patch.
    pub fn extent(&self) -> [usize; 2] {
        match *self {
            Geometry::Torus { n1, n2 } | Geometry::Open { n1, n2 } => [n1, n2],
            Geometry::BlochFiber { .. } => [1, 1],
            Geometry::RibbonFiber { n2, supercell, .. } => [supercell, n2],
        }
    }

    fn axes(&self) -> [Axis; 2] {
        match *self {
            Geometry::Torus { .. } => [Axis::Periodic, Axis::Periodic],
            Geometry::Open { .. } => [Axis::Open, Axis::Open],
            Geometry::BlochFiber { k } => [Axis::Bloch(k[0]), Axis::Bloch(k[1])],
            Geometry::RibbonFiber { k, .. } => [Axis::Bloch(k), Axis::Open],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    Open,
    Periodic,
    Bloch(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Hamiltonian,
    /// `i[H, X1]` with `X1` the cell coordinate.
    Velocity1,
}

/// Finite Hermitian matrix with its index map.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub matrix: CMat,
    pub geometry: Geometry,
    pub cells: [usize; 2],
    pub orbitals: usize,
    pub spin_dim: usize,
}

impl HamiltonianMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn index(&self, n1: usize, n2: usize, orbital: usize, m: usize) -> usize {
        ((n2 * self.cells[0] + n1) * self.orbitals + orbital) * self.spin_dim + m
    }

    /// Inverse of [`index`](Self::index): `(n1, n2, orbital, m)`.
    pub fn site(&self, row: usize) -> (usize, usize, usize, usize) {
        let m = row % self.spin_dim;
        let rest = row / self.spin_dim;
        let orbital = rest % self.orbitals;
        let cell = rest / self.orbitals;
        (cell % self.cells[0], cell / self.cells[0], orbital, m)
    }

    /// `1 (x) s^z` on this index space.
    pub fn sz_full(&self, spin: &SpinRep) -> CMat {
        kron(&eye(self.cells[0] * self.cells[1] * self.orbitals), &spin.sz)
    }

    /// Rows belonging to spin basis index `m`.
    pub fn spin_rows(&self, m: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| i % self.spin_dim == m).collect()
    }

    /// Restriction to the spin level with basis index `m`.
    pub fn spin_block(&self, m: usize) -> CMat {
        let rows = self.spin_rows(m);
        Mat::from_fn(rows.len(), rows.len(), |i, j| self.matrix[(rows[i], rows[j])])
    }

    pub fn with_matrix(&self, matrix: CMat) -> Self {
        HamiltonianMatrix { matrix, ..self.clone() }
    }
}

impl TightBinding {
    fn check_geometry(&self, geometry: &Geometry) -> Result<()> {
        let [n1, n2] = geometry.extent();
        if n1 == 0 || n2 == 0 {
            return Err(Error::invalid("geometry dimensions must be positive"));
        }
        let flux = self.spec.flux;
        match *geometry {
            Geometry::BlochFiber { .. } => {
                if !flux.is_zero() {
                    return Err(Error::invalid("Bloch fibers need flux_B = 0 (use a ribbon or torus)"));
                }
                if self.spec.lambda_dis != 0.0 {
                    return Err(Error::invalid("Bloch fibers need lambda_dis = 0"));
                }
            }
            Geometry::Torus { n1, n2 } => {
                if !flux.divides((n1 * n2) as u64) {
                    return Err(Error::invalid(format!(
                        "flux {flux} incompatible with {n1}x{n2} torus (flux * N1 * N2 must be an integer)"
                    )));
                }
            }
            Geometry::RibbonFiber { .. } | Geometry::Open { .. } => {}
        }
        let range = self.range() as usize;
        for (axis, n) in geometry.axes().iter().zip([n1, n2]) {
            if matches!(axis, Axis::Periodic) && n <= range {
                return Err(Error::invalid(format!(
                    "periodic extent {n} must exceed the hopping range {range}"
                )));
            }
        }
        Ok(())
    }

    fn assemble(&self, geometry: &Geometry, disorder: &Disorder, mode: Mode) -> Result<CMat> {
        self.check_geometry(geometry)?;
        let [n1, n2] = geometry.extent();
        let axes = geometry.axes();
        let (ro, r) = (self.orbitals(), self.spin_dim());
        let dim = n1 * n2 * ro * r;
        let mut h: CMat = Mat::zeros(dim, dim);
        let idx = |c1: usize, c2: usize, o: usize, m: usize| ((c2 * n1 + c1) * ro + o) * r + m;
        let phi = self.spec.flux.value();
        let pos = &self.geometry.orbitals;

        for c2 in 0..n2 {
            for c1 in 0..n1 {
                for hop in &self.hops {
                    let t = [c1 as i64 + hop.shift[0], c2 as i64 + hop.shift[1]];
                    let mut target = [0usize; 2];
                    let mut wraps = [0i64; 2];
                    let mut phase = c64::new(1.0, 0.0);
                    let mut inside = true;
                    for ax in 0..2 {
                        let n = [n1, n2][ax] as i64;
                        match axes[ax] {
                            Axis::Open => {
                                if t[ax] < 0 || t[ax] >= n {
                                    inside = false;
                                } else {
                                    target[ax] = t[ax] as usize;
                                }
                            }
                            Axis::Periodic | Axis::Bloch(_) => {
                                wraps[ax] = t[ax].div_euclid(n);
                                target[ax] = t[ax].rem_euclid(n) as usize;
                                if let Axis::Bloch(k) = axes[ax] {
                                    phase *= c64::from_polar(1.0, -k * wraps[ax] as f64);
                                }
                            }
                        }
                    }
                    if !inside {
                        continue;
                    }
                    if phi != 0.0 {
                        let y = c2 as f64 + pos[hop.from][1];
                        let theta = -2.0 * PI * phi * hop.disp[0] * (y + hop.disp[1] / 2.0);
                        phase *= c64::from_polar(1.0, theta);
                        if wraps[1] != 0 {
                            let x_t = c1 as f64 + hop.shift[0] as f64 + pos[hop.to][0];
                            phase *= c64::from_polar(1.0, 2.0 * PI * phi * (n2 as f64) * wraps[1] as f64 * x_t);
                        }
                    }
                    if mode == Mode::Velocity1 {
                        phase *= c64::new(0.0, -(hop.shift[0] as f64));
                        if hop.shift[0] == 0 {
                            continue;
                        }
                    }
                    for a in 0..r {
                        for b in 0..r {
                            let v = hop.amp[(a, b)];
                            if v != c64::new(0.0, 0.0) {
                                h[(idx(target[0], target[1], hop.to, a), idx(c1, c2, hop.from, b))] += phase * v;
                            }
                        }
                    }
                }
                if mode == Mode::Hamiltonian {
                    let period = [
                        if matches!(axes[0], Axis::Open) { 0 } else { n1 as i64 },
                        if matches!(axes[1], Axis::Open) { 0 } else { n2 as i64 },
                    ];
                    for o in 0..ro {
                        let v = if self.spec.lambda_dis != 0.0 {
                            self.spec.lambda_dis * disorder.value([c1 as i64, c2 as i64], o, period)
                        } else {
                            0.0
                        };
                        for a in 0..r {
                            for b in 0..r {
                                let mut x = self.onsite[o][(a, b)];
                                if a == b {
                                    x += v;
                                }
                                h[(idx(c1, c2, o, a), idx(c1, c2, o, b))] += x;
                            }
                        }
                    }
                }
            }
        }
        Ok(h)
    }

    pub fn hamiltonian(&self, geometry: &Geometry, disorder: &Disorder) -> Result<HamiltonianMatrix> {
        let matrix = self.assemble(geometry, disorder, Mode::Hamiltonian)?;
        Ok(HamiltonianMatrix {
            matrix,
            geometry: *geometry,
            cells: geometry.extent(),
            orbitals: self.orbitals(),
            spin_dim: self.spin_dim(),
        })
    }

    /// `i[H, X1]` in the same index space; for fibers this is `dH/dk1`.
    pub fn velocity1(&self, geometry: &Geometry) -> Result<CMat> {
        self.assemble(geometry, &Disorder::new(self.spec.seed), Mode::Velocity1)
    }

    /// Magnetic translation by `a` on an `n1 x n2` torus, as a unitary matrix.
    pub fn magnetic_translation(&self, n1: usize, n2: usize, a: [i64; 2]) -> Result<CMat> {
        let phi = self.spec.flux.value();
        // the seam holonomies are only invariant when both products are integers
        if !self.spec.flux.divides((n1 as i64 * a[1]).unsigned_abs())
            || !self.spec.flux.divides((n2 as i64 * a[0]).unsigned_abs())
        {
            return Err(Error::invalid("magnetic translation needs flux * a2 * N1 and flux * a1 * N2 integer"));
        }
        let (ro, r) = (self.orbitals(), self.spin_dim());
        let dim = n1 * n2 * ro * r;
        let idx = |c1: usize, c2: usize, o: usize, m: usize| ((c2 * n1 + c1) * ro + o) * r + m;
        let pos = &self.geometry.orbitals;
        let mut u: CMat = Mat::zeros(dim, dim);
        for c2 in 0..n2 {
            for c1 in 0..n1 {
                for o in 0..ro {
                    // (U psi)(x) = exp(-2 pi i phi a2 x) psi(x - a), with seam factors
                    let s = [c1 as i64 - a[0], c2 as i64 - a[1]];
                    let w2 = s[1].div_euclid(n2 as i64);
                    let src = [s[0].rem_euclid(n1 as i64) as usize, s[1].rem_euclid(n2 as i64) as usize];
                    let x = c1 as f64 + pos[o][0];
                    let xs = src[0] as f64 + pos[o][0];
                    let theta = -2.0 * PI * phi * a[1] as f64 * x - 2.0 * PI * phi * (n2 as f64) * w2 as f64 * xs;
                    let ph = c64::from_polar(1.0, theta);
                    for m in 0..r {
                        u[(idx(c1, c2, o, m), idx(src[0], src[1], o, m))] = ph;
                    }
                }
            }
        }
        Ok(u)
    }
}

/// Builds the Hamiltonian of `spec` on `geometry` for the given disorder realization.
pub fn build_hamiltonian(spec: &ModelSpec, geometry: &Geometry, disorder: &Disorder) -> Result<HamiltonianMatrix> {
    TightBinding::new(spec)?.hamiltonian(geometry, disorder)
}

/// Shorthand using the realization drawn from `spec.seed`.
pub fn build(spec: &ModelSpec, geometry: &Geometry) -> Result<HamiltonianMatrix> {
    build_hamiltonian(spec, geometry, &Disorder::new(spec.seed))
}
