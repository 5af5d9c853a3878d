//! Lattice geometry and the translation-invariant hopping table.
//!
//! Cells are labelled by `n = (n1, n2)` in the Bravais basis `(a1, a2)`;
//! orbital positions are fractional offsets inside the cell. A [`Hop`] is
//! the operator `sum_n |to, n + shift><from, n| (x) amp`, with both
//! directions of every bond stored explicitly.

use std::collections::BTreeMap;

use faer::Mat;
use num_complex::Complex64 as c64;

use super::spec::{Lattice, ModelSpec, RashbaRange};
use crate::error::Result;
use crate::linalg::{eye, scale, CMat, I};
use crate::spin::{spin_matrices, SpinRep};

const DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LatticeGeometry {
    pub a1: [f64; 2],
    pub a2: [f64; 2],
    /// Fractional orbital positions.
    pub orbitals: Vec<[f64; 2]>,
}

impl LatticeGeometry {
    pub fn of(lattice: Lattice) -> Self {
        let s3 = 3f64.sqrt();
        match lattice {
            Lattice::Honeycomb => LatticeGeometry {
                a1: [1.0, 0.0],
                a2: [0.5, s3 / 2.0],
                orbitals: vec![[0.0, 0.0], [1.0 / 3.0, 1.0 / 3.0]],
            },
            Lattice::Square => LatticeGeometry { a1: [1.0, 0.0], a2: [0.0, 1.0], orbitals: vec![[0.0, 0.0]] },
            Lattice::Triangular => LatticeGeometry { a1: [1.0, 0.0], a2: [0.5, s3 / 2.0], orbitals: vec![[0.0, 0.0]] },
        }
    }

    pub fn to_cartesian(&self, f: [f64; 2]) -> [f64; 2] {
        [f[0] * self.a1[0] + f[1] * self.a2[0], f[0] * self.a1[1] + f[1] * self.a2[1]]
    }

    /// Fractional displacement of a hop from `from` to `to` across `shift` cells.
    pub fn displacement(&self, from: usize, to: usize, shift: [i64; 2]) -> [f64; 2] {
        let (pf, pt) = (self.orbitals[from], self.orbitals[to]);
        [shift[0] as f64 + pt[0] - pf[0], shift[1] as f64 + pt[1] - pf[1]]
    }

    /// Nearest-neighbour bonds `(from, to, shift)`, both directions.
    pub fn nearest_bonds(&self) -> Vec<(usize, usize, [i64; 2])> {
        let n = self.orbitals.len();
        let mut cands = Vec::new();
        for from in 0..n {
            for to in 0..n {
                for s1 in -2..=2i64 {
                    for s2 in -2..=2i64 {
                        let d = self.to_cartesian(self.displacement(from, to, [s1, s2]));
                        let len = d[0].hypot(d[1]);
                        if len > DIST_TOL {
                            cands.push((len, (from, to, [s1, s2])));
                        }
                    }
                }
            }
        }
        let min = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        cands.into_iter().filter(|c| (c.0 - min).abs() < DIST_TOL).map(|c| c.1).collect()
    }
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn unit(d: [f64; 2]) -> [f64; 2] {
    let n = d[0].hypot(d[1]);
    [d[0] / n, d[1] / n]
}

#[derive(Debug, Clone)]
pub struct Hop {
    pub from: usize,
    pub to: usize,
    pub shift: [i64; 2],
    /// Spin-space amplitude, `r x r`.
    pub amp: CMat,
    /// Fractional displacement including orbital offsets.
    pub disp: [f64; 2],
}

/// Translation-invariant part of a model: hopping table plus on-site terms.
#[derive(Debug, Clone)]
pub struct TightBinding {
    pub spec: ModelSpec,
    pub spin: SpinRep,
    pub geometry: LatticeGeometry,
    pub hops: Vec<Hop>,
    /// On-site `r x r` block per orbital (Zeeman and staggered terms).
    pub onsite: Vec<CMat>,
}

impl TightBinding {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let spin = spin_matrices(spec.s)?;
        let geometry = LatticeGeometry::of(spec.lattice);
        let r = spin.dim();
        let id = eye(r);
        // 2s plays the role of the Pauli vector for s = 1/2
        let two_sx = scale(&spin.sx, c64::new(2.0, 0.0));
        let two_sy = scale(&spin.sy, c64::new(2.0, 0.0));
        let two_sz = scale(&spin.sz, c64::new(2.0, 0.0));

        let mut table: BTreeMap<(usize, usize, [i64; 2]), CMat> = BTreeMap::new();
        let mut add = |from: usize, to: usize, shift: [i64; 2], m: CMat| {
            let e = table.entry((from, to, shift)).or_insert_with(|| Mat::zeros(r, r));
            *e = &*e + &m;
        };

        let nn = geometry.nearest_bonds();
        for &(from, to, shift) in &nn {
            if spec.t_hop != 0.0 {
                add(from, to, shift, scale(&id, c64::new(spec.t_hop, 0.0)));
            }
            if spec.lambda_ra != 0.0 && spec.rashba_range == RashbaRange::Nearest {
                let d = unit(geometry.to_cartesian(geometry.displacement(from, to, shift)));
                // i lambda (2s x d)_z = i lambda (2sx dy - 2sy dx)
                let m = &scale(&two_sx, c64::new(d[1], 0.0)) - &scale(&two_sy, c64::new(d[0], 0.0));
                add(from, to, shift, scale(&m, I * spec.lambda_ra));
            }
        }

        // Second neighbours reached by two nearest-neighbour steps; the SO
        // sign is the orientation of the turn, summed over all paths.
        let mut paths: BTreeMap<(usize, usize, [i64; 2]), f64> = BTreeMap::new();
        for &(a, b, s_ab) in &nn {
            for &(b2, c, s_bc) in &nn {
                if b2 != b {
                    continue;
                }
                let shift = [s_ab[0] + s_bc[0], s_ab[1] + s_bc[1]];
                if c == a && shift == [0, 0] {
                    continue;
                }
                let d1 = geometry.to_cartesian(geometry.displacement(a, b, s_ab));
                let d2 = geometry.to_cartesian(geometry.displacement(b, c, s_bc));
                let turn = cross(d1, d2);
                let nu = if turn.abs() < DIST_TOL { 0.0 } else { turn.signum() };
                *paths.entry((a, c, shift)).or_insert(0.0) += nu;
            }
        }
        // keep only genuine second neighbours: exclude pairs that are nearest neighbours
        let second_dist = paths
            .keys()
            .map(|&(a, c, s)| {
                let d = geometry.to_cartesian(geometry.displacement(a, c, s));
                d[0].hypot(d[1])
            })
            .filter(|&d| {
                let nn_len = {
                    let (f, t, s) = nn[0];
                    let d = geometry.to_cartesian(geometry.displacement(f, t, s));
                    d[0].hypot(d[1])
                };
                d > nn_len + DIST_TOL
            })
            .fold(f64::INFINITY, f64::min);
        for (&(a, c, shift), &nu) in &paths {
            let d = geometry.to_cartesian(geometry.displacement(a, c, shift));
            if (d[0].hypot(d[1]) - second_dist).abs() > DIST_TOL {
                continue;
            }
            if spec.lambda_so != 0.0 && nu != 0.0 {
                add(a, c, shift, scale(&two_sz, I * spec.lambda_so * nu));
            }
            if spec.lambda_ra != 0.0 && spec.rashba_range == RashbaRange::NextNearest {
                let mu = if a == 0 { 1.0 } else { -1.0 };
                let u = unit(d);
                let m = &scale(&two_sx, c64::new(u[1], 0.0)) - &scale(&two_sy, c64::new(u[0], 0.0));
                add(a, c, shift, scale(&m, I * spec.lambda_ra * mu));
            }
        }

        let hops = table
            .into_iter()
            .map(|((from, to, shift), amp)| Hop { from, to, shift, disp: geometry.displacement(from, to, shift), amp })
            .collect();

        let zeeman = scale(&spin.along(spec.zeeman_axis), c64::new(spec.lambda_ze, 0.0));
        let onsite = (0..spec.orbitals)
            .map(|o| {
                let stagger = if spec.orbitals > 1 {
                    if o == 0 {
                        spec.lambda_v
                    } else {
                        -spec.lambda_v
                    }
                } else {
                    spec.lambda_v
                };
                &zeeman + &scale(&id, c64::new(stagger, 0.0))
            })
            .collect();

        Ok(TightBinding { spec: spec.clone(), spin, geometry, hops, onsite })
    }

    pub fn orbitals(&self) -> usize {
        self.spec.orbitals
    }

    pub fn spin_dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.orbitals() * self.spin_dim()
    }

    /// Largest `|shift|` component, i.e. the hopping range in cells.
    pub fn range(&self) -> i64 {
        self.hops.iter().map(|h| h.shift[0].abs().max(h.shift[1].abs())).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn honeycomb_has_three_bonds_per_site() {
        let g = LatticeGeometry::of(Lattice::Honeycomb);
        let nn = g.nearest_bonds();
        assert_eq!(nn.len(), 6);
        assert_eq!(nn.iter().filter(|b| b.0 == 0).count(), 3);
        let d = g.to_cartesian(g.displacement(1, 0, [1, 0]));
        assert!((d[0].hypot(d[1]) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hops_come_in_adjoint_pairs() {
        let spec = ModelSpec::kane_mele(0.2).with_rashba(0.07).with_zeeman(0.03);
        let tb = TightBinding::new(&spec).unwrap();
        for h in &tb.hops {
            let back = tb
                .hops
                .iter()
                .find(|g| g.from == h.to && g.to == h.from && g.shift == [-h.shift[0], -h.shift[1]])
                .expect("partner hop");
            assert!(max_abs(&(&back.amp - &h.amp.adjoint().to_owned())) < 1e-14);
        }
    }

    #[test]
    fn kane_mele_second_neighbours() {
        let tb = TightBinding::new(&ModelSpec::kane_mele(0.2)).unwrap();
        // 6 nearest (both directions) + 12 second-neighbour hops
        assert_eq!(tb.hops.len(), 18);
        // SO signs opposite on the two sublattices for the same shift
        let a = tb.hops.iter().find(|h| h.from == 0 && h.to == 0 && h.shift == [1, 0]).unwrap();
        let b = tb.hops.iter().find(|h| h.from == 1 && h.to == 1 && h.shift == [1, 0]).unwrap();
        assert!((a.amp[(0, 0)] + b.amp[(0, 0)]).norm() < 1e-14);
        assert!((a.amp[(0, 0)].im.abs() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn square_lattice_has_no_so_term() {
        let mut spec = ModelSpec::kane_mele(0.3);
        spec.lattice = Lattice::Square;
        spec.orbitals = 1;
        let tb = TightBinding::new(&spec).unwrap();
        assert_eq!(tb.hops.len(), 4);
    }
}
