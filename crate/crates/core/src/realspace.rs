//! Chern numbers of projections: a local real-space marker for finite
//! (possibly disordered) samples and a plaquette lattice-gauge oracle for
//! clean Bloch bands.
//!
//! The marker at cell `n` is `2 pi i Tr_L <n| P [[X1, P], [X2, P]] |n>` with
//! `X1`, `X2` the cell coordinates in the lattice basis. Its translation
//! average equals `(1 / 2 pi i) int tr P [d1 P, d2 P] d^2k`, the quantity the
//! oracle sums plaquette by plaquette.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{columns, eigh, CMat};
use crate::model::{apply_homotopy, to_jacobi_form, Disorder, Geometry, HamiltonianMatrix, ModelSpec, TightBinding};
use crate::spectral::{fermi_projection, psp_islands, ISLAND_THRESHOLD};
use crate::transfer::level_key;

/// Default fraction of sites in the averaging window.
pub const WINDOW_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Serialize)]
pub struct ChernEstimate {
    pub raw: f64,
    pub rounded: i64,
    /// Standard deviation of the per-cell marker inside the window.
    pub spread: f64,
    pub region: String,
}

impl ChernEstimate {
    pub fn deviation(&self) -> f64 {
        (self.raw - self.rounded as f64).abs()
    }
}

/// Central window `[lo, hi)` covering `fraction` of the sites in each direction
/// combined, i.e. `sqrt(fraction)` of each side.
fn window(n: usize, fraction: f64) -> (usize, usize) {
    let side = ((n as f64) * fraction.sqrt()).round().max(1.0) as usize;
    let lo = (n - side.min(n)) / 2;
    (lo, lo + side.min(n))
}

/// Per-cell marker of the projection onto `span(basis)` on the index space of `h`.
pub fn marker_density(basis: &CMat, h: &HamiltonianMatrix) -> Result<Vec<f64>> {
    if basis.nrows() != h.dim() {
        return Err(Error::DimensionMismatch(format!("basis has {} rows, sample {}", basis.nrows(), h.dim())));
    }
    let n = h.dim();
    let rank = basis.ncols();
    let block = h.orbitals * h.spin_dim;
    let coord = |row: usize, axis: usize| {
        let cell = row / block;
        if axis == 0 {
            (cell % h.cells[0]) as f64
        } else {
            (cell / h.cells[0]) as f64
        }
    };
    // with P = Q Q*: P X1 P X2 P - P X2 P X1 P = Q (a b - b a) Q*, a = Q* X1 Q
    let x1q = Mat::from_fn(n, rank, |i, j| basis[(i, j)] * coord(i, 0));
    let x2q = Mat::from_fn(n, rank, |i, j| basis[(i, j)] * coord(i, 1));
    let a = basis.adjoint() * &x1q;
    let b = basis.adjoint() * &x2q;
    let c = &(&a * &b) - &(&b * &a);
    let qc = basis * &c;
    let cells = h.cells[0] * h.cells[1];
    let mut density = vec![0.0; cells];
    for i in 0..n {
        let mut d = c64::new(0.0, 0.0);
        for j in 0..rank {
            d += qc[(i, j)] * basis[(i, j)].conj();
        }
        // 2 pi i times a purely imaginary number
        density[i / block] += (c64::new(0.0, 2.0 * PI) * d).re;
    }
    Ok(density)
}

/// Window-averaged marker of an open sample.
pub fn chern_marker(basis: &CMat, h: &HamiltonianMatrix, window_fraction: f64) -> Result<ChernEstimate> {
    if !matches!(h.geometry, Geometry::Open { .. }) {
        return Err(Error::invalid("the marker needs an open sample"));
    }
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return Err(Error::invalid(format!("window fraction {window_fraction} must lie in (0, 1)")));
    }
    let [n1, n2] = h.cells;
    let (a1, b1) = window(n1, window_fraction);
    let (a2, b2) = window(n2, window_fraction);
    if a1 == 0 || a2 == 0 {
        return Err(Error::invalid(format!(
            "averaging window touches the boundary of the {n1}x{n2} sample; enlarge the sample"
        )));
    }
    let density = marker_density(basis, h)?;
    let vals: Vec<f64> = (a2..b2).flat_map(|c2| (a1..b1).map(move |c1| (c1, c2))).map(|(c1, c2)| density[c2 * n1 + c1]).collect();
    let m = vals.len() as f64;
    let raw = vals.iter().sum::<f64>() / m;
    let spread = (vals.iter().map(|v| (v - raw).powi(2)).sum::<f64>() / m).sqrt();
    let rounded = raw.round() as i64;
    let est = ChernEstimate { raw, rounded, spread, region: format!("cells [{a1},{b1})x[{a2},{b2}) of {n1}x{n2}") };
    if est.deviation() >= 0.5 || !raw.is_finite() {
        return Err(Error::MarkerNotConverged { raw });
    }
    Ok(est)
}

/// Chern number of the bands below `e_g` by the plaquette field-strength
/// method on an `n x n` grid of the Brillouin zone.
pub fn chern_fhs_oracle(bloch: impl Fn([f64; 2]) -> CMat + Sync, e_g: f64, n: usize) -> Result<i64> {
    if n < 2 {
        return Err(Error::invalid("oracle grid needs n >= 2"));
    }
    let frames: Vec<CMat> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let k = [2.0 * PI * (idx % n) as f64 / n as f64, 2.0 * PI * (idx / n) as f64 / n as f64];
            let (vals, vecs) = eigh(&bloch(k))?;
            if let Some(e) = vals.iter().find(|e| (**e - e_g).abs() < 1e-8) {
                return Err(Error::OracleUnreliable(format!("band touches E_g = {e_g} at k = {k:?} (E = {e})")));
            }
            let occ: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] < e_g).collect();
            Ok(columns(&vecs, &occ))
        })
        .collect::<Result<_>>()?;
    let rank = frames[0].ncols();
    if frames.iter().any(|f| f.ncols() != rank) {
        return Err(Error::OracleUnreliable("number of occupied bands varies over the grid".into()));
    }
    if rank == 0 {
        return Ok(0);
    }
    let link = |a: usize, b: usize| -> Result<c64> {
        let d = (frames[a].adjoint() * &frames[b]).determinant();
        if d.norm() < 1e-8 {
            return Err(Error::OracleUnreliable("vanishing link variable; refine the grid".into()));
        }
        Ok(d / d.norm())
    };
    let at = |i1: usize, i2: usize| (i2 % n) * n + (i1 % n);
    let mut total = 0.0;
    for i2 in 0..n {
        for i1 in 0..n {
            let u1 = link(at(i1, i2), at(i1 + 1, i2))?;
            let u2 = link(at(i1 + 1, i2), at(i1 + 1, i2 + 1))?;
            let u3 = link(at(i1, i2 + 1), at(i1 + 1, i2 + 1))?;
            let u4 = link(at(i1, i2), at(i1, i2 + 1))?;
            total += (u1 * u2 / (u3 * u4)).arg();
        }
    }
    let c = total / (2.0 * PI);
    if (c - c.round()).abs() > 1e-6 {
        return Err(Error::OracleUnreliable(format!("non-integer plaquette sum {c}")));
    }
    Ok(c.round() as i64)
}

/// Oracle Chern number of the spin-`l` block of a clean conserving model.
pub fn fhs_spin_chern(spec: &ModelSpec, l: f64, e_g: f64, n: usize) -> Result<i64> {
    let jf = to_jacobi_form(spec, l)?;
    chern_fhs_oracle(|k| jf.bloch(k), e_g, n)
}

/// Oracle Chern number of the full Fermi projection of a clean model.
pub fn fhs_total_chern(spec: &ModelSpec, e_g: f64, n: usize) -> Result<i64> {
    let tb = TightBinding::new(spec)?;
    let d = Disorder::new(spec.seed);
    tb.hamiltonian(&Geometry::BlochFiber { k: [0.0, 0.0] }, &d)?;
    chern_fhs_oracle(|k| tb.hamiltonian(&Geometry::BlochFiber { k }, &d).expect("validated above").matrix, e_g, n)
}

/// Fermi level for an open sample: edge states fill the bulk gap, so the
/// level is moved to the middle of the widest spacing between eigenvalues
/// within `e_g +- search`.
pub fn open_fermi_level(eigenvalues: &[f64], e_g: f64, search: f64) -> f64 {
    let mut best = (0.0, e_g);
    for w in eigenvalues.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if (mid - e_g).abs() <= search && w[1] - w[0] > best.0 {
            best = (w[1] - w[0], mid);
        }
    }
    best.1
}

/// Result for one disorder realization.
#[derive(Debug, Clone, Serialize)]
pub struct SeedChern {
    pub seed: u64,
    pub fermi_level: f64,
    pub min_island_gap: f64,
    pub total: ChernEstimate,
    pub levels: BTreeMap<String, ChernEstimate>,
}

/// Spin Chern markers of `H(lambda)` on open `n x n` samples, one per seed.
///
/// Seeds whose islands close (or whose marker does not converge) are returned
/// separately with the error message.
pub fn spin_chern_disordered(
    spec: &ModelSpec,
    seeds: &[u64],
    lambda: f64,
    n: usize,
    window_fraction: f64,
) -> Result<(Vec<SeedChern>, Vec<(u64, Error)>)> {
    let tb = TightBinding::new(spec)?;
    let geometry = Geometry::Open { n1: n, n2: n };
    let run = |seed: u64| -> Result<SeedChern> {
        let h = tb.hamiltonian(&geometry, &Disorder::new(seed))?;
        let sz = h.sz_full(&tb.spin);
        let hl = apply_homotopy(&h.matrix, &sz, lambda)?.h_lambda;
        let (vals, _) = eigh(&hl)?;
        let e_f = open_fermi_level(&vals, spec.e_g, 0.1);
        let p = fermi_projection(&hl, e_f)?;
        let set = psp_islands(&p, &sz, tb.spin.s, ISLAND_THRESHOLD)?;
        let hm = h.with_matrix(hl);
        let total = chern_marker(&set.basis, &hm, window_fraction)?;
        let mut levels = BTreeMap::new();
        for isl in &set.islands {
            levels.insert(level_key(isl.center), chern_marker(&isl.basis, &hm, window_fraction)?);
        }
        Ok(SeedChern { seed, fermi_level: e_f, min_island_gap: set.min_island_gap().unwrap_or(f64::INFINITY), total, levels })
    };
    let results: Vec<(u64, Result<SeedChern>)> = seeds.par_iter().map(|&s| (s, run(s))).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (s, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) if e.guard().is_some() => failed.push((s, e)),
            Err(e) => return Err(e),
        }
    }
    Ok((ok, failed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build;

    #[test]
    fn atomic_limit_marker_vanishes() {
        let spec = ModelSpec::kane_mele(0.0);
        let h = build(&spec, &Geometry::Open { n1: 8, n2: 8 }).unwrap();
        let basis = Mat::from_fn(h.dim(), h.dim() / 2, |i, j| c64::new(if i == 2 * j { 1.0 } else { 0.0 }, 0.0));
        let est = chern_marker(&basis, &h, 0.25).unwrap();
        assert_eq!(est.raw, 0.0);
        assert_eq!(est.rounded, 0);
    }

    #[test]
    fn window_geometry() {
        assert_eq!(window(24, 0.25), (6, 18));
        assert_eq!(window(20, 0.25), (5, 15));
        let spec = ModelSpec::kane_mele(0.0);
        let h = build(&spec, &Geometry::Open { n1: 2, n2: 2 }).unwrap();
        assert!(chern_marker(&crate::linalg::eye(h.dim()), &h, 0.9).is_err());
        let torus = build(&spec, &Geometry::Torus { n1: 4, n2: 4 }).unwrap();
        assert!(chern_marker(&crate::linalg::eye(torus.dim()), &torus, 0.25).is_err());
    }

    #[test]
    fn flat_band_oracle() {
        // k-independent Hamiltonian: no Berry curvature
        let h = Mat::from_fn(2, 2, |i, j| c64::new(if i == j { if i == 0 { -1.0 } else { 1.0 } } else { 0.3 }, 0.0));
        assert_eq!(chern_fhs_oracle(|_| h.clone(), 0.0, 24).unwrap(), 0);
    }

    #[test]
    fn two_band_lattice_dirac_model() {
        // H = sin k1 sx + sin k2 sy + (m + cos k1 + cos k2) sz, Chern number +-1 for 0 < |m| < 2
        let h = |m: f64| {
            move |k: [f64; 2]| {
                let (x, y, z) = (k[0].sin(), k[1].sin(), m + k[0].cos() + k[1].cos());
                Mat::from_fn(2, 2, |i, j| match (i, j) {
                    (0, 0) => c64::new(z, 0.0),
                    (1, 1) => c64::new(-z, 0.0),
                    (0, 1) => c64::new(x, -y),
                    _ => c64::new(x, y),
                })
            }
        };
        let c1 = chern_fhs_oracle(h(1.0), 0.0, 24).unwrap();
        let c2 = chern_fhs_oracle(h(-1.0), 0.0, 24).unwrap();
        assert_eq!(c1.abs(), 1);
        assert_eq!(c2, -c1);
        assert_eq!(chern_fhs_oracle(h(3.0), 0.0, 24).unwrap(), 0);
        let err = chern_fhs_oracle(h(2.0), 0.0, 24).unwrap_err();
        assert_eq!(err.guard(), Some("oracle unreliable"));
    }

    #[test]
    fn fermi_level_in_widest_spacing() {
        let e = [-1.0, -0.05, 0.01, 0.08, 1.0];
        assert!((open_fermi_level(&e, 0.0, 0.1) - 0.045).abs() < 1e-15);
    }
}
