//! Gaps, Fermi projections and the spectral islands of `P s^z P`.
//!
//! Projections are stored through orthonormal bases of their ranges, since
//! the full matrices are only needed for residual checks.

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{columns, eigh, eigvalsh, CMat};
use crate::model::{build, Geometry, HamiltonianMatrix, ModelSpec};
use crate::spin::HalfInteger;

/// Default minimal distance between neighbouring islands of `P s^z P`.
pub const ISLAND_THRESHOLD: f64 = 0.05;

/// Relative distance below which an eigenvalue is said to touch `E_g`.
pub const TOUCH_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    #[serde(rename = "E_g")]
    pub e_g: f64,
    pub gap_interval: (f64, f64),
    pub min_island_gap: Option<f64>,
    #[serde(rename = "C_s")]
    pub c_s: Option<f64>,
}

impl GapReport {
    pub fn width(&self) -> f64 {
        self.gap_interval.1 - self.gap_interval.0
    }

    pub fn contains(&self, e: f64) -> bool {
        self.gap_interval.0 < e && e < self.gap_interval.1
    }
}

/// Widest interval between consecutive eigenvalues of the pooled spectra that
/// meets `window` and is at least `min_width` wide.
pub fn find_gap_in_spectra(spectra: &[Vec<f64>], window: (f64, f64), min_width: f64) -> Result<GapReport> {
    if spectra.is_empty() {
        return Err(Error::invalid("find_gap needs at least one sample"));
    }
    if !(window.0 < window.1) {
        return Err(Error::invalid(format!("empty window [{}, {}]", window.0, window.1)));
    }
    let mut all: Vec<f64> = spectra.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for w in all.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= window.0 || a >= window.1 || b - a < min_width || b - a <= 0.0 {
            continue;
        }
        if best.map_or(true, |(x, y)| b - a > y - x) {
            best = Some((a, b));
        }
    }
    match best {
        Some((lo, hi)) => Ok(GapReport { e_g: 0.5 * (lo + hi), gap_interval: (lo, hi), min_island_gap: None, c_s: None }),
        None => {
            let mid = 0.5 * (window.0 + window.1);
            let mut near: Vec<f64> = all.iter().copied().filter(|e| *e > window.0 && *e < window.1).collect();
            near.sort_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()));
            near.truncate(6);
            near.sort_by(f64::total_cmp);
            Err(Error::GapViolated { lo: window.0, hi: window.1, offending: near })
        }
    }
}

/// [`find_gap_in_spectra`] on the exact spectra of finite samples.
pub fn find_gap(samples: &[HamiltonianMatrix], window: (f64, f64)) -> Result<GapReport> {
    let spectra = samples.par_iter().map(|h| eigvalsh(&h.matrix)).collect::<Result<Vec<_>>>()?;
    find_gap_in_spectra(&spectra, window, 0.0)
}

/// Band energies on an `n x n` Brillouin-zone grid, one sorted vector per k.
pub fn bloch_spectra(spec: &ModelSpec, n: usize) -> Result<Vec<Vec<f64>>> {
    (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let k = [2.0 * PI * (idx % n) as f64 / n as f64, 2.0 * PI * (idx / n) as f64 / n as f64];
            eigvalsh(&build(spec, &Geometry::BlochFiber { k })?.matrix)
        })
        .collect()
}

/// Gap search over an `n x n` Bloch grid.
///
/// Sampling a gapless band structure leaves apparent gaps of the order of the
/// band shift between neighbouring k-points, so intervals narrower than twice
/// that shift are not certified.
pub fn find_gap_bloch(spec: &ModelSpec, n: usize, window: (f64, f64)) -> Result<GapReport> {
    let spectra = bloch_spectra(spec, n)?;
    let mut shift = 0.0f64;
    for i2 in 0..n {
        for i1 in 0..n {
            let here = &spectra[i2 * n + i1];
            for nb in [i2 * n + (i1 + 1) % n, ((i2 + 1) % n) * n + i1] {
                for (a, b) in here.iter().zip(&spectra[nb]) {
                    shift = shift.max((a - b).abs());
                }
            }
        }
    }
    find_gap_in_spectra(&spectra, window, 2.0 * shift)
}

/// A spectral island of `P s^z P`.
#[derive(Debug, Clone)]
pub struct Island {
    /// Spin level `l` the island is attached to.
    pub center: f64,
    /// Smallest and largest eigenvalue in the island.
    pub interval: (f64, f64),
    /// Orthonormal basis of `range(P_l)`.
    pub basis: CMat,
}

impl Island {
    pub fn projector(&self) -> CMat {
        &self.basis * self.basis.adjoint()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

/// Fermi projection and (once computed) its decomposition into islands.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub e_g: f64,
    /// Orthonormal basis of `range(P)`.
    pub basis: CMat,
    pub psp_spectrum: Vec<f64>,
    pub islands: Vec<Island>,
    pub island_gaps: Vec<f64>,
}

impl ProjectionSet {
    pub fn projector(&self) -> CMat {
        &self.basis * self.basis.adjoint()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn min_island_gap(&self) -> Option<f64> {
        self.island_gaps.iter().copied().reduce(f64::min)
    }

    pub fn island(&self, l: f64) -> Option<&Island> {
        self.islands.iter().find(|i| (i.center - l).abs() < 1e-9)
    }
}

/// Spectral projection of `h` onto energies below `e_g`.
pub fn fermi_projection(h: &CMat, e_g: f64) -> Result<ProjectionSet> {
    let (vals, vecs) = eigh(h)?;
    let diameter = match (vals.first(), vals.last()) {
        (Some(a), Some(b)) => (b - a).max(1.0),
        _ => return Err(Error::invalid("empty Hamiltonian")),
    };
    let tol = TOUCH_TOLERANCE * diameter;
    if let Some(&e) = vals.iter().find(|e| (**e - e_g).abs() < tol) {
        return Err(Error::FermiTouchesSpectrum { e_g, eigenvalue: e, tolerance: tol });
    }
    let below: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] < e_g).collect();
    Ok(ProjectionSet {
        e_g,
        basis: columns(&vecs, &below),
        psp_spectrum: Vec::new(),
        islands: Vec::new(),
        island_gaps: Vec::new(),
    })
}

/// Splits `range(P)` into the `2s + 1` islands of `P s^z P`.
///
/// The sorted spectrum is cut at its `2s` largest gaps (single linkage) and
/// the clusters are assigned to `l = -s, ..., s` in ascending order.
pub fn psp_islands(p: &ProjectionSet, sz_full: &CMat, s: HalfInteger, threshold: f64) -> Result<ProjectionSet> {
    let q = &p.basis;
    if sz_full.nrows() != q.nrows() {
        return Err(Error::DimensionMismatch(format!("s^z is {}, P acts on {}", sz_full.nrows(), q.nrows())));
    }
    let n_isl = s.dim();
    let rank = q.ncols();
    if rank < n_isl {
        return Err(Error::IslandsNotSeparated { min_gap: 0.0, threshold });
    }
    let compressed = &(q.adjoint() * sz_full) * q;
    let (mu, v) = eigh(&compressed)?;
    let mut gaps: Vec<(f64, usize)> = mu.windows(2).enumerate().map(|(i, w)| (w[1] - w[0], i + 1)).collect();
    // largest gaps first; ties broken by position for determinism
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cuts: Vec<usize> = gaps.iter().take(n_isl - 1).map(|g| g.1).collect();
    cuts.sort_unstable();
    let island_gaps: Vec<f64> = cuts.iter().map(|&c| mu[c] - mu[c - 1]).collect();
    let min_gap = island_gaps.iter().copied().fold(f64::INFINITY, f64::min);
    if n_isl > 1 && min_gap < threshold {
        return Err(Error::IslandsNotSeparated { min_gap, threshold });
    }
    // each island must stay inside (l - 1/2, l + 1/2) to be attributed to l
    let mut lo = 0;
    for (i, &hi) in cuts.iter().chain(std::iter::once(&rank)).enumerate() {
        let l = -s.value() + i as f64;
        if mu[lo] <= l - 0.5 || mu[hi - 1] >= l + 0.5 {
            return Err(Error::IslandsNotSeparated { min_gap: min_gap.min(0.0), threshold });
        }
        lo = hi;
    }
    let basis_all = q * &v;
    let mut bounds = vec![0];
    bounds.extend(&cuts);
    bounds.push(rank);
    let islands = (0..n_isl)
        .map(|i| {
            let idx: Vec<usize> = (bounds[i]..bounds[i + 1]).collect();
            Island {
                center: -s.value() + i as f64,
                interval: (mu[bounds[i]], mu[bounds[i + 1] - 1]),
                basis: columns(&basis_all, &idx),
            }
        })
        .collect();
    Ok(ProjectionSet { e_g: p.e_g, basis: p.basis.clone(), psp_spectrum: mu, islands, island_gaps })
}

/// Residuals of the projection-set invariants: idempotency, Hermiticity,
/// completeness `sum_l P_l = P` and mutual orthogonality.
pub fn projection_residuals(p: &ProjectionSet) -> [f64; 4] {
    let pm = p.projector();
    let idem = crate::linalg::max_abs(&(&(&pm * &pm) - &pm));
    let herm = crate::linalg::hermiticity_residual(&pm);
    let mut sum: CMat = Mat::zeros(pm.nrows(), pm.ncols());
    for isl in &p.islands {
        sum = &sum + &isl.projector();
    }
    let complete = if p.islands.is_empty() { 0.0 } else { crate::linalg::max_abs(&(&sum - &pm)) };
    let mut orth = 0.0f64;
    for (i, a) in p.islands.iter().enumerate() {
        for b in &p.islands[i + 1..] {
            orth = orth.max(crate::linalg::max_abs(&(a.basis.adjoint() * &b.basis)));
        }
    }
    [idem, herm, complete, orth]
}

/// Exponential decay rate of the cell blocks of `P`.
///
/// For every cell distance `d` (minimum image on periodic axes) the largest
/// Frobenius norm of a block `<n|P|m>` is recorded; `log` of that envelope is
/// fitted linearly in `d`. Returns `(eta, rms fit residual)`; a projection
/// without off-diagonal blocks gives `eta = +inf`.
pub fn projection_decay(p: &CMat, h: &HamiltonianMatrix) -> Result<(f64, f64)> {
    if p.nrows() != h.dim() {
        return Err(Error::DimensionMismatch(format!("P is {}, index space is {}", p.nrows(), h.dim())));
    }
    let [n1, n2] = h.cells;
    let periodic = matches!(h.geometry, Geometry::Torus { .. });
    let block = h.orbitals * h.spin_dim;
    let delta = |a: usize, b: usize, n: usize| {
        let d = a.abs_diff(b);
        if periodic {
            d.min(n - d)
        } else {
            d
        }
    };
    // Cartesian length of a cell separation in the honeycomb/triangular basis
    // is lattice dependent; the Chebyshev cell distance is used instead.
    let mut envelope: Vec<f64> = Vec::new();
    let mut scale = 0.0f64;
    for c in 0..n1 * n2 {
        for d in 0..n1 * n2 {
            let mut s = 0.0;
            for i in 0..block {
                for j in 0..block {
                    s += p[(c * block + i, d * block + j)].norm_sqr();
                }
            }
            let norm = s.sqrt();
            let dist = delta(c % n1, d % n1, n1).max(delta(c / n1, d / n1, n2));
            if dist >= envelope.len() {
                envelope.resize(dist + 1, 0.0);
            }
            envelope[dist] = envelope[dist].max(norm);
            scale = scale.max(norm);
        }
    }
    let floor = 1e-13 * scale.max(1e-300);
    let pts: Vec<(f64, f64)> = envelope
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| **v > floor)
        .map(|(d, v)| (d as f64, v.ln()))
        .collect();
    if pts.is_empty() {
        return Ok((f64::INFINITY, 0.0));
    }
    if pts.len() < 2 {
        return Err(Error::NoDecay { eta: f64::NAN });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let slope = sxy / sxx;
    let eta = -slope;
    let resid = (pts.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2)).sum::<f64>() / n).sqrt();
    if !(eta > 0.0) {
        return Err(Error::NoDecay { eta });
    }
    Ok((eta, resid))
}
