//! Spin edge currents on ribbons.
//!
//! The ribbon is periodic along direction 1 (Bloch phase `k` per supercell of
//! `S` cells) and has `N2` open rows. The current carried by one edge is
//!
//! ```text
//! j^e = (2 pi / S) (1/N_k) sum_k Re Tr[ Lambda J1(k) g(H(k)) ],
//! J1 = (s^z i[H, X1] + i[H, X1] s^z) / 2,
//! ```
//!
//! where `Lambda` keeps the rows on one side of `cutoff_row` and `g` is a
//! smooth density supported in the bulk gap. `i[H, X1]` is the derivative of
//! `H` with respect to a twist spread uniformly over the bonds, so averaging
//! over `k` also averages over twisted boundary conditions. The factor `2 pi`
//! expresses currents in units of the quantum `1/(2 pi)` (with `e = hbar = 1`),
//! so a clean conserving ribbon carries `sum_l l SCh_l` on its lower edge.

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigh, eigvalsh, CMat};
use crate::model::{apply_homotopy, commutator_norm, Disorder, Geometry, ModelSpec, TightBinding};
use crate::spectral::{find_gap_in_spectra, GapReport};

/// Narrowest ribbon accepted by [`edge_current`].
pub const MIN_WIDTH: usize = 32;

/// Largest tolerated `g`-weight in the cutoff row.
pub const MAX_LEAKAGE: f64 = 1e-6;

/// `exp(-1/(1 - t^2))` on `|t| < 1`, zero outside.
fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Coefficients (ascending powers of `t`) of `p_n` with
/// `d^n/dt^n bump = p_n(t) (1 - t^2)^(-2n) bump`.
fn bump_derivative_polys(max: usize) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![1.0]];
    for n in 0..max {
        let p = &polys[n];
        // p' (1 - t^2)^2 + 4 n t (1 - t^2) p - 2 t p
        let mut next = vec![0.0; p.len() + 4];
        for (i, &c) in p.iter().enumerate() {
            if i > 0 {
                let d = c * i as f64;
                next[i - 1] += d;
                next[i + 1] -= 2.0 * d;
                next[i + 3] += d;
            }
            next[i + 1] += (4.0 * n as f64 - 2.0) * c;
            next[i + 3] -= 4.0 * n as f64 * c;
        }
        while next.len() > 1 && next.last() == Some(&0.0) {
            next.pop();
        }
        polys.push(next);
    }
    polys
}

fn bump_derivative(polys: &[Vec<f64>], n: usize, t: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let p = polys[n].iter().rev().fold(0.0, |acc, c| acc * t + c);
    let u = 1.0 - t * t;
    p / u.powi(2 * n as i32) * bump(t)
}

/// Smooth probability density with compact support inside a spectral gap.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothDensity {
    #[serde(rename = "E_c")]
    pub e_c: f64,
    pub w: f64,
    pub norm6: f64,
    #[serde(skip)]
    z: f64,
}

impl SmoothDensity {
    /// Bump centred at `e_c` with support `[e_c - w/2, e_c + w/2]`.
    pub fn new(e_c: f64, w: f64) -> Result<Self> {
        if !(w > 0.0) || !e_c.is_finite() {
            return Err(Error::invalid(format!("bump needs w > 0 (got {w})")));
        }
        let out = quadrature::integrate(bump, -1.0, 1.0, 1e-15);
        let z = 0.5 * w * out.integral;
        let polys = bump_derivative_polys(6);
        let grid = 20_001;
        let mut norm6 = 0.0;
        for (j, _) in polys.iter().enumerate() {
            let mut sup = 0.0f64;
            for i in 1..grid - 1 {
                let t = -1.0 + 2.0 * i as f64 / (grid - 1) as f64;
                sup = sup.max(bump_derivative(&polys, j, t).abs());
            }
            norm6 += sup * (2.0 / w).powi(j as i32) / z;
        }
        Ok(SmoothDensity { e_c, w, norm6, z })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.e_c - 0.5 * self.w, self.e_c + 0.5 * self.w)
    }

    pub fn eval(&self, e: f64) -> f64 {
        bump(2.0 * (e - self.e_c) / self.w) / self.z
    }

    /// Rejects the density unless its support lies strictly inside `gap`.
    pub fn check_inside(&self, gap: (f64, f64)) -> Result<()> {
        let (lo, hi) = self.support();
        if lo <= gap.0 || hi >= gap.1 {
            return Err(Error::SupportOutsideGap { lo, hi, gap_lo: gap.0, gap_hi: gap.1 });
        }
        Ok(())
    }
}

/// Bump with centre and width given as fractions of the gap `(lo, hi)`.
pub fn bump_g(gap: (f64, f64), center_fraction: f64, width_fraction: f64) -> Result<SmoothDensity> {
    let width = gap.1 - gap.0;
    let g = SmoothDensity::new(gap.0 + center_fraction * width, width_fraction * width)?;
    g.check_inside(gap)?;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Lower,
    Upper,
}

/// Ribbon and quadrature parameters.
#[derive(Debug, Clone, Serialize)]
pub struct RibbonParams {
    pub n2: usize,
    pub n_k: usize,
    /// Cells per supercell along the edge (1 for clean models).
    pub supercell: usize,
    /// Rows `n2 < cutoff_row` belong to the lower edge; default `n2 / 2`.
    pub cutoff_row: Option<usize>,
    /// Disorder realizations averaged over (ignored for clean models).
    pub seeds: Vec<u64>,
}

impl RibbonParams {
    pub fn clean(n2: usize, n_k: usize) -> Self {
        RibbonParams { n2, n_k, supercell: 1, cutoff_row: None, seeds: Vec::new() }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff_row.unwrap_or(self.n2 / 2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeCurrentResult {
    pub j_e: f64,
    pub j_lower: f64,
    pub j_upper: f64,
    pub lambda: f64,
    #[serde(rename = "N2")]
    pub n2: usize,
    #[serde(rename = "N_k")]
    pub n_k: usize,
    pub edge: Edge,
    pub cutoff_row: usize,
    pub g_meta: SmoothDensity,
    /// `(j^e(lambda) - j^e(0)) / lambda`, absent at `lambda = 0`.
    pub residual_estimate: Option<f64>,
    /// `g`-weight of the cutoff row.
    pub leakage: f64,
    /// `g`-weight per row, summed over `k` and averaged like `j^e`.
    #[serde(skip)]
    pub profile: Vec<f64>,
}

/// Per-fiber contribution: current below/above the cutoff and the row profile.
struct FiberCurrent {
    lower: f64,
    upper: f64,
    profile: Vec<f64>,
}

fn fiber_current(h: &CMat, j1: &CMat, g: &SmoothDensity, rows: usize, row_dim: usize, cutoff: usize) -> Result<FiberCurrent> {
    let (vals, vecs) = eigh(h)?;
    let mut out = FiberCurrent { lower: 0.0, upper: 0.0, profile: vec![0.0; rows] };
    let n = h.nrows();
    for (i, &e) in vals.iter().enumerate() {
        let w = g.eval(e);
        if w == 0.0 {
            continue;
        }
        let v = vecs.col(i);
        let jv = j1 * v;
        for r in 0..n {
            let row = r / row_dim;
            let c = v[r].conj() * jv[r];
            // Tr[Lambda J g] = sum_i g(E_i) <i| Lambda J |i>, Lambda diagonal
            if row < cutoff {
                out.lower += w * c.re;
            } else {
                out.upper += w * c.re;
            }
            out.profile[row] += w * v[r].norm_sqr();
        }
    }
    Ok(out)
}

/// Symmetrized spin current `(s^z V + V s^z) / 2`.
fn spin_current(v: &CMat, sz: &CMat) -> CMat {
    let a = sz * v;
    let b = v * sz;
    Mat::from_fn(v.nrows(), v.ncols(), |i, j| (a[(i, j)] + b[(i, j)]) * 0.5)
}

/// Which operator is traced against `g(H)`.
#[derive(Debug, Clone, Copy)]
enum Current {
    Spin,
    /// Charge current of the spin level with basis index `m`.
    Charge(usize),
}

fn ribbon_current(
    spec: &ModelSpec,
    lambda: f64,
    params: &RibbonParams,
    g: &SmoothDensity,
    current: Current,
) -> Result<(f64, f64, Vec<f64>)> {
    let tb = TightBinding::new(spec)?;
    if params.n2 < 2 || params.n_k == 0 || params.supercell == 0 {
        return Err(Error::invalid("ribbon needs N2 >= 2, N_k >= 1, supercell >= 1"));
    }
    let cutoff = params.cutoff();
    if cutoff == 0 || cutoff >= params.n2 {
        return Err(Error::invalid(format!("cutoff row {cutoff} outside 1..{}", params.n2)));
    }
    let disordered = spec.lambda_dis != 0.0;
    let seeds: Vec<u64> = if disordered {
        if params.seeds.is_empty() {
            vec![spec.seed]
        } else {
            params.seeds.clone()
        }
    } else {
        vec![spec.seed]
    };
    let s = params.supercell;
    let n_k = params.n_k;
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&sd| (0..n_k).map(move |j| (sd, j))).collect();
    let parts: Vec<FiberCurrent> = jobs
        .par_iter()
        .map(|&(seed, j)| {
            let k = 2.0 * PI * j as f64 / n_k as f64;
            let geometry = Geometry::RibbonFiber { k, n2: params.n2, supercell: s };
            let h = tb.hamiltonian(&geometry, &Disorder::new(seed))?;
            let sz = h.sz_full(&tb.spin);
            let hl = apply_homotopy(&h.matrix, &sz, lambda)?.h_lambda;
            let vl = apply_homotopy(&tb.velocity1(&geometry)?, &sz, lambda)?.h_lambda;
            let row_dim = s * h.orbitals * h.spin_dim;
            match current {
                Current::Spin => fiber_current(&hl, &spin_current(&vl, &sz), g, params.n2, row_dim, cutoff),
                Current::Charge(m) => {
                    let rows = h.spin_rows(m);
                    let pick = |a: &CMat| Mat::from_fn(rows.len(), rows.len(), |i, j| a[(rows[i], rows[j])]);
                    fiber_current(&pick(&hl), &pick(&vl), g, params.n2, row_dim / h.spin_dim, cutoff)
                }
            }
        })
        .collect::<Result<_>>()?;
    // sequential reduction in job order keeps results bitwise reproducible
    let norm = 2.0 * PI / (s as f64 * n_k as f64 * seeds.len() as f64);
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut profile = vec![0.0; params.n2];
    for p in &parts {
        lower += p.lower;
        upper += p.upper;
        for (a, b) in profile.iter_mut().zip(&p.profile) {
            *a += b;
        }
    }
    profile.iter_mut().for_each(|x| *x *= norm / (2.0 * PI));
    Ok((lower * norm, upper * norm, profile))
}

/// Bulk gap of `H(lambda)`: Bloch grid for clean models, small tori per seed
/// otherwise.
pub fn bulk_gap(spec: &ModelSpec, lambda: f64, window: (f64, f64), seeds: &[u64]) -> Result<GapReport> {
    let tb = TightBinding::new(spec)?;
    if spec.lambda_dis == 0.0 && spec.flux.is_zero() {
        let n = 48;
        let spectra: Vec<Vec<f64>> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let k = [2.0 * PI * (idx % n) as f64 / n as f64, 2.0 * PI * (idx / n) as f64 / n as f64];
                let h = tb.hamiltonian(&Geometry::BlochFiber { k }, &Disorder::new(0))?;
                let hl = apply_homotopy(&h.matrix, &h.sz_full(&tb.spin), lambda)?.h_lambda;
                eigvalsh(&hl)
            })
            .collect::<Result<_>>()?;
        let mut shift = 0.0f64;
        for i2 in 0..n {
            for i1 in 0..n {
                for nb in [i2 * n + (i1 + 1) % n, ((i2 + 1) % n) * n + i1] {
                    for (a, b) in spectra[i2 * n + i1].iter().zip(&spectra[nb]) {
                        shift = shift.max((a - b).abs());
                    }
                }
            }
        }
        return find_gap_in_spectra(&spectra, window, 2.0 * shift);
    }
    let q = spec.flux.q as usize;
    let side = 12usize.div_ceil(q) * q;
    let seeds = if seeds.is_empty() { vec![spec.seed] } else { seeds.to_vec() };
    let spectra: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let h = tb.hamiltonian(&Geometry::Torus { n1: side, n2: side }, &Disorder::new(seed))?;
            let hl = apply_homotopy(&h.matrix, &h.sz_full(&tb.spin), lambda)?.h_lambda;
            eigvalsh(&hl)
        })
        .collect::<Result<_>>()?;
    find_gap_in_spectra(&spectra, window, 0.0)
}

/// Spin edge current of `H(lambda)` with density `g`.
///
/// `gap` is the certified bulk gap of `H(lambda)`; `g` must be supported
/// strictly inside it.
pub fn edge_current(
    spec: &ModelSpec,
    lambda: f64,
    params: &RibbonParams,
    g: &SmoothDensity,
    gap: (f64, f64),
    edge: Edge,
) -> Result<EdgeCurrentResult> {
    if params.n2 < MIN_WIDTH {
        return Err(Error::invalid(format!("ribbon width N2 = {} below {MIN_WIDTH}", params.n2)));
    }
    g.check_inside(gap)?;
    let (lower, upper, profile) = ribbon_current(spec, lambda, params, g, Current::Spin)?;
    let cutoff = params.cutoff();
    let leakage = profile[cutoff];
    if leakage > MAX_LEAKAGE {
        return Err(Error::EdgeLeakage { leakage });
    }
    let residual_estimate = if lambda > 0.0 {
        let (l0, u0, _) = ribbon_current(spec, 0.0, params, g, Current::Spin)?;
        let base = if edge == Edge::Lower { l0 } else { u0 };
        let here = if edge == Edge::Lower { lower } else { upper };
        Some((here - base) / lambda)
    } else {
        None
    };
    Ok(EdgeCurrentResult {
        j_e: if edge == Edge::Lower { lower } else { upper },
        j_lower: lower,
        j_upper: upper,
        lambda,
        n2: params.n2,
        n_k: params.n_k,
        edge,
        cutoff_row: cutoff,
        g_meta: g.clone(),
        residual_estimate,
        leakage,
        profile,
    })
}

/// Lower-edge charge current of the spin level `l` of a conserving model.
pub fn charge_edge_current_per_spin(
    spec: &ModelSpec,
    l: f64,
    g: &SmoothDensity,
    gap: (f64, f64),
    params: &RibbonParams,
) -> Result<f64> {
    if let Some(name) = spec.nonconserving_coupling() {
        return Err(Error::invalid(format!("per-spin currents need s^z conservation, but {name} != 0")));
    }
    g.check_inside(gap)?;
    let m = spec
        .spin()?
        .index_of(l)
        .ok_or_else(|| Error::invalid(format!("level {l} is not one of -s..=s")))?;
    let (lower, _, profile) = ribbon_current(spec, 1.0, params, g, Current::Charge(m))?;
    // the charge profile is per level, so compare against its own cutoff row
    if profile[params.cutoff()] > MAX_LEAKAGE {
        return Err(Error::EdgeLeakage { leakage: profile[params.cutoff()] });
    }
    Ok(lower)
}

/// Exponential decay rate of a row profile away from the lower edge.
///
/// Least-squares slope of `-ln profile[r]` over the lower half, skipping the
/// first two rows (edge structure) and entries below `1e-14` of the maximum.
pub fn profile_decay_rate(profile: &[f64]) -> Option<f64> {
    let top = profile.iter().copied().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = profile[..profile.len() / 2]
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, &v)| v > 1e-14 * top)
        .map(|(r, &v)| (r as f64, -v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Coupling varied by [`perturbation_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Rashba,
    Zeeman,
}

impl Coupling {
    pub fn apply(self, spec: &ModelSpec, value: f64) -> ModelSpec {
        let mut s = spec.clone();
        match self {
            Coupling::Rashba => s.lambda_ra = value,
            Coupling::Zeeman => s.lambda_ze = value,
        }
        s
    }

    pub fn name(self) -> &'static str {
        match self {
            Coupling::Rashba => "rashba",
            Coupling::Zeeman => "zeeman",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub value: f64,
    pub comm_norm: f64,
    pub j_e_lower: f64,
    pub j_e_upper: f64,
    pub deviation: f64,
    /// `|deviation| / (||g||_6 ||[s^z, H]||)`; absent when the norm vanishes.
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub coupling: Coupling,
    pub j_e_zero: f64,
    pub rows: Vec<ScanRow>,
    /// Least-squares line `deviation = slope * value + intercept`.
    pub slope: f64,
    pub intercept: f64,
    /// Largest fit residual divided by the range of the deviations.
    pub relative_fit_residual: f64,
    pub c_max: f64,
    pub c_min: f64,
    /// First value whose gap no longer contains the support of `g`.
    pub truncated_at: Option<f64>,
    pub g_norm6: f64,
}

/// `sup_k ||[s^z, H(k)]||` on a Bloch grid (the norm on the infinite lattice).
pub fn bulk_commutator_norm(spec: &ModelSpec, n: usize) -> Result<f64> {
    let tb = TightBinding::new(spec)?;
    let norms: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let k = [2.0 * PI * (idx % n) as f64 / n as f64, 2.0 * PI * (idx / n) as f64 / n as f64];
            let h = tb.hamiltonian(&Geometry::BlochFiber { k }, &Disorder::new(0))?;
            commutator_norm(&h.matrix, &h.sz_full(&tb.spin))
        })
        .collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Lower-edge spin current as a function of one coupling.
pub fn perturbation_scan(
    spec: &ModelSpec,
    coupling: Coupling,
    values: &[f64],
    g: &SmoothDensity,
    params: &RibbonParams,
    window: (f64, f64),
) -> Result<ScanResult> {
    let base = coupling.apply(spec, 0.0);
    let gap0 = bulk_gap(&base, 1.0, window, &params.seeds)?;
    let j0 = edge_current(&base, 1.0, params, g, gap0.gap_interval, Edge::Lower)?.j_e;
    let mut rows = Vec::new();
    let mut truncated_at = None;
    for &v in values {
        let s = coupling.apply(spec, v);
        let gap = match bulk_gap(&s, 1.0, window, &params.seeds) {
            Ok(gap) if g.check_inside(gap.gap_interval).is_ok() => gap,
            Ok(_) | Err(Error::GapViolated { .. }) => {
                truncated_at = Some(v);
                break;
            }
            Err(e) => return Err(e),
        };
        let r = edge_current(&s, 1.0, params, g, gap.gap_interval, Edge::Lower)?;
        let comm = bulk_commutator_norm(&s, 24)?;
        let deviation = r.j_e - j0;
        let c = if comm > 0.0 { Some(deviation.abs() / (g.norm6 * comm)) } else { None };
        rows.push(ScanRow { value: v, comm_norm: comm, j_e_lower: r.j_lower, j_e_upper: r.j_upper, deviation, c });
    }
    let (slope, intercept, relative_fit_residual) = linear_fit(&rows);
    let cs: Vec<f64> = rows.iter().filter_map(|r| r.c).collect();
    Ok(ScanResult {
        coupling,
        j_e_zero: j0,
        slope,
        intercept,
        relative_fit_residual,
        c_max: cs.iter().copied().fold(f64::NAN, f64::max),
        c_min: cs.iter().copied().fold(f64::NAN, f64::min),
        truncated_at,
        g_norm6: g.norm6,
        rows,
    })
}

fn linear_fit(rows: &[ScanRow]) -> (f64, f64, f64) {
    let n = rows.len() as f64;
    if rows.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = rows.iter().map(|r| r.value).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.deviation).sum::<f64>() / n;
    let sxx: f64 = rows.iter().map(|r| (r.value - mx).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| (r.value - mx) * (r.deviation - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_res = rows.iter().map(|r| (r.deviation - slope * r.value - intercept).abs()).fold(0.0, f64::max);
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.deviation), b.max(r.deviation)));
    (slope, intercept, max_res / (hi - lo))
}
