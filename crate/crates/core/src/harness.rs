//! Experiment configuration, orchestration and result files.
//!
//! A run reads one JSON [`ExperimentConfig`], checks it completely (schema,
//! parameter ranges, cost budget) before touching the output directory, then
//! executes one task and writes CSV/JSON results plus a `manifest.json`.
//! Column layouts are listed in `schema/csv_columns.md` at the repository root.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edge::{
    bulk_commutator_norm, bulk_gap, bump_g, charge_edge_current_per_spin, edge_current, perturbation_scan,
    profile_decay_rate, Coupling, Edge, RibbonParams,
};
use crate::error::{Error, Result};
use crate::model::{apply_homotopy, commutator_norm, Disorder, Geometry, ModelSpec, TightBinding};
use crate::realspace::{spin_chern_disordered, WINDOW_FRACTION};
use crate::spectral::{fermi_projection, psp_islands, GapReport, ISLAND_THRESHOLD};
use crate::transfer::{level_key, spin_chern_transfer};

pub const FORMAT_VERSION: u32 = 1;
/// Default ceiling on `(max matrix dimension)^3 x (number of diagonalizations)`.
pub const DEFAULT_BUDGET: f64 = 1e13;
pub const MANIFEST: &str = "manifest.json";
const CHECKPOINT: &str = "sweep.checkpoint.jsonl";
/// Torus side used for island and commutator estimates of non-periodic models.
const PROBE_SIDE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SpinChernTransfer,
    SpinChernRealspace,
    EdgeCurrent,
    PerturbationScan,
    GapReport,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SpinChernTransfer => "spin-chern-transfer",
            Task::SpinChernRealspace => "spin-chern-realspace",
            Task::EdgeCurrent => "edge-current",
            Task::PerturbationScan => "perturbation-scan",
            Task::GapReport => "gap-report",
        }
    }

    /// Columns of the task's main table, which is also what a sweep consolidates.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Task::SpinChernTransfer => &[
                "l",
                "SCh",
                "phase_defect",
                "total_phase",
                "refinements",
                "max_unitarity_residual",
                "max_pairing_residual",
                "max_invariance_residual",
                "min_margin",
                "Nk",
            ],
            Task::SpinChernRealspace => &["seed", "l", "raw", "rounded", "spread", "window", "N1", "N2"],
            Task::EdgeCurrent | Task::PerturbationScan => &EDGE_COLUMNS,
            Task::GapReport => &["E_g", "gap_lo", "gap_hi", "width", "min_island_gap", "C_s"],
        }
    }

    fn table_name(self) -> &'static str {
        match self {
            Task::SpinChernTransfer => "spin_chern_transfer",
            Task::SpinChernRealspace => "spin_chern_realspace",
            Task::EdgeCurrent => "edge_current",
            Task::PerturbationScan => "perturbation_scan",
            Task::GapReport => "gap_report",
        }
    }
}

const EDGE_COLUMNS: [&str; 13] = [
    "lambda",
    "coupling",
    "value",
    "comm_norm",
    "j_e_lower",
    "j_e_upper",
    "N2",
    "Nk",
    "g_center",
    "g_width",
    "g_norm6",
    "cutoff_row",
    "residual_estimate",
];

fn d_nk() -> usize {
    512
}
fn d_n() -> usize {
    24
}
fn d_n2() -> usize {
    48
}
fn d_one() -> f64 {
    1.0
}
fn d_half() -> f64 {
    0.5
}
fn d_supercell() -> usize {
    1
}
fn d_window() -> f64 {
    WINDOW_FRACTION
}
fn d_edge() -> Edge {
    Edge::Lower
}

/// Task parameters; each task reads the subset it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    /// Quadrature points for transfer windings and ribbon currents.
    #[serde(rename = "N_k", default = "d_nk")]
    pub n_k: usize,
    /// Side of the open sample for the real-space marker.
    #[serde(rename = "N", default = "d_n")]
    pub n: usize,
    /// Disorder seeds; empty means the model's own seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "d_one")]
    pub homotopy_lambda: f64,
    #[serde(default = "d_window")]
    pub window_fraction: f64,
    #[serde(rename = "N2", default = "d_n2")]
    pub n2: usize,
    #[serde(default = "d_supercell")]
    pub supercell: usize,
    #[serde(default)]
    pub cutoff_row: Option<usize>,
    #[serde(default = "d_edge")]
    pub edge: Edge,
    /// Centre of `g` as a fraction of the gap, measured from its lower end.
    #[serde(default = "d_half")]
    pub g_center: f64,
    /// Width of the support of `g` as a fraction of the gap width.
    #[serde(default = "d_half")]
    pub g_width: f64,
    #[serde(default)]
    pub coupling: Option<Coupling>,
    #[serde(default)]
    pub values: Vec<f64>,
    /// Energy window searched for the bulk gap; default `E_g +- 0.5`.
    #[serde(default)]
    pub gap_window: Option<[f64; 2]>,
}

impl Default for TaskParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all task parameters have defaults")
    }
}

impl TaskParams {
    fn seeds_or(&self, fallback: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![fallback]
        } else {
            self.seeds.clone()
        }
    }

    fn window(&self, spec: &ModelSpec) -> (f64, f64) {
        self.gap_window.map_or((spec.e_g - 0.5, spec.e_g + 0.5), |[a, b]| (a, b))
    }

    fn ribbon(&self, spec: &ModelSpec) -> RibbonParams {
        RibbonParams {
            n2: self.n2,
            n_k: self.n_k,
            supercell: self.supercell,
            cutoff_row: self.cutoff_row,
            seeds: self.seeds_or(spec.seed),
        }
    }
}

/// Parameter grid of a sweep: one point per `(value, seed)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// A model coupling (`lambda_SO`, `lambda_Ra`, `lambda_Ze`, `lambda_dis`,
    /// `lambda_v`, `t_hop`, `E_g`) or `homotopy_lambda`.
    pub parameter: String,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

const SWEEP_PARAMETERS: [&str; 8] =
    ["lambda_SO", "lambda_Ra", "lambda_Ze", "lambda_dis", "lambda_v", "t_hop", "E_g", "homotopy_lambda"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub model: ModelSpec,
    pub task: Task,
    #[serde(default)]
    pub params: TaskParams,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Overrides [`DEFAULT_BUDGET`].
    #[serde(default)]
    pub budget: Option<f64>,
}

impl ExperimentConfig {
    /// Parses and validates; any failure is an input error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "format_version {} not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.model.validate()?;
        check_params(self.task, &self.model, &self.params)?;
        if let Some(sw) = &self.sweep {
            if !SWEEP_PARAMETERS.contains(&sw.parameter.as_str()) {
                return Err(Error::invalid(format!(
                    "sweep parameter {:?} not one of {SWEEP_PARAMETERS:?}",
                    sw.parameter
                )));
            }
            for &v in &sw.values {
                let (spec, params) = apply_parameter(&self.model, &self.params, &sw.parameter, v, self.model.seed)?;
                spec.validate()?;
                check_params(self.task, &spec, &params)?;
            }
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return Err(Error::invalid("budget must be positive"));
            }
        }
        Ok(())
    }

    pub fn budget(&self) -> f64 {
        self.budget.unwrap_or(DEFAULT_BUDGET)
    }

    /// Estimated cost of one run of the task.
    pub fn point_cost(&self) -> f64 {
        task_cost(self.task, &self.model, &self.params)
    }

    pub fn sweep_points(&self) -> usize {
        self.sweep.as_ref().map_or(1, |s| s.values.len() * s.seeds.len().max(1))
    }

    pub fn check_budget(&self, sweep: bool, force: bool) -> Result<()> {
        let points = if sweep { self.sweep_points() } else { 1 };
        let cost = self.point_cost() * points as f64;
        if cost > self.budget() && !force {
            return Err(Error::BudgetExceeded { cost: cost as u128, budget: self.budget() as u128 });
        }
        Ok(())
    }
}

fn check_params(task: Task, spec: &ModelSpec, p: &TaskParams) -> Result<()> {
    let bad = |m: String| Err(Error::invalid(m));
    if !(0.0..=1.0).contains(&p.homotopy_lambda) {
        return bad(format!("homotopy_lambda {} outside [0, 1]", p.homotopy_lambda));
    }
    if let Some([a, b]) = p.gap_window {
        if !(a < b) {
            return bad(format!("gap_window [{a}, {b}] is empty"));
        }
    }
    match task {
        Task::SpinChernTransfer => {
            if p.n_k < 64 {
                return bad(format!("N_k = {} below 64", p.n_k));
            }
            if let Some(name) = spec.nonconserving_coupling() {
                return bad(format!("transfer method needs s^z conservation, but {name} != 0"));
            }
            if spec.lambda_dis != 0.0 || !spec.flux.is_zero() {
                return bad("transfer method needs a periodic model without disorder or flux".into());
            }
        }
        Task::SpinChernRealspace => {
            if p.n < 8 {
                return bad(format!("N = {} below 8", p.n));
            }
            if !(p.window_fraction > 0.0 && p.window_fraction <= 1.0) {
                return bad(format!("window_fraction {} outside (0, 1]", p.window_fraction));
            }
        }
        Task::EdgeCurrent | Task::PerturbationScan => {
            if p.n2 < crate::edge::MIN_WIDTH || p.n_k == 0 || p.supercell == 0 {
                return bad(format!("ribbon needs N2 >= {}, N_k >= 1, supercell >= 1", crate::edge::MIN_WIDTH));
            }
            if !(p.g_center > 0.0 && p.g_center < 1.0 && p.g_width > 0.0 && p.g_width < 1.0) {
                return bad("g_center and g_width must lie in (0, 1)".into());
            }
            if let Some(c) = p.cutoff_row {
                if c == 0 || c >= p.n2 {
                    return bad(format!("cutoff_row {c} outside 1..{}", p.n2));
                }
            }
            if task == Task::PerturbationScan && p.coupling.is_none() {
                return bad("perturbation-scan needs params.coupling".into());
            }
            if spec.lambda_dis != 0.0 && !spec.flux.is_zero() {
                return bad("edge currents with both disorder and flux are not supported".into());
            }
            if !spec.flux.is_zero() {
                return bad("edge currents need zero flux".into());
            }
        }
        Task::GapReport => {}
    }
    Ok(())
}

fn task_cost(task: Task, spec: &ModelSpec, p: &TaskParams) -> f64 {
    let l = spec.fiber_dim().unwrap_or(1) as f64;
    let seeds = p.seeds.len().max(1) as f64;
    let cube = |d: f64| d * d * d;
    let edge = cube(p.n2 as f64 * p.supercell as f64 * l) * p.n_k as f64 * seeds * 2.0;
    match task {
        Task::SpinChernTransfer => cube(2.0 * l) * p.n_k as f64 * l,
        Task::SpinChernRealspace => cube((p.n * p.n) as f64 * l) * seeds,
        Task::EdgeCurrent => edge,
        Task::PerturbationScan => edge * (p.values.len() + 1) as f64,
        Task::GapReport => cube((PROBE_SIDE * PROBE_SIDE) as f64 * l) * (seeds + 1.0),
    }
}

/// Model and parameters at one sweep point.
pub fn apply_parameter(
    spec: &ModelSpec,
    params: &TaskParams,
    name: &str,
    value: f64,
    seed: u64,
) -> Result<(ModelSpec, TaskParams)> {
    let mut s = spec.clone();
    let mut p = params.clone();
    s.seed = seed;
    p.seeds = vec![seed];
    match name {
        "lambda_SO" => s.lambda_so = value,
        "lambda_Ra" => s.lambda_ra = value,
        "lambda_Ze" => s.lambda_ze = value,
        "lambda_dis" => s.lambda_dis = value,
        "lambda_v" => s.lambda_v = value,
        "t_hop" => s.t_hop = value,
        "E_g" => s.e_g = value,
        "homotopy_lambda" => p.homotopy_lambda = value,
        other => return Err(Error::invalid(format!("unknown sweep parameter {other:?}"))),
    }
    Ok((s, p))
}

/// A CSV table held as formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

/// Shortest round-trip formatting; scientific outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Everything a task produced, before it is written anywhere.
#[derive(Debug, Default)]
pub struct TaskOutput {
    /// The first table is the task's main table (see [`Task::columns`]).
    pub tables: Vec<Table>,
    pub documents: Vec<(String, serde_json::Value)>,
    /// Partial failures (one entry per failed seed) with context.
    pub failures: Vec<(String, Error)>,
}

/// Runs one task on one model.
pub fn execute(task: Task, spec: &ModelSpec, p: &TaskParams) -> Result<TaskOutput> {
    match task {
        Task::SpinChernTransfer => run_transfer(spec, p),
        Task::SpinChernRealspace => run_realspace(spec, p),
        Task::EdgeCurrent => run_edge(spec, p),
        Task::PerturbationScan => run_scan(spec, p),
        Task::GapReport => run_gap_report(spec, p),
    }
}

fn run_transfer(spec: &ModelSpec, p: &TaskParams) -> Result<TaskOutput> {
    let blocks = spin_chern_transfer(spec, spec.e_g, p.n_k)?;
    let task = Task::SpinChernTransfer;
    let mut main = Table::new(task.table_name(), task.columns());
    let mut diag = Table::new("transfer_diagnostics", &["l", "k", "margin", "residual", "phase"]);
    for (key, b) in &blocks {
        main.rows.push(vec![
            key.clone(),
            b.winding.ch.to_string(),
            fmt_f64(b.winding.phase_defect),
            fmt_f64(b.winding.total_phase),
            b.winding.refinements.to_string(),
            fmt_f64(b.max_unitarity_residual),
            fmt_f64(b.max_pairing_residual),
            fmt_f64(b.max_invariance_residual),
            fmt_f64(b.min_margin),
            p.n_k.to_string(),
        ]);
        for d in &b.diagnostics {
            diag.rows.push(vec![key.clone(), fmt_f64(d.k), fmt_f64(d.margin), fmt_f64(d.residual), fmt_f64(d.phase)]);
        }
    }
    let total: i64 = blocks.values().map(|b| b.winding.ch).sum();
    let doc = serde_json::json!({ "levels": &blocks, "sum": total, "E_g": spec.e_g, "N_k": p.n_k });
    Ok(TaskOutput { tables: vec![main, diag], documents: vec![(task.table_name().into(), doc)], failures: Vec::new() })
}

fn run_realspace(spec: &ModelSpec, p: &TaskParams) -> Result<TaskOutput> {
    let seeds = p.seeds_or(spec.seed);
    let (ok, failed) = spin_chern_disordered(spec, &seeds, p.homotopy_lambda, p.n, p.window_fraction)?;
    let task = Task::SpinChernRealspace;
    let mut main = Table::new(task.table_name(), task.columns());
    let mut summary = Vec::new();
    for sc in &ok {
        let mut push = |l: &str, e: &crate::realspace::ChernEstimate| {
            main.rows.push(vec![
                sc.seed.to_string(),
                l.to_string(),
                fmt_f64(e.raw),
                e.rounded.to_string(),
                fmt_f64(e.spread),
                e.region.clone(),
                p.n.to_string(),
                p.n.to_string(),
            ]);
        };
        for (key, e) in &sc.levels {
            push(key, e);
        }
        push("total", &sc.total);
        summary.push(serde_json::json!({
            "seed": sc.seed,
            "fermi_level": sc.fermi_level,
            "min_island_gap": sc.min_island_gap,
        }));
    }
    let failures: Vec<(String, Error)> = failed.into_iter().map(|(s, e)| (format!("seed {s}"), e)).collect();
    let doc = serde_json::json!({
        "homotopy_lambda": p.homotopy_lambda,
        "seeds": summary,
        "failed": failures.iter().map(|(c, e)| serde_json::json!({
            "context": c, "guard": e.guard(), "error": e.to_string()
        })).collect::<Vec<_>>(),
    });
    Ok(TaskOutput { tables: vec![main], documents: vec![(task.table_name().into(), doc)], failures })
}

/// `||[s^z, H(lambda)]||`: Bloch grid for periodic models, a torus otherwise.
fn commutator_estimate(spec: &ModelSpec, lambda: f64) -> Result<f64> {
    // disorder is spin-diagonal and drops out of the commutator
    let clean = spec.clean();
    let full = if clean.flux.is_zero() {
        bulk_commutator_norm(&clean, 24)?
    } else {
        let tb = TightBinding::new(&clean)?;
        let side = probe_side(&clean);
        let h = tb.hamiltonian(&Geometry::Torus { n1: side, n2: side }, &Disorder::new(0))?;
        commutator_norm(&h.matrix, &h.sz_full(&tb.spin))?
    };
    Ok(lambda * full)
}

fn probe_side(spec: &ModelSpec) -> usize {
    let q = spec.flux.q as usize;
    PROBE_SIDE.div_ceil(q) * q
}

fn active_coupling(spec: &ModelSpec) -> (&'static str, f64) {
    if spec.lambda_ra != 0.0 {
        ("rashba", spec.lambda_ra)
    } else if spec.lambda_ze != 0.0 {
        ("zeeman", spec.lambda_ze)
    } else {
        ("none", 0.0)
    }
}

fn run_edge(spec: &ModelSpec, p: &TaskParams) -> Result<TaskOutput> {
    let lambda = p.homotopy_lambda;
    let ribbon = p.ribbon(spec);
    let gap = bulk_gap(spec, lambda, p.window(spec), &ribbon.seeds)?;
    let g = bump_g(gap.gap_interval, p.g_center, p.g_width)?;
    let r = edge_current(spec, lambda, &ribbon, &g, gap.gap_interval, p.edge)?;
    let comm = commutator_estimate(spec, lambda)?;
    let (name, value) = active_coupling(spec);
    let task = Task::EdgeCurrent;
    let mut main = Table::new(task.table_name(), task.columns());
    main.rows.push(vec![
        fmt_f64(lambda),
        name.into(),
        fmt_f64(value),
        fmt_f64(comm),
        fmt_f64(r.j_lower),
        fmt_f64(r.j_upper),
        r.n2.to_string(),
        r.n_k.to_string(),
        fmt_f64(g.e_c),
        fmt_f64(g.w),
        fmt_f64(g.norm6),
        r.cutoff_row.to_string(),
        fmt_opt(r.residual_estimate),
    ]);
    let mut profile = Table::new("edge_profile", &["row", "weight"]);
    for (i, w) in r.profile.iter().enumerate() {
        profile.rows.push(vec![i.to_string(), fmt_f64(*w)]);
    }
    let mut doc = serde_json::to_value(&r)?;
    doc["profile_decay_rate"] = serde_json::to_value(profile_decay_rate(&r.profile))?;
    doc["gap"] = serde_json::to_value(&gap)?;
    if spec.conserves_sz() && spec.lambda_dis == 0.0 {
        let mut per_spin = BTreeMap::new();
        for l in spec.spin()?.levels() {
            per_spin.insert(level_key(l), charge_edge_current_per_spin(spec, l, &g, gap.gap_interval, &ribbon)?);
        }
        doc["charge_current_per_spin"] = serde_json::to_value(per_spin)?;
    }
    Ok(TaskOutput {
        tables: vec![main, profile],
        documents: vec![(task.table_name().into(), doc)],
        failures: Vec::new(),
    })
}

fn run_scan(spec: &ModelSpec, p: &TaskParams) -> Result<TaskOutput> {
    let coupling = p.coupling.ok_or_else(|| Error::invalid("perturbation-scan needs params.coupling"))?;
    let ribbon = p.ribbon(spec);
    let base = coupling.apply(spec, 0.0);
    let gap0 = bulk_gap(&base, 1.0, p.window(spec), &ribbon.seeds)?;
    let g = bump_g(gap0.gap_interval, p.g_center, p.g_width)?;
    let scan = perturbation_scan(spec, coupling, &p.values, &g, &ribbon, p.window(spec))?;
    let task = Task::PerturbationScan;
    let mut main = Table::new(task.table_name(), task.columns());
    for row in &scan.rows {
        main.rows.push(vec![
            fmt_f64(1.0),
            coupling.name().into(),
            fmt_f64(row.value),
            fmt_f64(row.comm_norm),
            fmt_f64(row.j_e_lower),
            fmt_f64(row.j_e_upper),
            ribbon.n2.to_string(),
            ribbon.n_k.to_string(),
            fmt_f64(g.e_c),
            fmt_f64(g.w),
            fmt_f64(g.norm6),
            ribbon.cutoff().to_string(),
            fmt_f64(row.deviation / row.value),
        ]);
    }
    let doc = serde_json::to_value(&scan)?;
    Ok(TaskOutput { tables: vec![main], documents: vec![(task.table_name().into(), doc)], failures: Vec::new() })
}

/// Bulk gap of `H(lambda)` with `E_g` inside, island separation and `C_s`.
pub fn gap_report(spec: &ModelSpec, p: &TaskParams) -> Result<GapReport> {
    let lambda = p.homotopy_lambda;
    let seeds = p.seeds_or(spec.seed);
    let mut report = bulk_gap(spec, lambda, p.window(spec), &seeds)?;
    if !report.contains(spec.e_g) {
        return Err(Error::GapViolated { lo: report.gap_interval.0, hi: report.gap_interval.1, offending: Vec::new() });
    }
    report.e_g = spec.e_g;
    report.c_s = Some(commutator_estimate(spec, lambda)?);
    let tb = TightBinding::new(spec)?;
    let side = probe_side(spec);
    let h = tb.hamiltonian(&Geometry::Torus { n1: side, n2: side }, &Disorder::new(seeds[0]))?;
    let sz = h.sz_full(&tb.spin);
    let hl = apply_homotopy(&h.matrix, &sz, lambda)?.h_lambda;
    let proj = fermi_projection(&hl, spec.e_g)?;
    report.min_island_gap = match psp_islands(&proj, &sz, tb.spin.s, ISLAND_THRESHOLD) {
        Ok(set) => set.min_island_gap(),
        Err(Error::IslandsNotSeparated { min_gap, .. }) => Some(min_gap),
        Err(e) => return Err(e),
    };
    Ok(report)
}

fn run_gap_report(spec: &ModelSpec, p: &TaskParams) -> Result<TaskOutput> {
    let r = gap_report(spec, p)?;
    let task = Task::GapReport;
    let mut main = Table::new(task.table_name(), task.columns());
    main.rows.push(vec![
        fmt_f64(r.e_g),
        fmt_f64(r.gap_interval.0),
        fmt_f64(r.gap_interval.1),
        fmt_f64(r.width()),
        fmt_opt(r.min_island_gap),
        fmt_opt(r.c_s),
    ]);
    Ok(TaskOutput {
        tables: vec![main],
        documents: vec![(task.table_name().into(), serde_json::to_value(&r)?)],
        failures: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Ok,
    Failed,
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub file: String,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub verb: String,
    pub task: Task,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_time_s: f64,
    pub status: Status,
    pub guard: Option<String>,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub checkpoint: Option<Checkpoint>,
}

impl Manifest {
    fn new(verb: &str, cfg: &ExperimentConfig, hash: &str, seeds: Vec<u64>) -> Self {
        Manifest {
            tool: "spinhall".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            format_version: FORMAT_VERSION,
            verb: verb.into(),
            task: cfg.task,
            config_sha256: hash.into(),
            seeds,
            threads: rayon::current_num_threads(),
            wall_time_s: 0.0,
            status: Status::Running,
            guard: None,
            error: None,
            files: Vec::new(),
            checkpoint: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST), (serde_json::to_string_pretty(self)? + "\n").as_bytes())
    }

    fn add_file(&mut self, dir: &Path, name: &str, kind: &str) -> Result<()> {
        let sha256 = sha256_hex(&fs::read(dir.join(name))?);
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.into(), kind: kind.into(), sha256 });
        Ok(())
    }

    fn fail(&mut self, e: &Error) {
        self.status = Status::Failed;
        self.guard = e.guard().map(String::from);
        self.error = Some(e.to_string());
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn write_table(dir: &Path, t: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(t.file_name()))?;
    w.write_record(&t.header)?;
    for r in &t.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| Ok(rec?.iter().map(String::from).collect())).collect::<Result<_>>()?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table").to_string();
    Ok(Table { name, header, rows })
}

fn write_output(dir: &Path, out: &TaskOutput, manifest: &mut Manifest) -> Result<()> {
    for t in &out.tables {
        write_table(dir, t)?;
        manifest.add_file(dir, &t.file_name(), "csv")?;
    }
    for (name, doc) in &out.documents {
        let file = format!("{name}.json");
        fs::write(dir.join(&file), serde_json::to_string_pretty(doc)? + "\n")?;
        manifest.add_file(dir, &file, "json")?;
    }
    Ok(())
}

/// Result of a CLI verb.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
    pub guard: Option<String>,
}

impl Outcome {
    fn ok(message: impl Into<String>) -> Self {
        Outcome { code: 0, message: message.into(), guard: None }
    }

    pub fn from_error(e: &Error) -> Self {
        let guard = e.guard().map(String::from);
        let message = match &guard {
            Some(g) => format!("{e} [guard: {g}]"),
            None => e.to_string(),
        };
        Outcome { code: exit_code(e), message, guard }
    }
}

/// 2 for input/validation problems, 3 for numerical guards, 1 for I/O.
pub fn exit_code(e: &Error) -> i32 {
    if e.guard().is_some() {
        return 3;
    }
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::BudgetExceeded { .. } | Error::Json(_) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub force_budget: bool,
}

struct Loaded {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
}

fn load(config: &Path, opts: &Options, sweep: bool) -> Result<Loaded> {
    let bytes = fs::read(config).map_err(|e| Error::invalid(format!("cannot read {}: {e}", config.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::invalid("config is not UTF-8"))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    if sweep && cfg.sweep.is_none() {
        return Err(Error::invalid("sweep needs a \"sweep\" section"));
    }
    cfg.check_budget(sweep, opts.force_budget)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::invalid("no output directory (set output_dir or --out)"))?;
    Ok(Loaded { cfg, hash: sha256_hex(&bytes), out })
}

/// `validate`: schema and budget check only.
pub fn validate(config: &Path, opts: &Options) -> Outcome {
    match load(config, opts, false) {
        Ok(l) => Outcome::ok(format!(
            "{}: valid {} config, estimated cost {:.3e} (budget {:.3e})",
            config.display(),
            l.cfg.task.name(),
            l.cfg.point_cost() * l.cfg.sweep_points() as f64,
            l.cfg.budget()
        )),
        Err(e) => Outcome::from_error(&e),
    }
}

/// `run`: executes the task once and writes its result files.
pub fn run(config: &Path, opts: &Options) -> Outcome {
    let l = match load(config, opts, false) {
        Ok(l) => l,
        Err(e) => return Outcome::from_error(&e),
    };
    match run_loaded(&l) {
        Ok(o) => o,
        Err(e) => Outcome::from_error(&e),
    }
}

fn run_loaded(l: &Loaded) -> Result<Outcome> {
    let start = Instant::now();
    fs::create_dir_all(&l.out)?;
    let seeds = l.cfg.params.seeds_or(l.cfg.model.seed);
    let mut manifest = Manifest::new("run", &l.cfg, &l.hash, seeds);
    let result = execute(l.cfg.task, &l.cfg.model, &l.cfg.params);
    let outcome = match result {
        Ok(out) => {
            write_output(&l.out, &out, &mut manifest)?;
            match out.failures.first() {
                Some((ctx, e)) => {
                    manifest.fail(e);
                    let mut o = Outcome::from_error(e);
                    o.message = format!("{ctx}: {}", o.message);
                    o
                }
                None => {
                    manifest.status = Status::Ok;
                    Outcome::ok(summary(&out))
                }
            }
        }
        Err(e) => {
            manifest.fail(&e);
            Outcome::from_error(&e)
        }
    };
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.save(&l.out)?;
    Ok(outcome)
}

fn summary(out: &TaskOutput) -> String {
    let t = &out.tables[0];
    let mut s = format!("{} rows written to {}", t.rows.len(), t.file_name());
    for r in t.rows.iter().take(8) {
        s.push_str("\n  ");
        s.push_str(&r.join(", "));
    }
    s
}

/// One finished sweep point as stored in the checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    index: usize,
    value: f64,
    seed: u64,
    ok: bool,
    guard: Option<String>,
    error: Option<String>,
    rows: Vec<Vec<String>>,
}

fn run_point(cfg: &ExperimentConfig, grid: &SweepGrid, index: usize, value: f64, seed: u64) -> Result<PointRecord> {
    let (spec, params) = apply_parameter(&cfg.model, &cfg.params, &grid.parameter, value, seed)?;
    let mut rec = PointRecord { index, value, seed, ok: true, guard: None, error: None, rows: Vec::new() };
    let failure = match execute(cfg.task, &spec, &params) {
        Ok(out) => {
            rec.rows = out.tables.into_iter().next().map(|t| t.rows).unwrap_or_default();
            out.failures.into_iter().next().map(|(_, e)| e)
        }
        Err(e) if e.guard().is_some() => Some(e),
        Err(e) => return Err(e),
    };
    if let Some(e) = failure {
        rec.ok = false;
        rec.guard = e.guard().map(String::from);
        rec.error = Some(e.to_string());
    }
    Ok(rec)
}

fn read_checkpoint(dir: &Path, hash: &str) -> BTreeMap<usize, PointRecord> {
    let resumable = Manifest::load(dir)
        .map(|m| m.config_sha256 == hash && m.status != Status::Ok && m.checkpoint.is_some())
        .unwrap_or(false);
    if !resumable {
        return BTreeMap::new();
    }
    let text = fs::read_to_string(dir.join(CHECKPOINT)).unwrap_or_default();
    // a torn last line from an interrupted write is simply dropped
    text.lines()
        .filter_map(|line| serde_json::from_str::<PointRecord>(line).ok())
        .map(|r| (r.index, r))
        .collect()
}

/// `sweep`: runs every `(value, seed)` point, resuming from a checkpoint of an
/// interrupted sweep with the same config, and writes one consolidated CSV.
pub fn sweep(config: &Path, opts: &Options) -> Outcome {
    let l = match load(config, opts, true) {
        Ok(l) => l,
        Err(e) => return Outcome::from_error(&e),
    };
    match sweep_loaded(&l) {
        Ok(o) => o,
        Err(e) => Outcome::from_error(&e),
    }
}

fn sweep_loaded(l: &Loaded) -> Result<Outcome> {
    let start = Instant::now();
    let grid = l.cfg.sweep.clone().expect("checked in load");
    let seeds = if grid.seeds.is_empty() { vec![l.cfg.model.seed] } else { grid.seeds.clone() };
    let points: Vec<(usize, f64, u64)> = grid
        .values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .enumerate()
        .map(|(i, (v, s))| (i, v, s))
        .collect();
    fs::create_dir_all(&l.out)?;
    let mut done = read_checkpoint(&l.out, &l.hash);
    if done.is_empty() {
        let _ = fs::remove_file(l.out.join(CHECKPOINT));
    }
    let mut manifest = Manifest::new("sweep", &l.cfg, &l.hash, seeds.clone());
    let total = points.len();
    let batch = rayon::current_num_threads().max(1);
    let todo: Vec<_> = points.iter().filter(|p| !done.contains_key(&p.0)).copied().collect();
    for chunk in todo.chunks(batch) {
        let records = chunk
            .par_iter()
            .map(|&(i, v, s)| run_point(&l.cfg, &grid, i, v, s))
            .collect::<Vec<Result<PointRecord>>>();
        let mut file = fs::OpenOptions::new().create(true).append(true).open(l.out.join(CHECKPOINT))?;
        for r in records {
            let r = match r {
                Ok(r) => r,
                Err(e) => {
                    manifest.fail(&e);
                    manifest.wall_time_s = start.elapsed().as_secs_f64();
                    manifest.save(&l.out)?;
                    return Ok(Outcome::from_error(&e));
                }
            };
            writeln!(file, "{}", serde_json::to_string(&r)?)?;
            done.insert(r.index, r);
        }
        file.sync_data()?;
        manifest.checkpoint = Some(Checkpoint { file: CHECKPOINT.into(), completed: done.len(), total });
        manifest.wall_time_s = start.elapsed().as_secs_f64();
        manifest.save(&l.out)?;
    }

    let mut header = vec![grid.parameter.clone(), "sweep_seed".into(), "status".into(), "guard".into()];
    header.extend(l.cfg.task.columns().iter().map(|s| s.to_string()));
    let width = header.len();
    let mut table = Table { name: "sweep".into(), header, rows: Vec::new() };
    let mut failed = 0;
    for (i, _, _) in &points {
        let r = &done[i];
        let prefix = vec![
            fmt_f64(r.value),
            r.seed.to_string(),
            if r.ok { "ok".into() } else { "failed".into() },
            r.guard.clone().unwrap_or_default(),
        ];
        if !r.ok {
            failed += 1;
        }
        if r.rows.is_empty() {
            let mut row = prefix.clone();
            row.resize(width, String::new());
            table.rows.push(row);
        }
        for row in &r.rows {
            let mut full = prefix.clone();
            full.extend(row.iter().cloned());
            table.rows.push(full);
        }
    }
    write_table(&l.out, &table)?;
    manifest.add_file(&l.out, &table.file_name(), "csv")?;
    let _ = fs::remove_file(l.out.join(CHECKPOINT));
    manifest.checkpoint = None;
    manifest.status = Status::Ok;
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.save(&l.out)?;
    Ok(Outcome::ok(format!(
        "{} points ({} failed), {} rows written to {}",
        total,
        failed,
        table.rows.len(),
        table.file_name()
    )))
}

/// `report`: turns every CSV listed in the manifest into column-wise plot data
/// (`<name>.plot.json`) and prints a short summary.
pub fn report(dir: &Path) -> Outcome {
    match report_inner(dir) {
        Ok(o) => o,
        Err(e) => Outcome::from_error(&e),
    }
}

fn report_inner(dir: &Path) -> Result<Outcome> {
    let mut manifest =
        Manifest::load(dir).map_err(|e| Error::invalid(format!("no readable manifest in {}: {e}", dir.display())))?;
    let csvs: Vec<String> = manifest.files.iter().filter(|f| f.kind == "csv").map(|f| f.path.clone()).collect();
    let mut lines = vec![format!(
        "{} {} ({:?}, {:.2} s)",
        manifest.verb,
        manifest.task.name(),
        manifest.status,
        manifest.wall_time_s
    )];
    if let Some(g) = &manifest.guard {
        lines.push(format!("  guard: {g}"));
    }
    for name in csvs {
        let table = read_table(&dir.join(&name))?;
        let mut series = serde_json::Map::new();
        for (i, h) in table.header.iter().enumerate() {
            let col: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|r| match r[i].parse::<f64>() {
                    Ok(x) if x.is_finite() => serde_json::json!(x),
                    _ if r[i].is_empty() => serde_json::Value::Null,
                    _ => serde_json::json!(r[i]),
                })
                .collect();
            series.insert(h.clone(), serde_json::Value::Array(col));
        }
        let doc = serde_json::json!({ "source": name, "columns": table.header, "series": series });
        let plot = format!("{}.plot.json", table.name);
        fs::write(dir.join(&plot), serde_json::to_string_pretty(&doc)? + "\n")?;
        manifest.add_file(dir, &plot, "plot")?;
        lines.push(format!("  {name}: {} rows -> {plot}", table.rows.len()));
    }
    manifest.save(dir)?;
    Ok(Outcome::ok(lines.join("\n")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn km_config(task: &str, extra: &str) -> String {
        format!(
            r#"{{"format_version": 1, "task": "{task}", "model": {{"lattice": "honeycomb", "s": 0.5, "R": 2,
            "t_hop": 1.0, "lambda_SO": 0.2, "lambda_Ra": 0.0, "lambda_Ze": 0.0, "lambda_dis": 0.0}}{extra}}}"#
        )
    }

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::from_json(&km_config("gap-report", "")).unwrap();
        assert_eq!(cfg.task, Task::GapReport);
        assert_eq!(cfg.params, TaskParams::default());
        assert_eq!(cfg.params.n_k, 512);
        assert_eq!(cfg.params.edge, Edge::Lower);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = ExperimentConfig::from_json(&km_config("gap-report", r#", "colour": 1"#)).unwrap_err();
        assert_eq!(exit_code(&e), 2);
        let e = ExperimentConfig::from_json(&km_config("gap-report", r#", "params": {"N_q": 3}"#)).unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn parameter_ranges_are_checked() {
        for extra in [
            r#", "params": {"N_k": 16}"#,
            r#", "params": {"homotopy_lambda": 1.5}"#,
            r#", "sweep": {"parameter": "lambda_XY", "values": [0.1]}"#,
        ] {
            assert!(ExperimentConfig::from_json(&km_config("spin-chern-transfer", extra)).is_err(), "{extra}");
        }
        assert!(ExperimentConfig::from_json(&km_config("perturbation-scan", "")).is_err());
        assert!(ExperimentConfig::from_json(&km_config("gap-report", "").replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
    }

    #[test]
    fn budget_guard_needs_override() {
        let cfg = ExperimentConfig::from_json(&km_config("spin-chern-realspace", r#", "params": {"N": 60}, "budget": 1e9"#)).unwrap();
        let e = cfg.check_budget(false, false).unwrap_err();
        assert!(matches!(e, Error::BudgetExceeded { .. }));
        assert_eq!(exit_code(&e), 2);
        cfg.check_budget(false, true).unwrap();
    }

    #[test]
    fn sweep_points_cover_grid() {
        let cfg = ExperimentConfig::from_json(&km_config(
            "gap-report",
            r#", "sweep": {"parameter": "lambda_Ra", "values": [0.0, 0.1, 0.2], "seeds": [1, 2]}"#,
        ))
        .unwrap();
        assert_eq!(cfg.sweep_points(), 6);
        let (s, p) = apply_parameter(&cfg.model, &cfg.params, "lambda_Ra", 0.1, 2).unwrap();
        assert_eq!((s.lambda_ra, s.seed, p.seeds.clone()), (0.1, 2, vec![2]));
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.0, 1.0, -0.25, 1e-7, 3.5e20, 0.1 + 0.2, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1e-7), "1e-7");
        assert_eq!(fmt_f64(0.5), "0.5");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(exit_code(&Error::IslandsNotSeparated { min_gap: 0.0, threshold: 0.05 }), 3);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("disk"))), 1);
    }
}
