//! Experiment configuration, seeded batch execution and report persistence.
//!
//! Every random draw in an experiment comes from a ChaCha8 generator seeded
//! by [`split_seed`] over the master seed and the draw's indices, so runs can
//! execute in any order on any number of threads and still produce the same
//! report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    random_element, random_special_unitary, standard_basis, AlgebraElement, CMatrix,
    UnitaryMatrix,
};
use crate::dynamics::{endpoint_jacobian_with, ControlField, ControlSystem};
use crate::error::{Error, Result};
use crate::landscape::{
    classify_critical, gradient_ascent, AscentOptions, Objective, ObjectiveKind, RunRecord,
};
use crate::singularity::larc_dimension_with;
use crate::synthesis::{
    fix_parameter_scan, restriction_cascade, singular_critical_search, CascadeReport, Fix,
    ScanPoint, SearchOptions, SearchRecord,
};
use crate::tolerance::Tolerances;

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "QLANDSCAPE_WORKERS";

/// Normalized value counted as reaching the optimum.
pub const SUCCESS_THRESHOLD: f64 = 0.999;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit seed for the draw at `indices` under `master`: splitmix64
/// of the master seed, then for each index h ← splitmix64(rotl(h, 23) ⊕ index).
pub fn split_seed(master: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(splitmix64(master), |h, &i| splitmix64(h.rotate_left(23) ^ i))
}

/// Seed streams, the first index passed to [`split_seed`].
const STREAM_SYSTEM: u64 = 0;
const STREAM_TARGET: u64 = 1;
const STREAM_RUN: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OptimizeBatch,
    SingularSearch,
    FixScan,
    Cascade,
    LarcCensus,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::OptimizeBatch => "optimize_batch",
            ExperimentKind::SingularSearch => "singular_search",
            ExperimentKind::FixScan => "fix_scan",
            ExperimentKind::Cascade => "cascade",
            ExperimentKind::LarcCensus => "larc_census",
        }
    }
}

/// Objective family; targets are drawn per system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::J2Gate,
        }
    }
}

/// Frobenius norms of the randomly drawn drift and control generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub drift_norm: f64,
    pub control_norm: f64,
    /// Redraw single-generator systems until they satisfy the Lie algebra
    /// rank condition.
    pub require_controllable: bool,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            drift_norm: 1.0,
            control_norm: 1.0,
            require_controllable: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub p: usize,
    pub kappa: f64,
    pub num_systems: usize,
    pub num_seeds_per_system: usize,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimizer: AscentOptions,
    /// Settings for `singular_search`; `restarts` is replaced by
    /// `num_seeds_per_system`.
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub system: SystemSpec,
    /// Values per scan for `fix_scan`.
    #[serde(default = "default_scan_values")]
    pub scan_values: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub master_seed: u64,
    #[serde(default)]
    pub outputs: OutputPaths,
}

fn default_scan_values() -> usize {
    101
}

/// Pulls the first backquoted name out of a serde message.
fn field_in(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| {
            let msg = e.to_string();
            Error::config(field_in(&msg).as_deref().unwrap_or("<document>"), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("n", "must be at least 2"));
        }
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(Error::config("T", "must be positive"));
        }
        if self.p == 0 {
            return Err(Error::config("p", "must be at least 1"));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::config("kappa", "must be positive"));
        }
        if self.num_systems == 0 {
            return Err(Error::config("num_systems", "must be at least 1"));
        }
        if self.num_seeds_per_system == 0 {
            return Err(Error::config("num_seeds_per_system", "must be at least 1"));
        }
        if !(self.system.drift_norm >= 0.0) || !(self.system.control_norm > 0.0) {
            return Err(Error::config("system", "norms must be positive"));
        }
        if self.kind == ExperimentKind::FixScan && self.scan_values == 0 {
            return Err(Error::config("scan_values", "must be at least 1"));
        }
        if self.kind == ExperimentKind::SingularSearch {
            let s = &self.search;
            if s.iters == 0 || s.steps_per_piece == 0 || s.max_draws == 0 {
                return Err(Error::config("search", "counts must be at least 1"));
            }
            if self.p * s.steps_per_piece < 100 {
                return Err(Error::config("search", "p × steps_per_piece must be at least 100"));
            }
        }
        Ok(())
    }
}

/// Bundled configurations.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = |kind, n, t, p, kappa, systems, seeds| ExperimentConfig {
        kind,
        n,
        total_time: t,
        p,
        kappa,
        num_systems: systems,
        num_seeds_per_system: seeds,
        objective: ObjectiveSpec::default(),
        optimizer: AscentOptions::default(),
        search: SearchOptions::default(),
        system: SystemSpec::default(),
        scan_values: default_scan_values(),
        tolerances: Tolerances::default(),
        master_seed: 20_240_601,
        outputs: OutputPaths::default(),
    };
    let search_system = SystemSpec {
        drift_norm: 0.3,
        control_norm: 1.0,
        require_controllable: true,
    };
    // at unit norms T = 10 is below the reachability time for most su(4) pairs
    let strong_system = SystemSpec {
        drift_norm: 5.0,
        control_norm: 5.0,
        require_controllable: true,
    };
    match name {
        "confirmation-small" => Some(ExperimentConfig {
            system: search_system,
            ..base(ExperimentKind::SingularSearch, 4, 10.0, 100, 1.0, 10, 10)
        }),
        "confirmation-full" => Some(ExperimentConfig {
            system: search_system,
            ..base(ExperimentKind::SingularSearch, 4, 10.0, 1000, 1.0, 100, 100)
        }),
        "optimize-small" => Some(base(ExperimentKind::OptimizeBatch, 2, 8.0, 32, 2.0, 5, 5)),
        "trap-free-n2" => Some(ExperimentConfig {
            system: strong_system,
            ..base(ExperimentKind::OptimizeBatch, 2, 10.0, 100, 2.0, 10, 10)
        }),
        "trap-free-n4" => Some(ExperimentConfig {
            system: strong_system,
            ..base(ExperimentKind::OptimizeBatch, 4, 10.0, 100, 2.0, 10, 5)
        }),
        "scan-small" => Some(base(ExperimentKind::FixScan, 2, 1.0, 4, 1.0, 10, 1)),
        "larc-census" => Some(base(ExperimentKind::LarcCensus, 4, 1.0, 1, 1.0, 200, 1)),
        _ => None,
    }
}

pub const PRESETS: &[&str] = &[
    "confirmation-small",
    "confirmation-full",
    "optimize-small",
    "trap-free-n2",
    "trap-free-n4",
    "scan-small",
    "larc-census",
];

/// One row of the CSV summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub system_index: usize,
    pub seed_index: usize,
    pub final_value: f64,
    pub normalized_value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub corank_at_final: Option<usize>,
    pub classification: String,
    pub termination: String,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total_runs: usize,
    /// Fraction of runs with normalized value ≥ 0.999 (optimization), or
    /// of restarts passing verification (singular search).
    pub success_fraction: f64,
    pub trap_candidates: usize,
    pub corank_histogram: BTreeMap<usize, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_positives: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected_restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controllable_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<usize>,
}

impl Aggregate {
    /// Statistics that depend only on the summary rows.
    pub fn from_rows(kind: ExperimentKind, rows: &[RunSummary]) -> Self {
        let mut hist = BTreeMap::new();
        for r in rows {
            if let Some(c) = r.corank_at_final {
                *hist.entry(c).or_insert(0) += 1;
            }
        }
        let total = rows.len();
        let (successes, traps) = match kind {
            ExperimentKind::SingularSearch => {
                let v = rows
                    .iter()
                    .filter(|r| r.classification == SEARCH_VERIFIED)
                    .count();
                (v, v)
            }
            _ => (
                rows.iter()
                    .filter(|r| r.normalized_value >= SUCCESS_THRESHOLD)
                    .count(),
                rows.iter()
                    .filter(|r| {
                        r.classification == "second_order_critical"
                            || r.classification == "singular_critical"
                    })
                    .count(),
            ),
        };
        Aggregate {
            total_runs: total,
            success_fraction: if total == 0 { 0.0 } else { successes as f64 / total as f64 },
            trap_candidates: traps,
            corank_histogram: hist,
            ..Default::default()
        }
    }
}

const SEARCH_VERIFIED: &str = "verified_singular_critical";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system_index: usize,
    /// Redraws needed to satisfy the rank condition.
    pub draws: usize,
    pub larc_dimension: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeRun {
    pub system_index: usize,
    pub seed_index: usize,
    pub record: RunRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSystem {
    pub system_index: usize,
    pub system: SystemDoc,
    /// Target of a gate objective.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<UnitaryDoc>,
    pub degenerate: bool,
    pub all_rejected: bool,
    pub record: Option<SearchRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSummary {
    pub system_index: usize,
    pub seed_index: usize,
    pub generator: usize,
    pub piece: usize,
    /// Scanned values with positive corank.
    pub failures: usize,
    pub points: Vec<ScanPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub system_index: usize,
    pub seed_index: usize,
    pub report: CascadeReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusRow {
    pub system_index: usize,
    pub larc_dimension: usize,
    pub controllable: bool,
}

/// Kind-specific results.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Details {
    OptimizeBatch { runs: Vec<OptimizeRun> },
    SingularSearch { systems: Vec<SearchSystem> },
    FixScan { scans: Vec<ScanSummary> },
    Cascade { cascades: Vec<CascadeSummary> },
    LarcCensus { systems: Vec<CensusRow> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    /// Seconds since the Unix epoch; excluded from reproducibility checks.
    pub timestamp: u64,
    pub config: ExperimentConfig,
    pub tolerances: Tolerances,
    pub seeding: String,
    pub systems: Vec<SystemSummary>,
    pub runs: Vec<RunSummary>,
    pub details: Details,
    pub aggregate: Aggregate,
    pub wall_ms: u64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV summary: the fixed run columns for optimization and search,
    /// one row per scan point, cascade step or census system otherwise.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        match &self.details {
            Details::OptimizeBatch { .. } | Details::SingularSearch { .. } => {
                if self.runs.is_empty() {
                    w.write_record(RUN_COLUMNS).map_err(fmt)?;
                }
                for r in &self.runs {
                    w.serialize(r).map_err(fmt)?;
                }
            }
            Details::FixScan { scans } => {
                w.write_record([
                    "system_index",
                    "seed_index",
                    "generator",
                    "piece",
                    "value",
                    "corank",
                    "residual",
                ])
                .map_err(fmt)?;
                for s in scans {
                    for p in &s.points {
                        w.write_record([
                            s.system_index.to_string(),
                            s.seed_index.to_string(),
                            s.generator.to_string(),
                            s.piece.to_string(),
                            p.value.to_string(),
                            p.corank.to_string(),
                            p.residual.map(|r| r.to_string()).unwrap_or_default(),
                        ])
                        .map_err(fmt)?;
                    }
                }
            }
            Details::Cascade { cascades } => {
                w.write_record([
                    "system_index",
                    "seed_index",
                    "step",
                    "generator",
                    "piece",
                    "value",
                    "free_parameters",
                    "corank",
                    "residual",
                    "larc_dimension",
                ])
                .map_err(fmt)?;
                for c in cascades {
                    for s in &c.report.steps {
                        w.write_record([
                            c.system_index.to_string(),
                            c.seed_index.to_string(),
                            s.step.to_string(),
                            s.fix.generator.to_string(),
                            s.fix.piece.to_string(),
                            s.fix.value.to_string(),
                            s.free_parameters.to_string(),
                            s.corank.to_string(),
                            s.residual.map(|r| r.to_string()).unwrap_or_default(),
                            s.larc_dimension.to_string(),
                        ])
                        .map_err(fmt)?;
                    }
                }
            }
            Details::LarcCensus { systems } => {
                for s in systems {
                    w.serialize(s).map_err(fmt)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

pub const RUN_COLUMNS: [&str; 10] = [
    "system_index",
    "seed_index",
    "final_value",
    "normalized_value",
    "iterations",
    "grad_norm",
    "corank_at_final",
    "classification",
    "termination",
    "wall_ms",
];

/// Removes `timestamp` and `wall_ms` entries at every depth, leaving the
/// part of a report that must be reproducible.
pub fn strip_volatile(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("timestamp");
            map.remove("wall_ms");
            map.values_mut().for_each(strip_volatile);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

/// Worker count from the environment, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&w| w > 0)
}

/// Random single-generator system for index `i`, redrawn until controllable
/// when the system settings require it. Returns the system and the number of draws.
fn draw_dipole(cfg: &ExperimentConfig, i: usize) -> Result<(ControlSystem, usize, usize)> {
    let full = cfg.n * cfg.n - 1;
    let mut draws = 0u64;
    loop {
        let s = split_seed(cfg.master_seed, &[STREAM_SYSTEM, i as u64, draws]);
        let drift = if cfg.system.drift_norm > 0.0 {
            random_element(cfg.n, s, cfg.system.drift_norm)?
        } else {
            AlgebraElement::zero(cfg.n)
        };
        let control = random_element(cfg.n, splitmix64(s), cfg.system.control_norm)?;
        let sys = ControlSystem::dipole(drift, control)?;
        draws += 1;
        let dim = larc_dimension_with(&sys, cfg.tolerances.larc);
        if dim == full || !cfg.system.require_controllable || draws >= 1000 {
            return Ok((sys, draws as usize, dim));
        }
    }
}

fn draw_fully_actuated(cfg: &ExperimentConfig, i: usize) -> Result<ControlSystem> {
    let s = split_seed(cfg.master_seed, &[STREAM_SYSTEM, i as u64, 0]);
    let drift = if cfg.system.drift_norm > 0.0 {
        random_element(cfg.n, s, cfg.system.drift_norm)?
    } else {
        AlgebraElement::zero(cfg.n)
    };
    ControlSystem::fully_actuated(drift, &standard_basis(cfg.n)?)
}

fn unit_vector(n: usize, i: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |r, _| Complex64::new(if r == i { 1.0 } else { 0.0 }, 0.0))
}

/// Objective with a random target for system `i`.
pub fn draw_objective(kind: ObjectiveKind, n: usize, seed: u64) -> Result<Objective> {
    let u = random_special_unitary(n, seed)?;
    match kind {
        ObjectiveKind::J1Gate => Objective::gate_real(u),
        ObjectiveKind::J2Gate => Objective::gate_phase_free(u),
        ObjectiveKind::StateTransfer => {
            Objective::state_transfer(unit_vector(n, 0), u.matrix().column(0).into_owned())
        }
        ObjectiveKind::Observable => {
            let rho = unit_vector(n, 0) * unit_vector(n, 0).adjoint();
            let d = CMatrix::from_diagonal(&DVector::from_fn(n, |r, _| {
                Complex64::new(r as f64, 0.0)
            }));
            let o = u.matrix() * d * u.matrix().adjoint();
            Objective::observable(rho, o)
        }
    }
}

/// Field with coefficients uniform in [−κ, κ].
pub fn random_control(
    total_time: f64,
    pieces: usize,
    kappa: f64,
    generators: usize,
    seed: u64,
) -> Result<ControlField> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..generators * pieces)
        .map(|_| rng.random_range(-kappa..=kappa))
        .collect();
    ControlField::new(total_time, pieces, kappa, generators, coeffs)
}

fn random_field(cfg: &ExperimentConfig, generators: usize, seed: u64) -> Result<ControlField> {
    random_control(cfg.total_time, cfg.p, cfg.kappa, generators, seed)
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Runs the configured experiment, writes the JSON report and CSV summary
/// to the configured paths, and returns the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let report = match workers_from_env() {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(|| execute(cfg))?,
        None => execute(cfg)?,
    };
    if let Some(path) = &cfg.outputs.json {
        write_file(path, &report.to_json()?)?;
    }
    if let Some(path) = &cfg.outputs.csv {
        write_file(path, &report.to_csv()?)?;
    }
    Ok(report)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn execute(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (systems, runs, details, mut aggregate) = match cfg.kind {
        ExperimentKind::OptimizeBatch => optimize_batch(cfg)?,
        ExperimentKind::SingularSearch => singular_search(cfg)?,
        ExperimentKind::FixScan => fix_scan(cfg)?,
        ExperimentKind::Cascade => cascade(cfg)?,
        ExperimentKind::LarcCensus => larc_census(cfg)?,
    };
    if aggregate.total_runs == 0 {
        aggregate.total_runs = runs.len();
    }
    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp,
        config: cfg.clone(),
        tolerances: cfg.tolerances,
        seeding: "splitmix64 fold over (master_seed, stream, system_index, seed_index)".into(),
        systems,
        runs,
        details,
        aggregate,
        wall_ms: elapsed_ms(start),
    })
}

type Parts = (Vec<SystemSummary>, Vec<RunSummary>, Details, Aggregate);

fn draw_systems(cfg: &ExperimentConfig) -> Result<(Vec<ControlSystem>, Vec<SystemSummary>)> {
    let drawn: Vec<_> = (0..cfg.num_systems)
        .into_par_iter()
        .map(|i| draw_dipole(cfg, i))
        .collect::<Result<_>>()?;
    let summaries = drawn
        .iter()
        .enumerate()
        .map(|(i, (_, draws, dim))| SystemSummary {
            system_index: i,
            draws: *draws,
            larc_dimension: *dim,
        })
        .collect();
    Ok((drawn.into_iter().map(|(s, _, _)| s).collect(), summaries))
}

fn targets(cfg: &ExperimentConfig) -> Result<Vec<Objective>> {
    (0..cfg.num_systems)
        .map(|i| {
            draw_objective(
                cfg.objective.kind,
                cfg.n,
                split_seed(cfg.master_seed, &[STREAM_TARGET, i as u64]),
            )
        })
        .collect()
}

fn pairs(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    (0..cfg.num_systems)
        .flat_map(|i| (0..cfg.num_seeds_per_system).map(move |j| (i, j)))
        .collect()
}

fn run_seed(cfg: &ExperimentConfig, i: usize, j: usize) -> u64 {
    split_seed(cfg.master_seed, &[STREAM_RUN, i as u64, j as u64])
}

fn optimize_batch(cfg: &ExperimentConfig) -> Result<Parts> {
    let (systems, summaries) = draw_systems(cfg)?;
    let objectives = targets(cfg)?;
    let tol = &cfg.tolerances;
    let results: Vec<(OptimizeRun, RunSummary)> = pairs(cfg)
        .into_par_iter()
        .map(|(i, j)| {
            let t0 = Instant::now();
            let seed = run_seed(cfg, i, j);
            let field = random_field(cfg, 1, seed)?;
            let mut record = gradient_ascent(&systems[i], &field, &objectives[i], &cfg.optimizer)?;
            record.seed = Some(seed);
            let tag = classify_critical(&systems[i], &record.final_field, &objectives[i], tol)?;
            record.classification = Some(tag);
            let corank = endpoint_jacobian_with(&systems[i], &record.final_field, tol)?.corank();
            let row = RunSummary {
                system_index: i,
                seed_index: j,
                final_value: record.final_value,
                normalized_value: record.normalized_value,
                iterations: record.iterations,
                grad_norm: record.final_grad_norm,
                corank_at_final: Some(corank),
                classification: tag.as_str().to_string(),
                termination: record.termination.as_str().to_string(),
                wall_ms: elapsed_ms(t0),
            };
            Ok((
                OptimizeRun {
                    system_index: i,
                    seed_index: j,
                    record,
                },
                row,
            ))
        })
        .collect::<Result<_>>()?;
    let (runs, rows): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregate = Aggregate::from_rows(cfg.kind, &rows);
    Ok((summaries, rows, Details::OptimizeBatch { runs }, aggregate))
}

fn gate_target(objective: &Objective) -> Option<UnitaryDoc> {
    match objective {
        Objective::GateReal { target } | Objective::GatePhaseFree { target } => {
            Some(UnitaryDoc::from_unitary(target))
        }
        _ => None,
    }
}

fn singular_search(cfg: &ExperimentConfig) -> Result<Parts> {
    let (systems, summaries) = draw_systems(cfg)?;
    let objectives = targets(cfg)?;
    let opts = SearchOptions {
        restarts: cfg.num_seeds_per_system,
        ..cfg.search
    };
    let found: Vec<(SearchSystem, u64)> = (0..cfg.num_systems)
        .into_par_iter()
        .map(|i| {
            let t0 = Instant::now();
            let seed = run_seed(cfg, i, 0);
            let res = singular_critical_search(
                &systems[i],
                &objectives[i],
                cfg.total_time,
                cfg.p,
                cfg.kappa,
                &opts,
                seed,
                &cfg.tolerances,
            );
            let sys = match res {
                Ok(record) => SearchSystem {
                    system_index: i,
                    system: SystemDoc::from_system(&systems[i]),
                    target: gate_target(&objectives[i]),
                    degenerate: record.degenerate,
                    all_rejected: false,
                    record: Some(record),
                },
                Err(Error::AllRejected) => SearchSystem {
                    system_index: i,
                    system: SystemDoc::from_system(&systems[i]),
                    target: gate_target(&objectives[i]),
                    degenerate: false,
                    all_rejected: true,
                    record: None,
                },
                Err(e) => return Err(e),
            };
            Ok((sys, elapsed_ms(t0)))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let (mut verified, mut converged, mut false_pos, mut rejected) = (0, 0, 0, 0);
    for (sys, ms) in &found {
        let Some(record) = &sys.record else {
            rejected += cfg.num_seeds_per_system;
            for j in 0..cfg.num_seeds_per_system {
                rows.push(rejected_row(sys.system_index, j, *ms));
            }
            continue;
        };
        for run in &record.runs {
            if run.rejected {
                rejected += 1;
                rows.push(rejected_row(sys.system_index, run.restart, *ms));
                continue;
            }
            verified += usize::from(run.verified);
            converged += usize::from(run.converged);
            false_pos += usize::from(run.false_positive);
            let classification = if run.verified {
                SEARCH_VERIFIED
            } else if run.false_positive {
                "false_positive"
            } else {
                "unverified"
            };
            rows.push(RunSummary {
                system_index: sys.system_index,
                seed_index: run.restart,
                final_value: run.best_value,
                normalized_value: if run.xi_norm > 0.0 { run.best_value / run.xi_norm } else { 0.0 },
                iterations: run.iterations,
                grad_norm: run.grad_norm.unwrap_or(f64::NAN),
                corank_at_final: run.corank,
                classification: classification.into(),
                termination: if run.converged { "converged" } else { "max_iters" }.into(),
                wall_ms: *ms,
            });
        }
    }
    let mut aggregate = Aggregate::from_rows(cfg.kind, &rows);
    aggregate.verified = Some(verified);
    aggregate.converged = Some(converged);
    aggregate.false_positives = Some(false_pos);
    aggregate.rejected_restarts = Some(rejected);
    let systems = found.into_iter().map(|(s, _)| s).collect();
    Ok((summaries, rows, Details::SingularSearch { systems }, aggregate))
}

fn rejected_row(i: usize, j: usize, ms: u64) -> RunSummary {
    RunSummary {
        system_index: i,
        seed_index: j,
        final_value: f64::NAN,
        normalized_value: f64::NAN,
        iterations: 0,
        grad_norm: f64::NAN,
        corank_at_final: None,
        classification: "rejected".into(),
        termination: "rejected".into(),
        wall_ms: ms,
    }
}

fn fix_scan(cfg: &ExperimentConfig) -> Result<Parts> {
    let objectives = targets(cfg)?;
    let m = cfg.n * cfg.n - 1;
    let values: Vec<f64> = if cfg.scan_values == 1 {
        vec![0.0]
    } else {
        (0..cfg.scan_values)
            .map(|i| -cfg.kappa + 2.0 * cfg.kappa * i as f64 / (cfg.scan_values - 1) as f64)
            .map(|v| v.clamp(-cfg.kappa, cfg.kappa))
            .collect()
    };
    let scans: Vec<ScanSummary> = pairs(cfg)
        .into_par_iter()
        .map(|(i, j)| {
            let sys = draw_fully_actuated(cfg, i)?;
            let seed = run_seed(cfg, i, j);
            let field = random_field(cfg, m, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
            let (g, k) = (rng.random_range(0..m), rng.random_range(0..cfg.p));
            let points =
                fix_parameter_scan(&sys, &field, g, k, &values, Some(&objectives[i]), &cfg.tolerances)?;
            Ok(ScanSummary {
                system_index: i,
                seed_index: j,
                generator: g,
                piece: k,
                failures: points.iter().filter(|p| p.corank > 0).count(),
                points,
            })
        })
        .collect::<Result<_>>()?;
    let mut hist = BTreeMap::new();
    for p in scans.iter().flat_map(|s| &s.points) {
        *hist.entry(p.corank).or_insert(0) += 1;
    }
    let total: usize = scans.iter().map(|s| s.points.len()).sum();
    let failures: usize = scans.iter().map(|s| s.failures).sum();
    let aggregate = Aggregate {
        total_runs: total,
        success_fraction: 1.0 - failures as f64 / total as f64,
        corank_histogram: hist,
        failures: Some(failures),
        ..Default::default()
    };
    Ok((Vec::new(), Vec::new(), Details::FixScan { scans }, aggregate))
}

fn cascade(cfg: &ExperimentConfig) -> Result<Parts> {
    let objectives = targets(cfg)?;
    let m = cfg.n * cfg.n - 1;
    let cascades: Vec<CascadeSummary> = pairs(cfg)
        .into_par_iter()
        .map(|(i, j)| {
            let sys = draw_fully_actuated(cfg, i)?;
            let seed = run_seed(cfg, i, j);
            let field = random_field(cfg, m, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
            let total = m * cfg.p;
            let mut order: Vec<usize> = (0..total).collect();
            for a in (1..total).rev() {
                order.swap(a, rng.random_range(0..=a));
            }
            let fixes: Vec<Fix> = order[..total - 1]
                .iter()
                .map(|&idx| Fix {
                    generator: idx / cfg.p,
                    piece: idx % cfg.p,
                    value: rng.random_range(-cfg.kappa..=cfg.kappa),
                })
                .collect();
            let report = restriction_cascade(&sys, &field, &fixes, &objectives[i], &cfg.tolerances)?;
            Ok(CascadeSummary {
                system_index: i,
                seed_index: j,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let failures = cascades.iter().filter(|c| c.report.failed_at.is_some()).count();
    let aggregate = Aggregate {
        total_runs: cascades.len(),
        success_fraction: 1.0 - failures as f64 / cascades.len() as f64,
        failures: Some(failures),
        ..Default::default()
    };
    Ok((Vec::new(), Vec::new(), Details::Cascade { cascades }, aggregate))
}

fn larc_census(cfg: &ExperimentConfig) -> Result<Parts> {
    let unchecked = ExperimentConfig {
        system: SystemSpec {
            require_controllable: false,
            ..cfg.system
        },
        ..cfg.clone()
    };
    let full = cfg.n * cfg.n - 1;
    let rows: Vec<CensusRow> = (0..cfg.num_systems)
        .into_par_iter()
        .map(|i| {
            let (_, _, dim) = draw_dipole(&unchecked, i)?;
            Ok(CensusRow {
                system_index: i,
                larc_dimension: dim,
                controllable: dim == full,
            })
        })
        .collect::<Result<_>>()?;
    let ok = rows.iter().filter(|r| r.controllable).count();
    let aggregate = Aggregate {
        total_runs: rows.len(),
        success_fraction: ok as f64 / rows.len() as f64,
        controllable_fraction: Some(ok as f64 / rows.len() as f64),
        ..Default::default()
    };
    Ok((Vec::new(), Vec::new(), Details::LarcCensus { systems: rows }, aggregate))
}

/// Complex matrix as rows of `[re, im]` pairs.
pub type MatrixDoc = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_doc(m: &CMatrix) -> MatrixDoc {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub fn matrix_from_doc(doc: &MatrixDoc, n: usize, what: &str) -> Result<CMatrix> {
    if doc.len() != n || doc.iter().any(|row| row.len() != n) {
        return Err(Error::Format(format!("{what} must be {n} x {n}")));
    }
    Ok(CMatrix::from_fn(n, n, |r, c| {
        Complex64::new(doc[r][c][0], doc[r][c][1])
    }))
}

/// On-disk control system: anti-Hermitian generators a = −iH₀, b_j = −iH_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    pub n: usize,
    pub drift: MatrixDoc,
    pub controls: Vec<MatrixDoc>,
}

impl SystemDoc {
    pub fn from_system(system: &ControlSystem) -> Self {
        SystemDoc {
            n: system.dim(),
            drift: matrix_to_doc(system.drift().matrix()),
            controls: system
                .generators()
                .iter()
                .map(|g| matrix_to_doc(g.matrix()))
                .collect(),
        }
    }

    pub fn to_system(&self) -> Result<ControlSystem> {
        let el = |m: &MatrixDoc, what: &str| {
            AlgebraElement::with_tolerance(matrix_from_doc(m, self.n, what)?, 1e-10)
        };
        let drift = el(&self.drift, "drift")?;
        let controls = self
            .controls
            .iter()
            .enumerate()
            .map(|(j, m)| el(m, &format!("control {j}")))
            .collect::<Result<_>>()?;
        ControlSystem::new(drift, controls)
    }
}

/// On-disk special unitary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitaryDoc {
    pub n: usize,
    pub matrix: MatrixDoc,
}

impl UnitaryDoc {
    pub fn from_unitary(u: &UnitaryMatrix) -> Self {
        UnitaryDoc {
            n: u.dim(),
            matrix: matrix_to_doc(u.matrix()),
        }
    }

    pub fn to_unitary(&self) -> Result<UnitaryMatrix> {
        UnitaryMatrix::new(matrix_from_doc(&self.matrix, self.n, "matrix")?)
    }
}

/// Reads and parses a JSON document, naming the path on failure.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
