//! Candidate singular controls for single-generator systems, a stochastic
//! search for singular critical controls, and parameter-fixing scans.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    bracket, re_inner, standard_basis, AlgebraElement, BasisSet, CMatrix, Spectral, UnitaryMatrix,
};
use crate::dynamics::{
    end_point, endpoint_jacobian_with, objective_gradient, value_and_gradient, ControlField,
    ControlSystem, Trajectory,
};
use crate::error::{Error, Result};
use crate::harness::split_seed;
use crate::landscape::Objective;
use crate::singularity::{
    is_transverse_to_level_set, larc_dimension_with, state_map_rank, JacobianReport,
};
use crate::tolerance::Tolerances;

/// Constraint residuals below this count as satisfied.
const SEED_TOL: f64 = 1e-10;

/// A unit direction B in su(n) together with its t = 0 consistency
/// residuals r0 = ⟨b, B⟩ and r1 = ⟨[b,a], B⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSeed {
    direction: AlgebraElement,
    r0: f64,
    r1: f64,
}

impl SingularSeed {
    /// Normalizes `direction` and records its residuals against `system`.
    pub fn new(system: &ControlSystem, direction: &AlgebraElement) -> Result<Self> {
        let (a, b) = single_generator(system)?;
        direction.check_dim(system.dim())?;
        let norm = direction.norm();
        if norm <= 0.0 {
            return Err(Error::InvalidInput("seed direction is zero".into()));
        }
        let direction = direction.scale(1.0 / norm);
        let ba = bracket(b.matrix(), a.matrix());
        Ok(Self {
            r0: re_inner(b.matrix(), direction.matrix()),
            r1: re_inner(&ba, direction.matrix()),
            direction,
        })
    }

    /// Removes the components along b and [b,a] and renormalizes, so both
    /// residuals vanish.
    pub fn projected(system: &ControlSystem, direction: &AlgebraElement) -> Result<Self> {
        let (a, b) = single_generator(system)?;
        direction.check_dim(system.dim())?;
        let basis = standard_basis(system.dim())?;
        let cons = constraint_frame(&basis, a, b);
        let mut v = DVector::from_vec(basis.coords(direction)?);
        project_out(&mut v, &cons);
        if v.norm() <= 1e-12 * direction.norm().max(1.0) {
            return Err(Error::InvalidInput(
                "seed direction lies in span{b, [b,a]}".into(),
            ));
        }
        let direction = basis.element((v.clone() / v.norm()).as_slice())?;
        Self::new(system, &direction)
    }

    pub fn direction(&self) -> &AlgebraElement {
        &self.direction
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn is_consistent(&self) -> bool {
        self.r0.abs() <= SEED_TOL && self.r1.abs() <= SEED_TOL
    }
}

fn single_generator(system: &ControlSystem) -> Result<(&AlgebraElement, &AlgebraElement)> {
    if system.num_generators() != 1 {
        return Err(Error::InvalidInput(format!(
            "singular-control synthesis needs one control generator, got {}",
            system.num_generators()
        )));
    }
    Ok((system.drift(), &system.generators()[0]))
}

/// Orthonormal coordinates spanning {b, [b,a]}.
fn constraint_frame(basis: &BasisSet, a: &AlgebraElement, b: &AlgebraElement) -> Vec<DVector<f64>> {
    let mut frame: Vec<DVector<f64>> = Vec::new();
    for m in [b.matrix().clone(), bracket(b.matrix(), a.matrix())] {
        let mut v = DVector::from_vec(basis.coords_of_matrix(&m));
        let scale = v.norm();
        project_out(&mut v, &frame);
        if v.norm() > 1e-12 * scale.max(1.0) {
            let n = v.norm();
            frame.push(v / n);
        }
    }
    frame
}

fn project_out(v: &mut DVector<f64>, frame: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in frame {
            let d = q.dot(v);
            *v -= q * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDiagnostics {
    pub r0: f64,
    pub r1: f64,
    /// Both residuals within 1e-10; otherwise the invariant is not expected
    /// to stay near zero.
    pub singular_seed: bool,
    /// max_t |⟨Ad_{U(t)}(b), B⟩|
    pub max_invariant: f64,
    pub max_abs_control: f64,
    /// Smallest |den| / (|num| + 1) met during integration.
    pub min_denominator_ratio: f64,
}

/// Sampled candidate singular control and the trajectory it generates.
#[derive(Debug, Clone)]
pub struct SingularControl {
    pub dt: f64,
    /// E on each integration step.
    pub control: Vec<f64>,
    pub trajectory: Trajectory,
    /// ⟨Ad_{U(t)}(b), B⟩ at every step boundary.
    pub invariant: Vec<f64>,
    pub diagnostics: SynthesisDiagnostics,
}

impl SingularControl {
    /// Piece averages of the sampled control on `pieces` equal pieces.
    pub fn resample(&self, pieces: usize) -> Result<Vec<f64>> {
        resample_piece_average(&self.control, pieces)
    }
}

/// Averages equally spaced samples over `pieces` equal pieces; the sample
/// count must be a multiple of `pieces`.
pub fn resample_piece_average(samples: &[f64], pieces: usize) -> Result<Vec<f64>> {
    if pieces == 0 || !samples.len().is_multiple_of(pieces) || samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot be split into {pieces} equal pieces",
            samples.len()
        )));
    }
    let m = samples.len() / pieces;
    Ok(samples.chunks(m).map(|c| c.iter().sum::<f64>() / m as f64).collect())
}

enum Synthesis {
    Done(SingularControl),
    OverBound,
}

/// Forward integration of the singular-control feedback law
///
/// E(t) = −⟨Ad_U([a,[b,a]]), B⟩ / ⟨Ad_U([b,[b,a]]), B⟩,
///
/// which keeps the second derivative of ⟨Ad_{U(t)}(b), B⟩ at zero. Each
/// step evaluates E from the current U and advances U by one exact
/// piecewise-constant step of length T/steps.
pub fn synthesize_singular_control(
    system: &ControlSystem,
    direction: &AlgebraElement,
    total_time: f64,
    steps: usize,
    denom_tol: f64,
) -> Result<SingularControl> {
    match synthesize(system, direction, total_time, steps, denom_tol, None)? {
        Synthesis::Done(c) => Ok(c),
        Synthesis::OverBound => unreachable!("no bound was given"),
    }
}

fn synthesize(
    system: &ControlSystem,
    direction: &AlgebraElement,
    total_time: f64,
    steps: usize,
    denom_tol: f64,
    bound: Option<f64>,
) -> Result<Synthesis> {
    let (a, b) = single_generator(system)?;
    direction.check_dim(system.dim())?;
    if (direction.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "seed direction has norm {}, expected 1",
            direction.norm()
        )));
    }
    if steps < 100 {
        return Err(Error::InvalidInput(format!("steps must be at least 100, got {steps}")));
    }
    if !(total_time > 0.0) || !total_time.is_finite() {
        return Err(Error::InvalidInput(format!("T must be positive, got {total_time}")));
    }
    let seed = SingularSeed::new(system, direction)?;
    let n = system.dim();
    let dt = total_time / steps as f64;
    let ba = bracket(b.matrix(), a.matrix());
    let num_op = bracket(a.matrix(), &ba);
    let den_op = bracket(b.matrix(), &ba);
    let bm = direction.matrix();

    let mut u = CMatrix::identity(n, n);
    let mut control = Vec::with_capacity(steps);
    let mut invariant = Vec::with_capacity(steps + 1);
    let mut pieces = Vec::with_capacity(steps);
    let mut boundary = Vec::with_capacity(steps + 1);
    boundary.push(UnitaryMatrix::identity(n));
    let mut min_ratio = f64::INFINITY;

    for s in 0..steps {
        let t = s as f64 * dt;
        // ⟨U†XU, B⟩ = ⟨X, U B U†⟩
        let moved = &u * bm * u.adjoint();
        invariant.push(re_inner(b.matrix(), &moved));
        let num = re_inner(&num_op, &moved);
        let den = re_inner(&den_op, &moved);
        let ratio = den.abs() / (num.abs() + 1.0);
        min_ratio = min_ratio.min(ratio);
        if ratio < denom_tol || !ratio.is_finite() {
            return Err(Error::DegenerateDenominator { t });
        }
        let e = -num / den;
        if let Some(k) = bound {
            if e.abs() > k {
                return Ok(Synthesis::OverBound);
            }
        }
        let h = system.generator_at([e]);
        u = Spectral::of(&h)?.exp(dt) * u;
        control.push(e);
        pieces.push(h);
        boundary.push(UnitaryMatrix::from_matrix_unchecked(u.clone()));
    }
    let moved = &u * bm * u.adjoint();
    invariant.push(re_inner(b.matrix(), &moved));

    let diagnostics = SynthesisDiagnostics {
        r0: seed.r0,
        r1: seed.r1,
        singular_seed: seed.is_consistent(),
        max_invariant: invariant.iter().fold(0f64, |m, x| m.max(x.abs())),
        max_abs_control: control.iter().fold(0f64, |m, x| m.max(x.abs())),
        min_denominator_ratio: min_ratio,
    };
    Ok(Synthesis::Done(SingularControl {
        dt,
        control,
        trajectory: Trajectory::from_parts(dt, pieces, boundary),
        invariant,
        diagnostics,
    }))
}

/// How search directions are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Directions stay orthogonal to b and [b,a].
    #[default]
    Projected,
    /// Unconstrained unit directions.
    Raw,
}

/// Settings for [`singular_critical_search`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub restarts: usize,
    /// Perturbation scale of the two-point estimator.
    pub sigma: f64,
    pub iters: usize,
    /// Step size η_k = eta0 / (1 + k/tau).
    pub eta0: f64,
    pub tau: f64,
    /// Integration steps per control piece.
    pub steps_per_piece: usize,
    /// Random directions drawn per restart before it counts as rejected.
    pub max_draws: usize,
    pub mode: SeedMode,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            sigma: 0.05,
            iters: 40,
            eta0: 0.2,
            tau: 20.0,
            steps_per_piece: 10,
            max_draws: 200,
            mode: SeedMode::Projected,
        }
    }
}

/// One restart of the search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub seed: u64,
    /// No admissible initial direction was found within `max_draws`.
    pub rejected: bool,
    pub draws: usize,
    pub iterations: usize,
    /// f(B) = ⟨B, ξ⟩ after the initial draw and after every iteration.
    pub history: Vec<f64>,
    pub best_value: f64,
    /// ‖ξ‖ at the best direction, the upper bound for f.
    pub xi_norm: f64,
    /// Best direction in `standard_basis` coordinates.
    pub best_direction: Vec<f64>,
    /// Directions (initial draws and updates) that violated the magnitude
    /// bound or hit a vanishing denominator.
    pub rejections: usize,
    /// f reached (1 − 1e-6)·‖ξ‖ with the ascent gradient below threshold.
    pub converged: bool,
    /// Piece-averaged control at the best direction.
    pub field: Option<ControlField>,
    pub grad_norm: Option<f64>,
    pub corank: Option<usize>,
    pub state_rank: Option<usize>,
    /// Exact gradient norm ≤ 1e-8 and corank > 0.
    pub verified: bool,
    /// Declared converged but failed verification.
    pub false_positive: bool,
}

/// Outcome of a search over one system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRecord {
    pub seed: u64,
    pub options: SearchOptions,
    /// [b,a] vanishes, so the feedback law is undefined.
    pub degenerate: bool,
    pub runs: Vec<RestartRecord>,
}

impl SearchRecord {
    pub fn best_value(&self) -> Option<f64> {
        self.runs
            .iter()
            .filter(|r| !r.rejected)
            .map(|r| r.best_value)
            .max_by(f64::total_cmp)
    }

    pub fn converged_count(&self) -> usize {
        self.runs.iter().filter(|r| r.converged).count()
    }

    pub fn verified_count(&self) -> usize {
        self.runs.iter().filter(|r| r.verified).count()
    }

    pub fn rejection_count(&self) -> usize {
        self.runs.iter().map(|r| r.rejections).sum()
    }
}

/// f(B) and the data needed to report on it.
struct Evaluation {
    value: f64,
    xi_norm: f64,
    coeffs: Vec<f64>,
}

struct Searcher<'a> {
    system: &'a ControlSystem,
    objective: &'a Objective,
    basis: BasisSet,
    frame: Vec<DVector<f64>>,
    total_time: f64,
    pieces: usize,
    kappa: f64,
    opts: SearchOptions,
    denom_tol: f64,
}

impl Searcher<'_> {
    fn normalize(&self, mut v: DVector<f64>) -> Option<DVector<f64>> {
        if self.opts.mode == SeedMode::Projected {
            project_out(&mut v, &self.frame);
        }
        let n = v.norm();
        (n > 1e-12).then(|| v / n)
    }

    /// `None` when the direction is rejected.
    fn evaluate(&self, coords: &DVector<f64>) -> Result<Option<Evaluation>> {
        let direction = self.basis.element(coords.as_slice())?;
        let steps = self.pieces * self.opts.steps_per_piece;
        let synth = match synthesize(
            self.system,
            &direction,
            self.total_time,
            steps,
            self.denom_tol,
            Some(self.kappa),
        ) {
            Ok(Synthesis::Done(c)) => c,
            Ok(Synthesis::OverBound) | Err(Error::DegenerateDenominator { .. }) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        };
        let coeffs = synth.resample(self.pieces)?;
        let prop =
            crate::dynamics::propagate_raw(self.system, &coeffs, self.pieces, self.total_time)?;
        let u_t = UnitaryMatrix::from_matrix_unchecked(prop.boundary[self.pieces].clone());
        let xi = self.objective.riemannian_gradient(&u_t)?;
        Ok(Some(Evaluation {
            value: re_inner(direction.matrix(), xi.matrix()),
            xi_norm: xi.norm(),
            coeffs,
        }))
    }

    fn random_direction(&self, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
        let v = DVector::from_fn(self.basis.len(), |_, _| rng.sample(rand_distr::StandardNormal));
        self.normalize(v)
    }

    fn run(&self, restart: usize, seed: u64, tol: &Tolerances) -> Result<RestartRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut record = RestartRecord {
            restart,
            seed,
            rejected: true,
            draws: 0,
            iterations: 0,
            history: Vec::new(),
            best_value: f64::NEG_INFINITY,
            xi_norm: 0.0,
            best_direction: Vec::new(),
            rejections: 0,
            converged: false,
            field: None,
            grad_norm: None,
            corank: None,
            state_rank: None,
            verified: false,
            false_positive: false,
        };

        let mut current = None;
        while record.draws < self.opts.max_draws {
            record.draws += 1;
            let Some(v) = self.random_direction(&mut rng) else {
                continue;
            };
            match self.evaluate(&v)? {
                Some(ev) => {
                    current = Some((v, ev));
                    break;
                }
                None => record.rejections += 1,
            }
        }
        let Some((mut b, mut ev)) = current else {
            return Ok(record);
        };
        record.rejected = false;
        record.history.push(ev.value);
        let mut best = (b.clone(), ev.value, ev.xi_norm, ev.coeffs.clone());
        let dim = self.basis.len();

        for k in 0..self.opts.iters {
            if self.is_converged(&ev, tol)? {
                record.converged = true;
                break;
            }
            record.iterations = k + 1;
            let delta = DVector::from_fn(dim, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            let delta = if self.opts.mode == SeedMode::Projected {
                let mut d = delta;
                project_out(&mut d, &self.frame);
                d
            } else {
                delta
            };
            let plus = self.normalize(&b + &delta * self.opts.sigma);
            let minus = self.normalize(&b - &delta * self.opts.sigma);
            let (Some(plus), Some(minus)) = (plus, minus) else {
                record.history.push(ev.value);
                continue;
            };
            let (fp, fm) = match (self.evaluate(&plus)?, self.evaluate(&minus)?) {
                (Some(p), Some(m)) => (p.value, m.value),
                _ => {
                    record.rejections += 1;
                    record.history.push(ev.value);
                    continue;
                }
            };
            let eta = self.opts.eta0 / (1.0 + k as f64 / self.opts.tau);
            let grad = &delta * ((fp - fm) / (2.0 * self.opts.sigma));
            if let Some(next) = self.normalize(&b + grad * eta) {
                match self.evaluate(&next)? {
                    Some(e) => {
                        b = next;
                        ev = e;
                    }
                    None => record.rejections += 1,
                }
            }
            record.history.push(ev.value);
            if ev.value > best.1 {
                best = (b.clone(), ev.value, ev.xi_norm, ev.coeffs.clone());
            }
        }
        if !record.converged && self.is_converged(&ev, tol)? {
            record.converged = true;
        }

        let (dir, value, xi_norm, coeffs) = best;
        record.best_value = value;
        record.xi_norm = xi_norm;
        record.best_direction = dir.as_slice().to_vec();

        let field = ControlField::new(self.total_time, self.pieces, self.kappa, 1, coeffs)?;
        let grad = objective_gradient(self.system, &field, self.objective)?;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let report = endpoint_jacobian_with(self.system, &field, tol)?;
        let psi0 = DVector::from_fn(self.system.dim(), |r, _| {
            Complex64::new(if r == 0 { 1.0 } else { 0.0 }, 0.0)
        });
        record.state_rank = Some(state_map_rank(self.system, &field, &psi0, tol)?);
        record.corank = Some(report.corank());
        record.grad_norm = Some(gnorm);
        record.verified = gnorm <= 1e-8 && report.corank() > 0;
        record.false_positive = record.converged && !record.verified;
        record.field = Some(field);
        Ok(record)
    }

    /// f within 1e-6 of its Cauchy–Schwarz bound and the control critical
    /// for the ascent's stopping rule.
    fn is_converged(&self, ev: &Evaluation, tol: &Tolerances) -> Result<bool> {
        if ev.value < (1.0 - 1e-6) * ev.xi_norm {
            return Ok(false);
        }
        let (_, g) = value_and_gradient(
            self.system,
            &ev.coeffs,
            self.pieces,
            self.total_time,
            self.objective,
        )?;
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(gnorm <= tol.grad_threshold(self.kappa, self.pieces))
    }
}

/// Searches unit directions B for a singular control that is also critical
/// for `objective`, by maximizing f(B) = ⟨B, ξ(U_T(B))⟩ where U_T(B) is the
/// end point of the piece-averaged synthesized control. Directions whose
/// control leaves |E| ≤ κ are rejected. Restarts run in parallel with seeds
/// split from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn singular_critical_search(
    system: &ControlSystem,
    objective: &Objective,
    total_time: f64,
    pieces: usize,
    kappa: f64,
    opts: &SearchOptions,
    seed: u64,
    tol: &Tolerances,
) -> Result<SearchRecord> {
    let (a, b) = single_generator(system)?;
    objective.check_dim(system.dim())?;
    if opts.restarts == 0 || opts.iters == 0 || opts.steps_per_piece == 0 || opts.max_draws == 0 {
        return Err(Error::InvalidInput("search counts must be at least 1".into()));
    }
    if !(opts.sigma > 0.0) || !(opts.eta0 > 0.0) || !(opts.tau > 0.0) {
        return Err(Error::InvalidInput("sigma, eta0 and tau must be positive".into()));
    }
    if pieces * opts.steps_per_piece < 100 {
        return Err(Error::InvalidInput(
            "pieces × steps_per_piece must be at least 100".into(),
        ));
    }
    // validates T, p and κ
    ControlField::zeros(total_time, pieces, kappa, 1)?;

    let ba = bracket(b.matrix(), a.matrix());
    let scale = (a.norm() * b.norm()).max(f64::MIN_POSITIVE);
    let degenerate = b.norm() == 0.0 || crate::algebra::frobenius(&ba) <= 1e-12 * scale;
    let mut record = SearchRecord {
        seed,
        options: *opts,
        degenerate,
        runs: Vec::new(),
    };
    if degenerate {
        return Ok(record);
    }

    let basis = standard_basis(system.dim())?;
    let frame = constraint_frame(&basis, a, b);
    let searcher = Searcher {
        system,
        objective,
        basis,
        frame,
        total_time,
        pieces,
        kappa,
        opts: *opts,
        denom_tol: tol.denom,
    };
    record.runs = (0..opts.restarts)
        .into_par_iter()
        .map(|r| searcher.run(r, split_seed(seed, &[r as u64]), tol))
        .collect::<Result<_>>()?;
    if record.runs.iter().all(|r| r.rejected) {
        return Err(Error::AllRejected);
    }
    Ok(record)
}

/// One point of a parameter-fixing scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub value: f64,
    pub corank: usize,
    /// Normalized projection of ξ onto the restricted image; `None` without
    /// an objective or at a kinematic critical point.
    pub residual: Option<f64>,
}

fn check_fully_actuated(system: &ControlSystem) -> Result<()> {
    let n = system.dim();
    if system.num_generators() != n * n - 1 {
        return Err(Error::InvalidInput(format!(
            "expected a fully actuated system with {} generators, got {}",
            n * n - 1,
            system.num_generators()
        )));
    }
    Ok(())
}

fn check_index(field: &ControlField, j: usize, k: usize) -> Result<usize> {
    if j >= field.generators() || k >= field.pieces() {
        return Err(Error::InvalidInput(format!("parameter ({j}, {k}) out of range")));
    }
    Ok(j * field.pieces() + k)
}

fn check_value(field: &ControlField, value: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > field.kappa() {
        return Err(Error::InvalidInput(format!(
            "fixed value {value} outside [-{0}, {0}]",
            field.kappa()
        )));
    }
    Ok(())
}

/// Restricted Jacobian (frozen columns removed) and, when an objective is
/// supplied, the transversality residual of ξ against it.
fn restricted(
    system: &ControlSystem,
    field: &ControlField,
    frozen: &[usize],
    objective: Option<&Objective>,
    tol: &Tolerances,
) -> Result<(JacobianReport, Option<f64>)> {
    let full = crate::dynamics::jacobian_matrix(system, field)?;
    let mut sorted = frozen.to_vec();
    sorted.sort_unstable();
    let m = full.remove_columns_at(&sorted);
    let report = JacobianReport::from_matrix(m, tol)?;
    let residual = match objective {
        None => None,
        Some(obj) => {
            let u_t = end_point(system, field)?;
            let xi = obj.riemannian_gradient(&u_t)?;
            let coords = standard_basis(system.dim())?.coords(&xi)?;
            match is_transverse_to_level_set(&report, &coords, tol.transverse) {
                Ok(t) => Some(t.residual),
                Err(Error::KinematicCritical) => None,
                Err(e) => return Err(e),
            }
        }
    };
    Ok((report, residual))
}

/// Freezes coefficient (j_fix, k_fix) at each value in turn and reports the
/// corank of the map on the remaining parameters.
pub fn fix_parameter_scan(
    system: &ControlSystem,
    field: &ControlField,
    j_fix: usize,
    k_fix: usize,
    values: &[f64],
    objective: Option<&Objective>,
    tol: &Tolerances,
) -> Result<Vec<ScanPoint>> {
    check_fully_actuated(system)?;
    if field.generators() != system.num_generators() {
        return Err(Error::InvalidInput("field and system disagree on generator count".into()));
    }
    if let Some(obj) = objective {
        obj.check_dim(system.dim())?;
    }
    let idx = check_index(field, j_fix, k_fix)?;
    for &v in values {
        check_value(field, v)?;
    }
    values
        .par_iter()
        .map(|&value| {
            let mut f = field.clone();
            f.set(j_fix, k_fix, value)?;
            let (report, residual) = restricted(system, &f, &[idx], objective, tol)?;
            Ok(ScanPoint {
                value,
                corank: report.corank(),
                residual,
            })
        })
        .collect()
}

/// A parameter frozen at a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub generator: usize,
    pub piece: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStep {
    pub step: usize,
    pub fix: Fix,
    pub free_parameters: usize,
    pub corank: usize,
    pub residual: Option<f64>,
    /// Lie closure of the drift with the generators that keep at least one
    /// free parameter.
    pub larc_dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub steps: Vec<CascadeStep>,
    /// Index of the step where transversality failed, if any; the cascade
    /// stops there.
    pub failed_at: Option<usize>,
}

/// Applies `fixes` one after another, recording the restricted corank,
/// transversality residual and effective Lie closure after each.
pub fn restriction_cascade(
    system: &ControlSystem,
    field: &ControlField,
    fixes: &[Fix],
    objective: &Objective,
    tol: &Tolerances,
) -> Result<CascadeReport> {
    if field.generators() != system.num_generators() {
        return Err(Error::InvalidInput("field and system disagree on generator count".into()));
    }
    objective.check_dim(system.dim())?;
    let mut seen = std::collections::HashSet::new();
    for f in fixes {
        let idx = check_index(field, f.generator, f.piece)?;
        check_value(field, f.value)?;
        if !seen.insert(idx) {
            return Err(Error::InvalidInput(format!(
                "parameter ({}, {}) fixed twice",
                f.generator, f.piece
            )));
        }
    }

    let mut current = field.clone();
    let mut frozen = Vec::new();
    let mut steps = Vec::new();
    let mut failed_at = None;
    for (s, fix) in fixes.iter().enumerate() {
        current.set(fix.generator, fix.piece, fix.value)?;
        frozen.push(fix.generator * field.pieces() + fix.piece);
        let (report, residual) = restricted(system, &current, &frozen, Some(objective), tol)?;
        let active: Vec<AlgebraElement> = (0..system.num_generators())
            .filter(|&j| (0..field.pieces()).any(|k| !frozen.contains(&(j * field.pieces() + k))))
            .map(|j| system.generators()[j].clone())
            .collect();
        let larc = if active.is_empty() {
            usize::from(system.drift().norm() > 0.0)
        } else {
            larc_dimension_with(&ControlSystem::new(system.drift().clone(), active)?, tol.larc)
        };
        steps.push(CascadeStep {
            step: s,
            fix: *fix,
            free_parameters: field.num_params() - frozen.len(),
            corank: report.corank(),
            residual,
            larc_dimension: larc,
        });
        if matches!(residual, Some(r) if r <= tol.transverse) {
            failed_at = Some(s);
            break;
        }
    }
    Ok(CascadeReport { steps, failed_at })
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Serialize)]
struct ScanRow {
    value: f64,
    corank: usize,
    residual: Option<f64>,
}

/// One CSV row per scanned value: value, corank, residual.
pub fn scan_csv(points: &[ScanPoint]) -> Result<String> {
    csv_string(points.iter().map(|p| ScanRow {
        value: p.value,
        corank: p.corank,
        residual: p.residual,
    }))
}

#[derive(Serialize)]
struct CascadeRow {
    step: usize,
    generator: usize,
    piece: usize,
    value: f64,
    free_parameters: usize,
    corank: usize,
    residual: Option<f64>,
    larc_dimension: usize,
}

impl CascadeReport {
    /// One CSV row per applied fix.
    pub fn to_csv(&self) -> Result<String> {
        csv_string(self.steps.iter().map(|s| CascadeRow {
            step: s.step,
            generator: s.fix.generator,
            piece: s.fix.piece,
            value: s.fix.value,
            free_parameters: s.free_parameters,
            corank: s.corank,
            residual: s.residual,
            larc_dimension: s.larc_dimension,
        }))
    }
}
