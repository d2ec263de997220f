//! Piecewise-constant control fields, propagation of dU/dt = H(t)·U, the
//! end-point map and its exact derivative.
//!
//! Piece k covers the left-closed interval [kT/p, (k+1)T/p); on it the
//! generator is H_k = a + Σ_j c_{j,k}·b_j, and the end-point variation is
//!
//!   U_T†·δU_T = Σ_{j,k} δc_{j,k} ∫_{I_k} Ad_{U_t}(b_j) dt,
//!
//! where the integral is evaluated in closed form in the eigenbasis of H_k.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    project_su, re_inner, AlgebraElement, BasisSet, CMatrix, Spectral, UnitaryMatrix,
};
use crate::error::{Error, Result};
use crate::landscape::Objective;
use crate::singularity::JacobianReport;
use crate::tolerance::Tolerances;

/// Piecewise-constant control amplitudes, stored generator-major:
/// `coeffs[j * p + k]` is the amplitude of generator j on piece k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldDoc", into = "FieldDoc")]
pub struct ControlField {
    total_time: f64,
    pieces: usize,
    kappa: f64,
    generators: usize,
    coeffs: Vec<f64>,
}

/// On-disk layout of a control field.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FieldDoc {
    #[serde(rename = "T")]
    total_time: f64,
    p: usize,
    kappa: f64,
    generators: usize,
    coeffs: Vec<f64>,
}

impl TryFrom<FieldDoc> for ControlField {
    type Error = Error;
    fn try_from(d: FieldDoc) -> Result<Self> {
        ControlField::new(d.total_time, d.p, d.kappa, d.generators, d.coeffs)
    }
}

impl From<ControlField> for FieldDoc {
    fn from(f: ControlField) -> Self {
        FieldDoc {
            total_time: f.total_time,
            p: f.pieces,
            kappa: f.kappa,
            generators: f.generators,
            coeffs: f.coeffs,
        }
    }
}

impl ControlField {
    pub fn new(
        total_time: f64,
        pieces: usize,
        kappa: f64,
        generators: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        if !(total_time > 0.0) || !total_time.is_finite() {
            return Err(Error::InvalidInput(format!("T must be positive, got {total_time}")));
        }
        if pieces == 0 {
            return Err(Error::InvalidInput("piece count must be at least 1".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::InvalidInput(format!("kappa must be positive, got {kappa}")));
        }
        if generators == 0 {
            return Err(Error::InvalidInput("at least one generator is required".into()));
        }
        if coeffs.len() != generators * pieces {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients ({generators} x {pieces}), got {}",
                generators * pieces,
                coeffs.len()
            )));
        }
        if let Some((i, c)) = coeffs
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_finite() || c.abs() > kappa)
        {
            return Err(Error::InvalidInput(format!(
                "coefficient {i} = {c} violates the bound kappa = {kappa}"
            )));
        }
        Ok(Self {
            total_time,
            pieces,
            kappa,
            generators,
            coeffs,
        })
    }

    pub fn zeros(total_time: f64, pieces: usize, kappa: f64, generators: usize) -> Result<Self> {
        Self::new(total_time, pieces, kappa, generators, vec![0.0; generators * pieces])
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn generators(&self) -> usize {
        self.generators
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len()
    }

    /// Piece duration T/p.
    pub fn dt(&self) -> f64 {
        self.total_time / self.pieces as f64
    }

    pub fn amplitude(&self, generator: usize, piece: usize) -> f64 {
        self.coeffs[generator * self.pieces + piece]
    }

    /// Index of the piece containing `t`; t = T belongs to the last piece.
    pub fn piece_at(&self, t: f64) -> usize {
        let k = (t / self.dt()).floor();
        (k.max(0.0) as usize).min(self.pieces - 1)
    }

    pub fn value_at(&self, generator: usize, t: f64) -> f64 {
        self.amplitude(generator, self.piece_at(t))
    }

    /// Same timing and bound, new coefficients (validated).
    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(self.total_time, self.pieces, self.kappa, self.generators, coeffs)
    }

    pub fn set(&mut self, generator: usize, piece: usize, value: f64) -> Result<()> {
        if generator >= self.generators || piece >= self.pieces {
            return Err(Error::InvalidInput(format!(
                "parameter ({generator}, {piece}) out of range"
            )));
        }
        if !value.is_finite() || value.abs() > self.kappa {
            return Err(Error::InvalidInput(format!(
                "value {value} violates the bound kappa = {}",
                self.kappa
            )));
        }
        self.coeffs[generator * self.pieces + piece] = value;
        Ok(())
    }

    /// Repeats every piece `factor` times. The end point is unchanged.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        let p = self.pieces * factor;
        let coeffs = (0..self.generators)
            .flat_map(|j| (0..p).map(move |k| (j, k / factor)))
            .map(|(j, k)| self.amplitude(j, k))
            .collect();
        Self::new(self.total_time, p, self.kappa, self.generators, coeffs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Drift a = −iH₀ plus control generators b_j = −iH_{c,j}.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    drift: AlgebraElement,
    generators: Vec<AlgebraElement>,
}

impl ControlSystem {
    pub fn new(drift: AlgebraElement, generators: Vec<AlgebraElement>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidInput("generator list is empty".into()));
        }
        let n = drift.dim();
        for g in &generators {
            g.check_dim(n)?;
        }
        Ok(Self { drift, generators })
    }

    /// Single control field: dU/dt = (a + E(t)·b)U.
    pub fn dipole(drift: AlgebraElement, control: AlgebraElement) -> Result<Self> {
        Self::new(drift, vec![control])
    }

    /// Every basis direction of su(n) under independent control.
    pub fn fully_actuated(drift: AlgebraElement, basis: &BasisSet) -> Result<Self> {
        drift.check_dim(basis.dim())?;
        Self::new(drift, basis.elements().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn drift(&self) -> &AlgebraElement {
        &self.drift
    }

    pub fn generators(&self) -> &[AlgebraElement] {
        &self.generators
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// H_k = a + Σ_j c_j·b_j.
    pub fn generator_at(&self, amplitudes: impl IntoIterator<Item = f64>) -> AlgebraElement {
        let mut m = self.drift.matrix().clone();
        for (c, b) in amplitudes.into_iter().zip(&self.generators) {
            if c != 0.0 {
                m += b.matrix() * Complex64::new(c, 0.0);
            }
        }
        AlgebraElement::from_matrix_unchecked(m)
    }

    fn check_field(&self, field: &ControlField) -> Result<()> {
        if field.generators() != self.num_generators() {
            return Err(Error::InvalidInput(format!(
                "field drives {} generators but the system has {}",
                field.generators(),
                self.num_generators()
            )));
        }
        Ok(())
    }
}

/// Propagators at the piece boundaries. Interior values are recomputed from
/// the stored piece generators on demand.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    pieces: Vec<AlgebraElement>,
    boundary: Vec<UnitaryMatrix>,
}

impl Trajectory {
    pub(crate) fn from_parts(
        dt: f64,
        pieces: Vec<AlgebraElement>,
        boundary: Vec<UnitaryMatrix>,
    ) -> Self {
        debug_assert_eq!(pieces.len() + 1, boundary.len());
        Self {
            dt,
            pieces,
            boundary,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.pieces.len() as f64
    }

    pub fn dim(&self) -> usize {
        self.boundary[0].dim()
    }

    /// Piece generators H_k.
    pub fn piece_generators(&self) -> &[AlgebraElement] {
        &self.pieces
    }

    /// U(t_0) = I, …, U(t_p) = U_T.
    pub fn boundary_ops(&self) -> &[UnitaryMatrix] {
        &self.boundary
    }

    pub fn final_op(&self) -> &UnitaryMatrix {
        self.boundary.last().expect("trajectory has at least one boundary")
    }

    /// Largest residual of U(t_{k+1}) = exp(dt·H_k)·U(t_k).
    pub fn semigroup_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (k, h) in self.pieces.iter().enumerate() {
            let step = Spectral::of(h)?.exp(self.dt);
            let r = crate::algebra::frobenius(
                &(step * self.boundary[k].matrix() - self.boundary[k + 1].matrix()),
            );
            worst = worst.max(r);
        }
        Ok(worst)
    }
}

/// Per-piece spectra and boundary propagators for raw coefficients.
pub(crate) struct Propagation {
    pub dt: f64,
    pub spectra: Vec<Spectral>,
    pub boundary: Vec<CMatrix>,
}

pub(crate) fn propagate_raw(
    system: &ControlSystem,
    coeffs: &[f64],
    pieces: usize,
    total_time: f64,
) -> Result<Propagation> {
    let n = system.dim();
    let g = system.num_generators();
    let dt = total_time / pieces as f64;
    let mut spectra = Vec::with_capacity(pieces);
    let mut boundary = Vec::with_capacity(pieces + 1);
    boundary.push(CMatrix::identity(n, n));
    for k in 0..pieces {
        let h = system.generator_at((0..g).map(|j| coeffs[j * pieces + k]));
        let sp = Spectral::of(&h)?;
        let next = sp.exp(dt) * &boundary[k];
        spectra.push(sp);
        boundary.push(next);
    }
    Ok(Propagation {
        dt,
        spectra,
        boundary,
    })
}

/// Integrates the Schrödinger equation piece by piece.
pub fn propagate(system: &ControlSystem, field: &ControlField) -> Result<Trajectory> {
    system.check_field(field)?;
    let p = field.pieces();
    let prop = propagate_raw(system, field.coeffs(), p, field.total_time())?;
    let pieces = (0..p)
        .map(|k| system.generator_at((0..field.generators()).map(|j| field.amplitude(j, k))))
        .collect();
    Ok(Trajectory {
        dt: prop.dt,
        pieces,
        boundary: prop
            .boundary
            .into_iter()
            .map(UnitaryMatrix::from_matrix_unchecked)
            .collect(),
    })
}

/// U_T only.
pub fn end_point(system: &ControlSystem, field: &ControlField) -> Result<UnitaryMatrix> {
    system.check_field(field)?;
    let prop = propagate_raw(system, field.coeffs(), field.pieces(), field.total_time())?;
    Ok(UnitaryMatrix::from_matrix_unchecked(
        prop.boundary.into_iter().last().expect("non-empty"),
    ))
}

/// Translated Jacobian columns ∫_{I_k} Ad_{U_t}(b_j) dt as su(n) matrices,
/// ordered like the coefficients (generator-major).
pub(crate) fn jacobian_columns(system: &ControlSystem, prop: &Propagation) -> Vec<CMatrix> {
    let p = prop.spectra.len();
    let g = system.num_generators();
    let mut cols = vec![CMatrix::zeros(0, 0); g * p];
    for (k, sp) in prop.spectra.iter().enumerate() {
        let kernel = sp.orbit_integral_kernel(prop.dt);
        // Ad_{U_k} pulled into the eigenbasis: W = U_k†·V
        let w = prop.boundary[k].adjoint() * &sp.vectors;
        for (j, b) in system.generators().iter().enumerate() {
            let local = sp.to_eigenbasis(b.matrix()).component_mul(&kernel);
            cols[j * p + k] = project_su(&(&w * local * w.adjoint()));
        }
    }
    cols
}

/// Columns of the end-point derivative in `standard_basis` coordinates,
/// wrapped with their singular values and rank.
pub fn endpoint_jacobian(system: &ControlSystem, field: &ControlField) -> Result<JacobianReport> {
    endpoint_jacobian_with(system, field, &Tolerances::default())
}

pub fn endpoint_jacobian_with(
    system: &ControlSystem,
    field: &ControlField,
    tol: &Tolerances,
) -> Result<JacobianReport> {
    let m = jacobian_matrix(system, field)?;
    JacobianReport::from_matrix(m, tol)
}

/// Raw (n²−1) × (generators·p) real Jacobian.
pub fn jacobian_matrix(system: &ControlSystem, field: &ControlField) -> Result<DMatrix<f64>> {
    system.check_field(field)?;
    let basis = crate::algebra::standard_basis(system.dim())?;
    let prop = propagate_raw(system, field.coeffs(), field.pieces(), field.total_time())?;
    let cols = jacobian_columns(system, &prop);
    Ok(coordinate_matrix(&basis, &cols))
}

pub(crate) fn coordinate_matrix(basis: &BasisSet, cols: &[CMatrix]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(basis.len(), cols.len());
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in basis.coords_of_matrix(col).into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    m
}

/// Objective value at the end point together with the exact gradient with
/// respect to every coefficient (generator-major).
pub(crate) fn value_and_gradient(
    system: &ControlSystem,
    coeffs: &[f64],
    pieces: usize,
    total_time: f64,
    objective: &Objective,
) -> Result<(f64, Vec<f64>)> {
    let prop = propagate_raw(system, coeffs, pieces, total_time)?;
    let u_t = UnitaryMatrix::from_matrix_unchecked(prop.boundary[pieces].clone());
    let value = objective.evaluate(&u_t)?;
    let xi = objective.riemannian_gradient(&u_t)?;
    let g = system.num_generators();
    let mut grad = vec![0.0; g * pieces];
    for (k, sp) in prop.spectra.iter().enumerate() {
        let kernel = sp.orbit_integral_kernel(prop.dt);
        let w = prop.boundary[k].adjoint() * &sp.vectors;
        // inner(ξ, W·L·W†) = Re Tr((W†ξW)†·L)
        let xi_local = w.adjoint() * xi.matrix() * &w;
        for (j, b) in system.generators().iter().enumerate() {
            let local = sp.to_eigenbasis(b.matrix()).component_mul(&kernel);
            grad[j * pieces + k] = re_inner(&xi_local, &local);
        }
    }
    Ok((value, grad))
}

pub(crate) fn value_raw(
    system: &ControlSystem,
    coeffs: &[f64],
    pieces: usize,
    total_time: f64,
    objective: &Objective,
) -> Result<f64> {
    let prop = propagate_raw(system, coeffs, pieces, total_time)?;
    objective.evaluate(&UnitaryMatrix::from_matrix_unchecked(
        prop.boundary.into_iter().last().expect("non-empty"),
    ))
}

/// Exact gradient of F = J∘V_T with respect to the piecewise-constant
/// coefficients, laid out generator-major like `ControlField::coeffs`.
pub fn objective_gradient(
    system: &ControlSystem,
    field: &ControlField,
    objective: &Objective,
) -> Result<Vec<f64>> {
    system.check_field(field)?;
    objective.check_dim(system.dim())?;
    let (_, g) = value_and_gradient(
        system,
        field.coeffs(),
        field.pieces(),
        field.total_time(),
        objective,
    )?;
    Ok(g)
}

/// F = J(V_T[field]).
pub fn objective_value(
    system: &ControlSystem,
    field: &ControlField,
    objective: &Objective,
) -> Result<f64> {
    system.check_field(field)?;
    objective.check_dim(system.dim())?;
    value_raw(system, field.coeffs(), field.pieces(), field.total_time(), objective)
}

/// Ad_{U(t)}(X) on the grid t = i·dt/s, i = 0..=p·s, evaluated exactly
/// inside each piece.
pub fn adjoint_orbit_samples(
    traj: &Trajectory,
    x: &AlgebraElement,
    samples_per_piece: usize,
) -> Result<Vec<AlgebraElement>> {
    if samples_per_piece == 0 {
        return Err(Error::InvalidInput("samples_per_piece must be at least 1".into()));
    }
    x.check_dim(traj.dim())?;
    let mut out = Vec::with_capacity(traj.pieces.len() * samples_per_piece + 1);
    let ds = traj.dt / samples_per_piece as f64;
    for (k, h) in traj.pieces.iter().enumerate() {
        let sp = Spectral::of(h)?;
        let base = traj.boundary[k].matrix();
        for i in 0..samples_per_piece {
            let u = if i == 0 {
                base.clone()
            } else {
                sp.exp(i as f64 * ds) * base
            };
            out.push(AlgebraElement::from_matrix_unchecked(
                u.adjoint() * x.matrix() * &u,
            ));
        }
    }
    let u = traj.final_op().matrix();
    out.push(AlgebraElement::from_matrix_unchecked(
        u.adjoint() * x.matrix() * u,
    ));
    Ok(out)
}
