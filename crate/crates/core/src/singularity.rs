//! Rank and corank of the end-point derivative, transversality to level
//! sets, Lie-algebra rank condition, singularities of the exponential, and
//! the pure-state end-point map.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    bracket, re_inner, realify, standard_basis, AlgebraElement, CMatrix, Spectral, TWO_PI,
};
use crate::dynamics::{jacobian_columns, propagate_raw, ControlField, ControlSystem};
use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

/// Translated end-point Jacobian with its singular value decomposition.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    matrix: DMatrix<f64>,
    singular_values: Vec<f64>,
    /// Left singular vectors, columns ordered like `singular_values`.
    left: DMatrix<f64>,
    rank_tol: f64,
    numerical_rank: usize,
}

/// Serialized form of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSummary {
    pub sigma: Vec<f64>,
    pub rank: usize,
    pub corank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub tolerances: SummaryTolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryTolerances {
    pub rank: f64,
    pub transverse: f64,
}

/// Numerical rank: count of σ_i > rel_tol·σ_max (zero when σ_max = 0).
pub(crate) fn numerical_rank(sigma: &[f64], rel_tol: f64) -> usize {
    let max = sigma.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    sigma.iter().filter(|s| **s > rel_tol * max).count()
}

/// Descending singular values and matching left singular vectors.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let rows = m.nrows();
    if m.ncols() == 0 || rows == 0 {
        return (Vec::new(), DMatrix::zeros(rows, 0));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left = DMatrix::from_fn(rows, order.len(), |r, c| u[(r, order[c])]);
    (sigma, left)
}

impl JacobianReport {
    pub fn from_matrix(matrix: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("non-finite Jacobian entry".into()));
        }
        let rank_tol = tol.rank_tol(matrix.nrows(), matrix.ncols());
        let (singular_values, left) = sorted_svd(&matrix);
        let numerical_rank = numerical_rank(&singular_values, rank_tol);
        Ok(Self {
            matrix,
            singular_values,
            left,
            rank_tol,
            numerical_rank,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Rows: dim su(n) = n²−1.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn numerical_rank(&self) -> usize {
        self.numerical_rank
    }

    pub fn corank(&self) -> usize {
        self.rows() - self.numerical_rank
    }

    /// Drops one column, as when a control parameter is frozen.
    pub fn without_column(&self, col: usize, tol: &Tolerances) -> Result<Self> {
        if col >= self.matrix.ncols() {
            return Err(Error::InvalidInput(format!("column {col} out of range")));
        }
        Self::from_matrix(self.matrix.clone().remove_column(col), tol)
    }

    pub fn summary(&self, residual: Option<f64>, tol: &Tolerances) -> JacobianSummary {
        JacobianSummary {
            sigma: self.singular_values.clone(),
            rank: self.numerical_rank,
            corank: self.corank(),
            residual,
            tolerances: SummaryTolerances {
                rank: self.rank_tol,
                transverse: tol.transverse,
            },
        }
    }
}

/// Corank under a caller-chosen relative rank threshold.
pub fn corank(report: &JacobianReport, rank_tol: f64) -> usize {
    report.rows() - numerical_rank(&report.singular_values, rank_tol)
}

/// Outcome of a level-set transversality test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transversality {
    pub transverse: bool,
    /// ‖projection of ξ onto the column span‖ / ‖ξ‖.
    pub residual: f64,
}

/// Whether some admissible control variation moves U_T along ξ.
///
/// `xi` is given in `standard_basis` coordinates. A zero ξ (kinematic
/// critical point) is reported as [`Error::KinematicCritical`].
pub fn is_transverse_to_level_set(
    report: &JacobianReport,
    xi: &[f64],
    tol: f64,
) -> Result<Transversality> {
    if xi.len() != report.rows() {
        return Err(Error::mismatch(report.rows(), xi.len()));
    }
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= Tolerances::default().xi {
        return Err(Error::KinematicCritical);
    }
    let v = DVector::from_column_slice(xi);
    let r = report.numerical_rank;
    let proj = report.left.columns(0, r).transpose() * v;
    let residual = proj.norm() / norm;
    Ok(Transversality {
        transverse: residual > tol,
        residual,
    })
}

/// Dimension of the Lie algebra generated by the drift and the control
/// generators, with the default relative threshold of 1e-10.
pub fn larc_dimension(system: &ControlSystem) -> usize {
    larc_dimension_with(system, Tolerances::default().larc)
}

/// Breadth-first commutator closure. Every accepted direction is
/// orthonormalized against the current span (two Gram–Schmidt passes) and
/// bracketed with each unit-normalized generator; a candidate is new when
/// its residual exceeds `tol·max(‖candidate‖, 1)`.
pub fn larc_dimension_with(system: &ControlSystem, tol: f64) -> usize {
    let n = system.dim();
    let full = n * n - 1;
    let basis = standard_basis(n).expect("system dimension is at least 2");
    let gens: Vec<CMatrix> = std::iter::once(system.drift())
        .chain(system.generators())
        .filter(|g| g.norm() > 0.0)
        .map(|g| g.matrix() / Complex64::new(g.norm(), 0.0))
        .collect();

    let mut span: Vec<DVector<f64>> = Vec::new();
    let mut queue: std::collections::VecDeque<CMatrix> = Default::default();

    let try_add = |m: &CMatrix, span: &mut Vec<DVector<f64>>| -> Option<CMatrix> {
        let c = DVector::from_vec(basis.coords_of_matrix(m));
        let cn = c.norm();
        let mut r = c;
        for _ in 0..2 {
            for q in span.iter() {
                let d = q.dot(&r);
                r -= q * d;
            }
        }
        let rn = r.norm();
        if rn > tol * cn.max(1.0) {
            let q = r / rn;
            let elem = basis.element(q.as_slice()).ok()?.into_matrix();
            span.push(q);
            Some(elem)
        } else {
            None
        }
    };

    for g in &gens {
        if let Some(e) = try_add(g, &mut span) {
            queue.push_back(e);
        }
    }
    while let Some(e) = queue.pop_front() {
        if span.len() >= full {
            break;
        }
        for g in &gens {
            if let Some(new) = try_add(&bracket(g, &e), &mut span) {
                queue.push_back(new);
            }
        }
    }
    span.len()
}

/// Distance of a piece from the first singularity of the exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMargin {
    pub safe: bool,
    /// 2π − dt·(λ_max − λ_min).
    pub margin: f64,
}

/// Sufficient condition for d exp to be invertible at dt·H: the spectral
/// width of iH times dt stays below 2π.
pub fn exp_singularity_margin(h: &AlgebraElement, dt: f64) -> Result<ExpMargin> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let gap = Spectral::of(h)?.gap();
    let spread = dt * gap;
    Ok(ExpMargin {
        safe: spread < TWO_PI,
        margin: TWO_PI - spread,
    })
}

/// Real (n²−1)×(n²−1) matrix of δ ↦ U⁻¹·d/dε exp(dt(H + εδ)), U = exp(dt·H),
/// in `standard_basis` coordinates.
pub fn exp_derivative_matrix(h: &AlgebraElement, dt: f64) -> Result<DMatrix<f64>> {
    let n = h.dim();
    let basis = standard_basis(n)?;
    let sp = Spectral::of(h)?;
    let u_inv = sp.exp(dt).adjoint();
    let cols: Vec<CMatrix> = basis
        .elements()
        .iter()
        .map(|b| &u_inv * crate::algebra::frechet_with(&sp, b.matrix(), dt))
        .collect();
    Ok(crate::dynamics::coordinate_matrix(&basis, &cols))
}

/// Per-piece check of the exponential bound over a whole field.
pub fn field_exp_margins(system: &ControlSystem, field: &ControlField) -> Result<Vec<ExpMargin>> {
    (0..field.pieces())
        .map(|k| {
            let h = system.generator_at((0..field.generators()).map(|j| field.amplitude(j, k)));
            exp_singularity_margin(&h, field.dt())
        })
        .collect()
}

/// Singular values of the pure-state end-point derivative, restricted to
/// the tangent space of CP^{n−1} at ψ_T = U_T·ψ₀.
///
/// Column (j,k) is δψ_T = U_T·X_{j,k}·ψ₀ with X_{j,k} the translated
/// Jacobian column, written as a real 2n-vector and projected orthogonally
/// to ψ_T and iψ_T.
pub fn state_map_singular_values(
    system: &ControlSystem,
    field: &ControlField,
    psi0: &DVector<Complex64>,
) -> Result<(Vec<f64>, usize)> {
    let n = system.dim();
    if psi0.len() != n {
        return Err(Error::mismatch(n, psi0.len()));
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "initial state has norm {}, expected 1",
            psi0.norm()
        )));
    }
    if field.generators() != system.num_generators() {
        return Err(Error::InvalidInput("field and system disagree on generator count".into()));
    }
    let prop = propagate_raw(system, field.coeffs(), field.pieces(), field.total_time())?;
    let cols = jacobian_columns(system, &prop);
    let u_t = &prop.boundary[field.pieces()];
    let psi_t = u_t * psi0;
    let e1 = DVector::from_vec(realify(&psi_t));
    let e2 = DVector::from_vec(realify(&(&psi_t * Complex64::new(0.0, 1.0))));
    let mut m = DMatrix::zeros(2 * n, cols.len());
    for (c, x) in cols.iter().enumerate() {
        let v = DVector::from_vec(realify(&(u_t * (x * psi0))));
        let v = &v - &e1 * e1.dot(&v) - &e2 * e2.dot(&v);
        m.set_column(c, &v);
    }
    let (sigma, _) = sorted_svd(&m);
    Ok((sigma, m.ncols()))
}

/// Rank of the pure-state end-point derivative (at most 2n−2).
pub fn state_map_rank(
    system: &ControlSystem,
    field: &ControlField,
    psi0: &DVector<Complex64>,
    tol: &Tolerances,
) -> Result<usize> {
    let n = system.dim();
    let (sigma, cols) = state_map_singular_values(system, field, psi0)?;
    Ok(numerical_rank(&sigma, tol.rank_tol(2 * n, cols)))
}

/// `inner` on raw matrices, re-exported for coordinate checks in tests.
#[doc(hidden)]
pub fn raw_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    re_inner(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{random_element, random_special_unitary, UnitaryMatrix};
    use crate::dynamics::{end_point, endpoint_jacobian, jacobian_matrix};
    use crate::landscape::Objective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Rank by Gaussian elimination with full pivoting; pivots below
    /// `rel·max|entry|` are treated as zero.
    fn elimination_rank(m: &DMatrix<f64>, rel: f64) -> usize {
        let mut a = m.clone();
        let scale = a.iter().fold(0f64, |x, y| x.max(y.abs()));
        if scale == 0.0 {
            return 0;
        }
        let (rows, cols) = a.shape();
        let mut rank = 0;
        for step in 0..rows.min(cols) {
            let (mut pr, mut pc, mut best) = (step, step, 0.0);
            for r in step..rows {
                for c in step..cols {
                    if a[(r, c)].abs() > best {
                        best = a[(r, c)].abs();
                        pr = r;
                        pc = c;
                    }
                }
            }
            if best <= rel * scale {
                break;
            }
            a.swap_rows(step, pr);
            a.swap_columns(step, pc);
            for r in step + 1..rows {
                let f = a[(r, step)] / a[(step, step)];
                for c in step..cols {
                    a[(r, c)] -= f * a[(step, c)];
                }
            }
            rank += 1;
        }
        rank
    }

    fn random_field(gens: usize, p: usize, t: f64, kappa: f64, seed: u64) -> ControlField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (0..gens * p).map(|_| rng.random_range(-kappa..kappa)).collect();
        ControlField::new(t, p, kappa, gens, c).unwrap()
    }

    fn dipole(n: usize, seed: u64) -> ControlSystem {
        ControlSystem::dipole(
            random_element(n, seed, 1.0).unwrap(),
            random_element(n, seed + 1, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn corank_basics() {
        let n = 3;
        let basis = standard_basis(n).unwrap();
        let fa = ControlSystem::fully_actuated(AlgebraElement::zero(n), &basis).unwrap();
        let f = ControlField::zeros(1.0, 1, 1.0, 8).unwrap();
        let rep = endpoint_jacobian(&fa, &f).unwrap();
        assert_eq!(rep.corank(), 0);
        assert_eq!(corank(&rep, 1e-8), 0);

        let single = dipole(n, 3);
        let f1 = ControlField::new(1.0, 1, 1.0, 1, vec![0.4]).unwrap();
        let rep = endpoint_jacobian(&single, &f1).unwrap();
        assert_eq!(rep.corank(), n * n - 2);
        assert!(rep.singular_values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn corank_agrees_with_elimination() {
        for seed in 0..20 {
            let sys = dipole(2, 10 * seed);
            let p = 1 + (seed as usize % 10);
            let f = random_field(1, p, 4.0, 1.0, seed);
            let rep = endpoint_jacobian(&sys, &f).unwrap();
            let oracle = 3 - elimination_rank(rep.matrix(), 1e-8);
            assert_eq!(corank(&rep, 1e-8), oracle, "seed {seed}");
        }
    }

    #[test]
    fn corank_never_grows_with_more_pieces() {
        let sys = dipole(3, 5);
        let base = random_field(1, 12, 3.0, 1.0, 5);
        let mut last = usize::MAX;
        for cols in 1..=12 {
            let m = jacobian_matrix(&sys, &base).unwrap().columns(0, cols).into_owned();
            let rep = JacobianReport::from_matrix(m, &Tolerances::default()).unwrap();
            assert!(rep.corank() <= last);
            last = rep.corank();
        }
    }

    #[test]
    fn transversality_cases() {
        let tol = Tolerances::default();
        let basis = standard_basis(2).unwrap();
        let fa = ControlSystem::fully_actuated(AlgebraElement::zero(2), &basis).unwrap();
        let rep = endpoint_jacobian(&fa, &ControlField::zeros(1.0, 1, 1.0, 3).unwrap()).unwrap();
        let t = is_transverse_to_level_set(&rep, &[0.3, -1.0, 0.2], tol.transverse).unwrap();
        assert!(t.transverse && (t.residual - 1.0).abs() <= 1e-12);

        let zero = JacobianReport::from_matrix(DMatrix::zeros(3, 4), &tol).unwrap();
        let t = is_transverse_to_level_set(&zero, &[0.3, -1.0, 0.2], tol.transverse).unwrap();
        assert!(!t.transverse && t.residual == 0.0);

        assert!(matches!(
            is_transverse_to_level_set(&rep, &[0.0; 3], tol.transverse),
            Err(Error::KinematicCritical)
        ));
    }

    #[test]
    fn transversality_matches_least_squares() {
        let tol = Tolerances::default();
        let sys = dipole(2, 8);
        let f = random_field(1, 2, 2.0, 1.0, 8);
        let m = jacobian_matrix(&sys, &f).unwrap();
        // duplicate the columns: rank 2 of 3 with four columns
        let dup = DMatrix::from_fn(3, 4, |r, c| m[(r, c % 2)]);
        let rep = JacobianReport::from_matrix(dup.clone(), &tol).unwrap();
        assert_eq!(rep.numerical_rank(), 2);
        let xi = [0.4, -0.7, 1.1];
        let t = is_transverse_to_level_set(&rep, &xi, tol.transverse).unwrap();
        // least squares on the independent columns through normal equations
        let a = dup.columns(0, 2).into_owned();
        let x = DVector::from_column_slice(&xi);
        let w = (a.transpose() * &a).lu().solve(&(a.transpose() * &x)).unwrap();
        let fit = (&a * w).norm() / x.norm();
        assert!((fit - t.residual).abs() <= 1e-8);
    }

    #[test]
    fn larc_cases() {
        let basis = standard_basis(2).unwrap();
        let pauli = ControlSystem::dipole(
            basis.get(2).scale(2f64.sqrt()),
            basis.get(0).scale(2f64.sqrt()),
        )
        .unwrap();
        assert_eq!(larc_dimension(&pauli), 3);

        let b3 = standard_basis(3).unwrap();
        let diag = ControlSystem::dipole(b3.get(6).clone(), b3.get(7).scale(0.3)).unwrap();
        assert!(larc_dimension(&diag) <= 2);

        let decoupled =
            ControlSystem::dipole(AlgebraElement::zero(3), AlgebraElement::zero(3)).unwrap();
        assert_eq!(larc_dimension(&decoupled), 0);
    }

    /// Closure by repeated bracketing of every pair in the current span,
    /// rank measured by SVD.
    fn brute_force_larc(system: &ControlSystem) -> usize {
        let n = system.dim();
        let basis = standard_basis(n).unwrap();
        let mut elems: Vec<CMatrix> = std::iter::once(system.drift())
            .chain(system.generators())
            .map(|g| g.matrix().clone())
            .collect();
        let rank_of = |es: &[CMatrix]| {
            let m = DMatrix::from_fn(n * n - 1, es.len(), |r, c| {
                re_inner(basis.get(r).matrix(), &es[c])
            });
            let (s, _) = sorted_svd(&m);
            numerical_rank(&s, 1e-9)
        };
        let mut rank = rank_of(&elems);
        loop {
            let mut next = elems.clone();
            for i in 0..elems.len() {
                for j in (i + 1)..elems.len() {
                    next.push(bracket(&elems[i], &elems[j]));
                }
            }
            // keep a spanning subset to bound growth
            let m = DMatrix::from_fn(n * n - 1, next.len(), |r, c| {
                re_inner(basis.get(r).matrix(), &next[c])
            });
            let svd = m.svd(true, false);
            let u = svd.u.unwrap();
            let keep: Vec<CMatrix> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > 1e-9 * svd.singular_values.max())
                .map(|i| basis.element(u.column(i).as_slice()).unwrap().into_matrix())
                .collect();
            let r = rank_of(&keep);
            if r == rank {
                return r;
            }
            rank = r;
            elems = keep;
        }
    }

    #[test]
    fn larc_matches_brute_force() {
        for seed in 0..5 {
            let sys = dipole(4, 100 + seed);
            assert_eq!(larc_dimension(&sys), brute_force_larc(&sys));
        }
        let b3 = standard_basis(3).unwrap();
        // su(2) embedded in the upper-left block: dimension 3
        let block = ControlSystem::dipole(b3.get(4).clone(), b3.get(0).clone()).unwrap();
        assert_eq!(larc_dimension(&block), brute_force_larc(&block));
    }

    fn pi_gap_piece(dt: f64, seed: u64) -> AlgebraElement {
        // iH has spectrum {π/dt, −π/dt} in a random eigenbasis
        let v = random_special_unitary(2, seed).unwrap();
        let d = CMatrix::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(PI / dt, 0.0),
            Complex64::new(-PI / dt, 0.0),
        ]));
        let herm = v.matrix() * d * v.matrix().adjoint();
        AlgebraElement::from_hamiltonian(&herm).unwrap()
    }

    #[test]
    fn exp_margin_cases() {
        let m = exp_singularity_margin(&AlgebraElement::zero(3), 1.0).unwrap();
        assert!(m.safe && (m.margin - TWO_PI).abs() <= 1e-15);

        let dt = 0.5;
        let h = pi_gap_piece(dt, 3);
        let m = exp_singularity_margin(&h, dt).unwrap();
        assert!(!m.safe || m.margin.abs() <= 1e-12);
        assert!(m.margin.abs() <= 1e-12);
        let d = exp_derivative_matrix(&h, dt).unwrap();
        let (s, _) = sorted_svd(&d);
        assert!(*s.last().unwrap() <= 1e-8);

        let half = exp_singularity_margin(&h, dt / 2.0).unwrap();
        assert!(half.safe);
        assert!(exp_singularity_margin(&h, 0.0).is_err());
    }

    #[test]
    fn safe_pieces_give_full_rank_single_piece_map() {
        for n in 2..=3 {
            let basis = standard_basis(n).unwrap();
            for seed in 0..10 {
                let drift = random_element(n, seed, 2.0).unwrap();
                let sys = ControlSystem::fully_actuated(drift, &basis).unwrap();
                let f = random_field(n * n - 1, 1, 1.0, 1.0, seed);
                let margins = field_exp_margins(&sys, &f).unwrap();
                if margins.iter().all(|m| m.safe) {
                    assert_eq!(endpoint_jacobian(&sys, &f).unwrap().corank(), 0);
                }
            }
        }
    }

    fn unit(n: usize, i: usize) -> DVector<Complex64> {
        DVector::from_fn(n, |r, _| Complex64::new(if r == i { 1.0 } else { 0.0 }, 0.0))
    }

    #[test]
    fn state_rank_cases() {
        let tol = Tolerances::default();
        let n = 3;
        let basis = standard_basis(n).unwrap();
        let fa = ControlSystem::fully_actuated(random_element(n, 1, 1.0).unwrap(), &basis).unwrap();
        let f = random_field(8, 2, 1.0, 1.0, 2);
        assert_eq!(endpoint_jacobian(&fa, &f).unwrap().corank(), 0);
        assert_eq!(state_map_rank(&fa, &f, &unit(n, 0), &tol).unwrap(), 2 * n - 2);

        let decoupled =
            ControlSystem::dipole(random_element(n, 1, 1.0).unwrap(), AlgebraElement::zero(n)).unwrap();
        let f1 = random_field(1, 4, 1.0, 1.0, 2);
        assert_eq!(state_map_rank(&decoupled, &f1, &unit(n, 0), &tol).unwrap(), 0);

        let bad = DVector::from_element(n, Complex64::new(1.0, 0.0));
        assert!(matches!(state_map_rank(&fa, &f, &bad, &tol), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn propagator_singular_but_state_regular() {
        // four pieces of one generator at n = 3: rank ≤ 4 < 8 for the
        // propagator, but CP² has real dimension 4
        let tol = Tolerances::default();
        let sys = dipole(3, 21);
        let f = random_field(1, 4, 3.0, 1.0, 21);
        let rep = endpoint_jacobian(&sys, &f).unwrap();
        assert!(rep.corank() > 0);
        assert_eq!(state_map_rank(&sys, &f, &unit(3, 0), &tol).unwrap(), 4);
        assert!(4 <= 2 * rep.numerical_rank());
    }

    #[test]
    fn state_rank_matches_finite_differences() {
        let h = 1e-6;
        let sys = dipole(3, 33);
        let f = random_field(1, 3, 2.0, 1.0, 33);
        let psi0 = unit(3, 1);
        let tol = Tolerances::default();
        let rank = state_map_rank(&sys, &f, &psi0, &tol).unwrap();
        let u_t = end_point(&sys, &f).unwrap();
        let psi_t = u_t.matrix() * &psi0;
        let e1 = DVector::from_vec(realify(&psi_t));
        let e2 = DVector::from_vec(realify(&(&psi_t * Complex64::new(0.0, 1.0))));
        let mut m = DMatrix::zeros(6, 3);
        for c in 0..3 {
            let mut plus = f.coeffs().to_vec();
            let mut minus = f.coeffs().to_vec();
            plus[c] += h;
            minus[c] -= h;
            let up = end_point(&sys, &f.with_coeffs(plus).unwrap()).unwrap();
            let um = end_point(&sys, &f.with_coeffs(minus).unwrap()).unwrap();
            let d = (up.matrix() - um.matrix()) * &psi0 / Complex64::new(2.0 * h, 0.0);
            let v = DVector::from_vec(realify(&d));
            let v = &v - &e1 * e1.dot(&v) - &e2 * e2.dot(&v);
            m.set_column(c, &v);
        }
        let (s, _) = sorted_svd(&m);
        assert_eq!(numerical_rank(&s, 1e-6), rank);
        let _ = UnitaryMatrix::identity(2);
        let _ = Objective::gate_real(UnitaryMatrix::identity(2)).unwrap();
    }
}
