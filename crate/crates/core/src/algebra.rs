//! The su(n) layer: algebra elements, special unitaries, the orthonormal
//! generalized Gell-Mann basis, and exact exponentials.
//!
//! Conventions:
//! * `inner(X, Y) = Re Tr(X†Y)`.
//! * Ad_U(X) = U†XU, the pull-back used for end-point variations.
//! * `expm(X, dt) = exp(dt·X)`, computed through the eigendecomposition of
//!   the Hermitian matrix iX.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Re Tr(A†B) without forming the product.
pub(crate) fn re_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub(crate) fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().iter().sum()
}

/// Orthogonal projection of an arbitrary square matrix onto su(n) under
/// `Re Tr(X†Y)`: anti-Hermitian part with the trace removed.
pub(crate) fn project_su(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let mut out = (m - m.adjoint()) * Complex64::new(0.5, 0.0);
    let tr = trace(&out) / n as f64;
    for i in 0..n {
        out[(i, i)] -= tr;
    }
    out
}

/// A traceless anti-Hermitian n×n matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    m: CMatrix,
}

impl AlgebraElement {
    /// Validates shape, anti-Hermiticity and tracelessness at the default
    /// relative tolerance of 1e-12.
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, 1e-12)
    }

    pub fn with_tolerance(m: CMatrix, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "algebra element must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() < 2 {
            return Err(Error::InvalidDimension(m.nrows()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let scale = frobenius(&m).max(1.0);
        let herm = frobenius(&(&m + m.adjoint()));
        if herm > tol * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not anti-Hermitian (‖X + X†‖ = {herm:.3e})"
            )));
        }
        let tr = trace(&m).norm();
        if tr > tol * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not traceless (|Tr X| = {tr:.3e})"
            )));
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    /// The element −iH for a traceless Hermitian H.
    pub fn from_hamiltonian(h: &CMatrix) -> Result<Self> {
        Self::new(h * -I)
    }

    /// Projects any square matrix onto su(n).
    pub fn project(m: &CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() < 2 {
            return Err(Error::InvalidDimension(m.nrows()));
        }
        Ok(Self { m: project_su(m) })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            m: CMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    /// Frobenius norm, i.e. √inner(X, X).
    pub fn norm(&self) -> f64 {
        frobenius(&self.m)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            m: &self.m * Complex64::new(s, 0.0),
        }
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.norm() <= tol
    }

    /// The Hermitian matrix iX.
    pub fn hermitian(&self) -> CMatrix {
        &self.m * I
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::mismatch(n, self.dim()));
        }
        Ok(())
    }
}

impl Add for &AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: &AlgebraElement) -> AlgebraElement {
        AlgebraElement { m: &self.m + &rhs.m }
    }
}

impl Sub for &AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: &AlgebraElement) -> AlgebraElement {
        AlgebraElement { m: &self.m - &rhs.m }
    }
}

impl Neg for &AlgebraElement {
    type Output = AlgebraElement;
    fn neg(self) -> AlgebraElement {
        AlgebraElement { m: -&self.m }
    }
}

impl Mul<f64> for &AlgebraElement {
    type Output = AlgebraElement;
    fn mul(self, rhs: f64) -> AlgebraElement {
        self.scale(rhs)
    }
}

/// An element of SU(n).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    m: CMatrix,
}

impl UnitaryMatrix {
    /// Validates ‖U†U − I‖_F ≤ 1e-10 and |det U − 1| ≤ 1e-9.
    pub fn new(m: CMatrix) -> Result<Self> {
        let u = Self { m };
        if u.m.nrows() != u.m.ncols() {
            return Err(Error::InvalidInput("unitary must be square".into()));
        }
        if u.m.nrows() < 2 {
            return Err(Error::InvalidDimension(u.m.nrows()));
        }
        let (unit, det) = (u.unitarity_defect(), u.det_defect());
        if !(unit <= 1e-10) {
            return Err(Error::InvalidInput(format!(
                "matrix is not unitary (‖U†U − I‖ = {unit:.3e})"
            )));
        }
        if !(det <= 1e-9) {
            return Err(Error::InvalidInput(format!(
                "matrix is not special (|det U − 1| = {det:.3e})"
            )));
        }
        Ok(u)
    }

    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: CMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: self.m.adjoint(),
        }
    }

    pub fn compose(&self, rhs: &UnitaryMatrix) -> Self {
        Self { m: &self.m * &rhs.m }
    }

    /// ‖U†U − I‖_F
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        frobenius(&(self.m.adjoint() * &self.m - CMatrix::identity(n, n)))
    }

    /// |det U − 1|
    pub fn det_defect(&self) -> f64 {
        (self.m.clone().determinant() - Complex64::new(1.0, 0.0)).norm()
    }
}

/// An ordered orthonormal basis of su(n).
#[derive(Debug, Clone)]
pub struct BasisSet {
    dim: usize,
    elements: Vec<AlgebraElement>,
}

impl BasisSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[AlgebraElement] {
        &self.elements
    }

    pub fn get(&self, i: usize) -> &AlgebraElement {
        &self.elements[i]
    }

    /// Coordinates of `x` over this basis.
    pub fn coords(&self, x: &AlgebraElement) -> Result<Vec<f64>> {
        x.check_dim(self.dim)?;
        Ok(self.coords_of_matrix(x.matrix()))
    }

    pub(crate) fn coords_of_matrix(&self, m: &CMatrix) -> Vec<f64> {
        self.elements.iter().map(|b| re_inner(b.matrix(), m)).collect()
    }

    pub fn element(&self, coords: &[f64]) -> Result<AlgebraElement> {
        if coords.len() != self.len() {
            return Err(Error::mismatch(self.len(), coords.len()));
        }
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (c, b) in coords.iter().zip(&self.elements) {
            m += b.matrix() * Complex64::new(*c, 0.0);
        }
        Ok(AlgebraElement::from_matrix_unchecked(m))
    }
}

/// Generalized Gell-Mann basis in anti-Hermitian form, orthonormal under
/// `inner`.
///
/// Ordering: for each pair j < k (row-major) the symmetric generator
/// i(E_jk + E_kj)/√2 followed by the antisymmetric one (E_jk − E_kj)/√2;
/// then the n−1 diagonal generators i·diag(1,…,1,−l,0,…)/√(l(l+1)).
/// At n = 2 this is iσ_x/√2, iσ_y/√2, iσ_z/√2.
pub fn standard_basis(n: usize) -> Result<BasisSet> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let s = 1.0 / 2f64.sqrt();
    let mut elements = Vec::with_capacity(n * n - 1);
    for j in 0..n {
        for k in (j + 1)..n {
            let mut sym = CMatrix::zeros(n, n);
            sym[(j, k)] = Complex64::new(0.0, s);
            sym[(k, j)] = Complex64::new(0.0, s);
            elements.push(AlgebraElement::from_matrix_unchecked(sym));

            let mut anti = CMatrix::zeros(n, n);
            anti[(j, k)] = Complex64::new(s, 0.0);
            anti[(k, j)] = Complex64::new(-s, 0.0);
            elements.push(AlgebraElement::from_matrix_unchecked(anti));
        }
    }
    for l in 1..n {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut d = CMatrix::zeros(n, n);
        for i in 0..l {
            d[(i, i)] = Complex64::new(0.0, norm);
        }
        d[(l, l)] = Complex64::new(0.0, -(l as f64) * norm);
        elements.push(AlgebraElement::from_matrix_unchecked(d));
    }
    Ok(BasisSet { dim: n, elements })
}

/// Re Tr(X†Y).
pub fn inner(x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
    y.check_dim(x.dim())?;
    Ok(re_inner(x.matrix(), y.matrix()))
}

/// XY − YX.
pub fn commutator(x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
    y.check_dim(x.dim())?;
    Ok(AlgebraElement::from_matrix_unchecked(bracket(
        x.matrix(),
        y.matrix(),
    )))
}

pub(crate) fn bracket(x: &CMatrix, y: &CMatrix) -> CMatrix {
    x * y - y * x
}

/// U†XU.
pub fn adjoint_action(u: &UnitaryMatrix, x: &AlgebraElement) -> Result<AlgebraElement> {
    x.check_dim(u.dim())?;
    Ok(AlgebraElement::from_matrix_unchecked(
        u.matrix().adjoint() * x.matrix() * u.matrix(),
    ))
}

/// Eigendecomposition of an algebra element X through the Hermitian matrix
/// iX = V·diag(λ)·V†, so that X = −i·V·diag(λ)·V†.
#[derive(Debug, Clone)]
pub struct Spectral {
    /// Eigenvalues of iX (real).
    pub values: Vec<f64>,
    /// Unitary matrix of eigenvectors.
    pub vectors: CMatrix,
}

impl Spectral {
    pub fn of(x: &AlgebraElement) -> Result<Self> {
        Self::of_matrix(x.matrix())
    }

    pub(crate) fn of_matrix(x: &CMatrix) -> Result<Self> {
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NumericalFailure(
                "non-finite entry in eigendecomposition input".into(),
            ));
        }
        let mut h = x * I;
        // Hermitize exactly; the eigensolver reads one triangle only.
        h = (&h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000).ok_or_else(|| {
            Error::NumericalFailure("Hermitian eigendecomposition did not converge".into())
        })?;
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
        }
        Ok(Self {
            values,
            vectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Phases e^{−iλ_j·dt}, the eigenvalues of exp(dt·X).
    pub fn phases(&self, dt: f64) -> Vec<Complex64> {
        self.values
            .iter()
            .map(|l| Complex64::from_polar(1.0, -l * dt))
            .collect()
    }

    /// exp(dt·X) as a raw matrix.
    pub fn exp(&self, dt: f64) -> CMatrix {
        let phases = self.phases(dt);
        let mut scaled = self.vectors.clone();
        for (j, ph) in phases.iter().enumerate() {
            scaled.column_mut(j).scale_mut_c(*ph);
        }
        scaled * self.vectors.adjoint()
    }

    /// Kernel Γ of ∫₀^dt exp(−sX)·D·exp(sX) ds in the eigenbasis:
    /// Γ_jk = ∫₀^dt e^{i(λ_j−λ_k)s} ds, with the diagonal limit dt.
    pub fn orbit_integral_kernel(&self, dt: f64) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, n, |j, k| {
            let z = I * ((self.values[j] - self.values[k]) * dt);
            phi1(z) * dt
        })
    }

    /// Spectral width λ_max − λ_min of iX.
    pub fn gap(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Conjugates a matrix into the eigenbasis: V†·M·V.
    pub fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * m * &self.vectors
    }

    pub fn from_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        &self.vectors * m * self.vectors.adjoint()
    }
}

trait ScaleC {
    fn scale_mut_c(&mut self, s: Complex64);
}

impl<S> ScaleC for nalgebra::Matrix<Complex64, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<Complex64, nalgebra::Dyn, nalgebra::U1>,
{
    fn scale_mut_c(&mut self, s: Complex64) {
        for z in self.iter_mut() {
            *z *= s;
        }
    }
}

/// (e^z − 1)/z with its Taylor expansion near zero.
pub(crate) fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let one = Complex64::new(1.0, 0.0);
        one + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// exp(dt·X) via the Hermitian eigendecomposition of iX.
pub fn expm(x: &AlgebraElement, dt: f64) -> Result<UnitaryMatrix> {
    if !dt.is_finite() {
        return Err(Error::NumericalFailure(format!("non-finite time step {dt}")));
    }
    let sp = Spectral::of(x)?;
    Ok(UnitaryMatrix::from_matrix_unchecked(sp.exp(dt)))
}

/// d/dε exp(dt·(X + εD)) at ε = 0.
///
/// In the eigenbasis of iX the derivative is the Hadamard product of V†DV
/// with the divided differences (e^{dt·μ_j} − e^{dt·μ_k})/(μ_j − μ_k),
/// μ = −iλ, whose diagonal limit is dt·e^{dt·μ_j}.
pub fn exp_frechet(x: &AlgebraElement, d: &AlgebraElement, dt: f64) -> Result<CMatrix> {
    d.check_dim(x.dim())?;
    if !dt.is_finite() {
        return Err(Error::NumericalFailure(format!("non-finite time step {dt}")));
    }
    let sp = Spectral::of(x)?;
    Ok(frechet_with(&sp, d.matrix(), dt))
}

pub(crate) fn frechet_with(sp: &Spectral, d: &CMatrix, dt: f64) -> CMatrix {
    let n = sp.dim();
    let phases = sp.phases(dt);
    let dt_eig = sp.to_eigenbasis(d);
    let inner = CMatrix::from_fn(n, n, |j, k| {
        // e^{dt μ_j} − e^{dt μ_k} = e^{dt μ_k}(e^{z} − 1), z = dt(μ_j − μ_k)
        let z = -I * ((sp.values[j] - sp.values[k]) * dt);
        phases[k] * phi1(z) * dt * dt_eig[(j, k)]
    });
    sp.from_eigenbasis(&inner)
}

/// I.i.d. standard-normal coefficients over `standard_basis(n)`.
pub fn random_coefficients(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n * n - 1)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect())
}

/// How a Gaussian sample is brought inside the norm bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScaling {
    /// Rescale to exactly the bound.
    #[default]
    Normalize,
    /// Rescale only when the sample exceeds the bound.
    Clamp,
}

/// Seeded random element with ‖X‖_F ≤ `norm_bound` (equal to it under
/// [`NormScaling::Normalize`]).
pub fn random_element(n: usize, seed: u64, norm_bound: f64) -> Result<AlgebraElement> {
    random_element_scaled(n, seed, norm_bound, NormScaling::Normalize)
}

pub fn random_element_scaled(
    n: usize,
    seed: u64,
    norm_bound: f64,
    scaling: NormScaling,
) -> Result<AlgebraElement> {
    if !(norm_bound > 0.0) || !norm_bound.is_finite() {
        return Err(Error::InvalidInput(format!(
            "norm bound must be positive, got {norm_bound}"
        )));
    }
    let basis = standard_basis(n)?;
    let mut coeffs = random_coefficients(n, seed)?;
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let factor = match scaling {
        NormScaling::Normalize => norm_bound / norm,
        NormScaling::Clamp if norm > norm_bound => norm_bound / norm,
        NormScaling::Clamp => 1.0,
    };
    coeffs.iter_mut().for_each(|c| *c *= factor);
    basis.element(&coeffs)
}

/// Haar-distributed special unitary: QR of a complex Ginibre matrix with the
/// phase of R's diagonal folded back in, then divided by an n-th root of the
/// determinant.
pub fn random_special_unitary(n: usize, seed: u64) -> Result<UnitaryMatrix> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im) / 2f64.sqrt()
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        q.column_mut(j).scale_mut_c(ph);
    }
    let det = q.clone().determinant();
    let root = Complex64::from_polar(1.0, -det.arg() / n as f64);
    Ok(UnitaryMatrix::from_matrix_unchecked(q * root))
}

/// Spectrum (eigenvalues of the Hermitian matrix iX), ascending.
pub fn hermitian_spectrum(x: &AlgebraElement) -> Result<Vec<f64>> {
    let mut v = Spectral::of(x)?.values;
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

/// Real eigenvalues of a Hermitian matrix, ascending.
pub(crate) fn hermitian_eigenvalues(h: &CMatrix) -> Result<Vec<f64>> {
    let herm = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::try_new(herm, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("eigendecomposition did not converge".into()))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

/// Real vectorization (re, im interleaved) of a complex vector.
pub(crate) fn realify(v: &DVector<Complex64>) -> Vec<f64> {
    v.iter().flat_map(|z| [z.re, z.im]).collect()
}

pub(crate) const TWO_PI: f64 = 2.0 * PI;

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn pauli_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
    }

    fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    fn pauli_y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
    }

    fn taylor_exp(x: &CMatrix, dt: f64, terms: usize) -> CMatrix {
        let n = x.nrows();
        let a = x * c(dt, 0.0);
        let mut term = CMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..terms {
            term = &term * &a / c(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn basis_counts_and_orthonormality() {
        for n in 2..=6 {
            let b = standard_basis(n).unwrap();
            assert_eq!(b.len(), n * n - 1);
            for i in 0..b.len() {
                AlgebraElement::new(b.get(i).matrix().clone()).unwrap();
                for j in 0..b.len() {
                    let g = inner(b.get(i), b.get(j)).unwrap();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).abs() <= 1e-12, "n={n} ({i},{j}) = {g}");
                }
            }
        }
        assert!(matches!(standard_basis(1), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn qubit_basis_is_scaled_pauli() {
        let b = standard_basis(2).unwrap();
        let s = c(0.0, 1.0 / 2f64.sqrt());
        assert!(frobenius(&(b.get(0).matrix() - pauli_x() * s)) < 1e-15);
        assert!(frobenius(&(b.get(1).matrix() - pauli_y() * s)) < 1e-15);
        assert!(frobenius(&(b.get(2).matrix() - pauli_z() * s)) < 1e-15);
    }

    #[test]
    fn inner_matches_direct_sum() {
        let x = random_element(3, 11, 2.0).unwrap();
        let y = random_element(3, 12, 1.5).unwrap();
        let mut direct = c(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                direct += x.matrix()[(i, j)].conj() * y.matrix()[(i, j)];
            }
        }
        assert!(direct.im.abs() <= 1e-12);
        assert!((inner(&x, &y).unwrap() - direct.re).abs() <= 1e-12);
        assert!((inner(&x, &x).unwrap() - x.norm().powi(2)).abs() <= 1e-12);
    }

    #[test]
    fn orthogonal_pauli_directions() {
        let z = AlgebraElement::new(pauli_z() * c(0.0, 1.0 / 2f64.sqrt())).unwrap();
        let x = AlgebraElement::new(pauli_x() * c(0.0, 1.0 / 2f64.sqrt())).unwrap();
        assert_eq!(inner(&z, &x).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = AlgebraElement::zero(2);
        let b = AlgebraElement::zero(3);
        assert!(matches!(inner(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(commutator(&a, &b), Err(Error::DimensionMismatch { .. })));
        let u = UnitaryMatrix::identity(3);
        assert!(matches!(adjoint_action(&u, &a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pauli_commutator() {
        let ix = AlgebraElement::new(pauli_x() * c(0., 1.)).unwrap();
        let iy = AlgebraElement::new(pauli_y() * c(0., 1.)).unwrap();
        let got = commutator(&ix, &iy).unwrap();
        let want = pauli_z() * c(0., -2.);
        assert!(frobenius(&(got.matrix() - want)) < 1e-15);
        assert!(commutator(&ix, &ix).unwrap().norm() == 0.0);
    }

    #[test]
    fn jacobi_identity() {
        for seed in 0..20 {
            let x = random_element(4, 3 * seed, 1.0).unwrap();
            let y = random_element(4, 3 * seed + 1, 1.0).unwrap();
            let z = random_element(4, 3 * seed + 2, 1.0).unwrap();
            let t1 = commutator(&x, &commutator(&y, &z).unwrap()).unwrap();
            let t2 = commutator(&y, &commutator(&z, &x).unwrap()).unwrap();
            let t3 = commutator(&z, &commutator(&x, &y).unwrap()).unwrap();
            assert!((&(&t1 + &t2) + &t3).norm() <= 1e-12);
        }
    }

    #[test]
    fn adjoint_action_identity_and_invariance() {
        let x = random_element(3, 5, 1.0).unwrap();
        let y = random_element(3, 6, 1.0).unwrap();
        let ad = adjoint_action(&UnitaryMatrix::identity(3), &x).unwrap();
        assert_eq!(ad, x);
        let u = random_special_unitary(3, 9).unwrap();
        let (ax, ay) = (adjoint_action(&u, &x).unwrap(), adjoint_action(&u, &y).unwrap());
        assert!((inner(&ax, &ay).unwrap() - inner(&x, &y).unwrap()).abs() <= 1e-10);
        AlgebraElement::new(ax.into_matrix()).unwrap();
    }

    #[test]
    fn expm_special_cases() {
        let id = expm(&AlgebraElement::zero(3), 1.7).unwrap();
        assert!(frobenius(&(id.matrix() - CMatrix::identity(3, 3))) == 0.0);

        let iz = AlgebraElement::new(pauli_z() * c(0., 1.)).unwrap();
        let u = expm(&iz, PI).unwrap();
        assert!(frobenius(&(u.matrix() + CMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn expm_matches_taylor() {
        for seed in 0..10 {
            let x = random_element(4, seed, 3.0).unwrap();
            let u = expm(&x, 0.1).unwrap();
            let t = taylor_exp(x.matrix(), 0.1, 60);
            assert!(frobenius(&(u.matrix() - t)) <= 1e-12);
            UnitaryMatrix::new(u.into_matrix()).unwrap();
        }
    }

    #[test]
    fn expm_is_a_one_parameter_group() {
        let x = random_element(3, 21, 4.0).unwrap();
        let a = expm(&x, 0.37).unwrap();
        let b = expm(&x, 1.21).unwrap();
        let ab = expm(&x, 1.58).unwrap();
        assert!(frobenius(&(a.compose(&b).matrix() - ab.matrix())) <= 1e-10);
    }

    #[test]
    fn frechet_special_cases() {
        let x = random_element(3, 1, 2.0).unwrap();
        let zero = AlgebraElement::zero(3);
        assert!(frobenius(&exp_frechet(&x, &zero, 0.7).unwrap()) == 0.0);
        let d = random_element(3, 2, 1.0).unwrap();
        let got = exp_frechet(&zero, &d, 0.7).unwrap();
        assert!(frobenius(&(got - d.matrix() * c(0.7, 0.0))) <= 1e-15);
    }

    #[test]
    fn frechet_matches_central_differences() {
        let h = 1e-6;
        for n in 2..=4 {
            for seed in 0..100u64 {
                let x = random_element(n, 1000 + seed, 3.0).unwrap();
                let d = random_element(n, 5000 + seed, 1.0).unwrap();
                let dt = 0.8;
                let got = exp_frechet(&x, &d, dt).unwrap();
                let plus = expm(&(&x + &d.scale(h)), dt).unwrap();
                let minus = expm(&(&x - &d.scale(h)), dt).unwrap();
                let fd = (plus.matrix() - minus.matrix()) / c(2.0 * h, 0.0);
                let rel = frobenius(&(&got - &fd)) / frobenius(&got);
                assert!(rel <= 1e-6, "n={n} seed={seed} rel={rel:.3e}");
            }
        }
    }

    #[test]
    fn random_element_is_deterministic_and_valid() {
        let a = random_element(4, 77, 1.3).unwrap();
        let b = random_element(4, 77, 1.3).unwrap();
        assert_eq!(a, b);
        for seed in 0..1000 {
            let x = random_element(4, seed, 0.5).unwrap();
            assert!(x.norm() > 0.0 && x.norm() <= 0.5 + 1e-12);
            AlgebraElement::new(x.into_matrix()).unwrap();
        }
        let clamped = random_element_scaled(2, 3, 100.0, NormScaling::Clamp).unwrap();
        assert!(clamped.norm() < 100.0);
    }

    #[test]
    fn gaussian_coefficients_look_standard_normal() {
        let mut all = Vec::new();
        for seed in 0..10_000u64 {
            all.extend(random_coefficients(2, seed).unwrap());
        }
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        assert!(m.abs() <= 0.05, "mean {m}");
        assert!((var - 1.0).abs() <= 0.1, "variance {var}");
    }

    #[test]
    fn haar_sample_is_special_unitary() {
        for seed in 0..50 {
            let u = random_special_unitary(4, seed).unwrap();
            UnitaryMatrix::new(u.into_matrix()).unwrap();
        }
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let herm = pauli_x();
        assert!(AlgebraElement::new(herm).is_err());
        let traced = CMatrix::identity(2, 2) * c(0.0, 1.0);
        assert!(AlgebraElement::new(traced).is_err());
        assert!(UnitaryMatrix::new(pauli_x() * c(2.0, 0.0)).is_err());
    }
}
