//! One record for every numerical threshold the library uses.
//!
//! Defaults are the documented ones; every field can be overridden from a
//! config file or the command line.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative anti-Hermiticity / tracelessness bound for algebra elements.
    pub algebra: f64,
    /// Bound on ‖U†U − I‖_F.
    pub unitarity: f64,
    /// Bound on |det U − 1|.
    pub determinant: f64,
    /// Relative singular-value threshold for numerical rank. `None` means
    /// 1e-8·√(max matrix dimension).
    pub rank: Option<f64>,
    /// Normalized projection residual below which a map is declared not
    /// transverse to a level set.
    pub transverse: f64,
    /// Relative threshold for accepting a new direction in the Lie closure.
    pub larc: f64,
    /// Gradient-norm factor: critical when ‖∇F‖ ≤ grad·κ·√p.
    pub grad: f64,
    /// Relative gap from the kinematic maximum counted as a global optimum.
    pub value_gap: f64,
    /// Norm below which the translated gradient ξ counts as zero.
    pub xi: f64,
    /// Largest Hessian eigenvalue (relative to max(1, ‖H‖)) still counted as
    /// negative semidefinite.
    pub hessian: f64,
    /// Singular-control denominator guard: abort when
    /// |den| < denom·(|num| + 1).
    pub denom: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            algebra: 1e-12,
            unitarity: 1e-10,
            determinant: 1e-9,
            rank: None,
            transverse: 1e-6,
            larc: 1e-10,
            grad: 1e-8,
            value_gap: 1e-3,
            xi: 1e-10,
            hessian: 1e-6,
            denom: 1e-10,
        }
    }
}

impl Tolerances {
    /// Relative rank threshold for a matrix of the given shape.
    pub fn rank_tol(&self, rows: usize, cols: usize) -> f64 {
        self.rank
            .unwrap_or_else(|| 1e-8 * (rows.max(cols) as f64).sqrt())
    }

    /// Absolute gradient-norm threshold for a field with bound `kappa` on `p` pieces.
    pub fn grad_threshold(&self, kappa: f64, pieces: usize) -> f64 {
        self.grad * kappa * (pieces as f64).sqrt()
    }
}
