//! Control landscapes of finite-dimensional closed quantum systems.
//!
//! Piecewise-constant controls, the end-point map and its derivative,
//! objective landscapes and their critical points, singular controls and
//! batch experiment drivers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod landscape;
pub mod singularity;
pub mod synthesis;
pub mod tolerance;

pub use algebra::{AlgebraElement, BasisSet, CMatrix, UnitaryMatrix};
pub use dynamics::{ControlField, ControlSystem, Trajectory};
pub use error::{Error, Result};
pub use landscape::{CriticalTag, Objective, RunRecord, Termination};
pub use harness::{run_experiment, ExperimentConfig, ExperimentReport};
pub use singularity::JacobianReport;
pub use synthesis::{SearchRecord, SingularSeed};
pub use tolerance::Tolerances;
