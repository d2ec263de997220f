//! Fixed workloads shared by the benchmarks.

use qlandscape::algebra::{random_element, random_special_unitary};
use qlandscape::harness::random_control;
use qlandscape::{ControlField, ControlSystem, Objective};

pub struct Fixture {
    pub system: ControlSystem,
    pub field: ControlField,
    pub objective: Objective,
}

/// Random single-control system on su(n) with a J2 target and a random
/// field on `pieces` pieces.
pub fn fixture(n: usize, pieces: usize, seed: u64) -> Fixture {
    let system = ControlSystem::dipole(
        random_element(n, seed, 1.0).expect("valid dimension"),
        random_element(n, seed + 1, 1.0).expect("valid dimension"),
    )
    .expect("matching dimensions");
    let field = random_control(10.0, pieces, 2.0, 1, seed + 2).expect("valid field");
    let objective = Objective::gate_phase_free(random_special_unitary(n, seed + 3).expect("valid dimension"))
        .expect("special unitary target");
    Fixture {
        system,
        field,
        objective,
    }
}
