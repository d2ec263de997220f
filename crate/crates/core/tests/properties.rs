use proptest::prelude::*;

use qlandscape::algebra::{
    adjoint_action, commutator, expm, inner, random_element, random_special_unitary,
    standard_basis,
};
use qlandscape::dynamics::{end_point, endpoint_jacobian, objective_value, propagate};
use qlandscape::harness::{random_control, split_seed};
use qlandscape::singularity::{larc_dimension, state_map_rank};
use qlandscape::synthesis::resample_piece_average;
use qlandscape::{ControlSystem, Objective, Tolerances};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn dipole(n: usize, seed: u64) -> ControlSystem {
    ControlSystem::dipole(
        random_element(n, seed, 1.0).unwrap(),
        random_element(n, seed ^ 0xA5A5, 1.0).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_action_preserves_inner_product(n in 2usize..5, seed in any::<u64>()) {
        let x = random_element(n, seed, 1.0).unwrap();
        let y = random_element(n, seed.wrapping_add(1), 1.0).unwrap();
        let u = random_special_unitary(n, seed.wrapping_add(2)).unwrap();
        let lhs = inner(&adjoint_action(&u, &x).unwrap(), &adjoint_action(&u, &y).unwrap()).unwrap();
        prop_assert!(close(lhs, inner(&x, &y).unwrap(), 1e-12));
    }

    #[test]
    fn commutator_is_antisymmetric_and_satisfies_jacobi(n in 2usize..5, seed in any::<u64>()) {
        let x = random_element(n, seed, 1.0).unwrap();
        let y = random_element(n, seed.wrapping_add(1), 1.0).unwrap();
        let z = random_element(n, seed.wrapping_add(2), 1.0).unwrap();
        let xy = commutator(&x, &y).unwrap();
        let yx = commutator(&y, &x).unwrap();
        prop_assert!((xy.matrix() + yx.matrix()).norm() <= 1e-14);
        let j = commutator(&x, &commutator(&y, &z).unwrap()).unwrap().matrix()
            + commutator(&y, &commutator(&z, &x).unwrap()).unwrap().matrix()
            + commutator(&z, &xy).unwrap().matrix();
        prop_assert!(j.norm() <= 1e-13);
    }

    #[test]
    fn basis_coordinates_round_trip(n in 2usize..5, seed in any::<u64>()) {
        let basis = standard_basis(n).unwrap();
        let x = random_element(n, seed, 2.0).unwrap();
        let back = basis.element(&basis.coords(&x).unwrap()).unwrap();
        prop_assert!((back.matrix() - x.matrix()).norm() <= 1e-13);
    }

    #[test]
    fn exponential_lands_in_special_unitary_group(
        n in 2usize..5, seed in any::<u64>(), dt in 0.0f64..20.0,
    ) {
        let u = expm(&random_element(n, seed, 3.0).unwrap(), dt).unwrap();
        prop_assert!(u.unitarity_defect() <= 1e-10);
        prop_assert!(u.det_defect() <= 1e-9);
    }

    #[test]
    fn trajectory_is_a_consistent_product_of_pieces(
        n in 2usize..4, p in 1usize..12, seed in any::<u64>(),
    ) {
        let sys = dipole(n, seed);
        let field = random_control(1.5, p, 2.0, 1, seed).unwrap();
        let traj = propagate(&sys, &field).unwrap();
        prop_assert!(traj.semigroup_residual().unwrap() <= 1e-10);
        prop_assert_eq!(traj.boundary_ops().len(), p + 1);
        for u in traj.boundary_ops() {
            prop_assert!(u.unitarity_defect() <= 1e-10);
        }
    }

    #[test]
    fn refining_a_field_leaves_the_end_point_unchanged(
        p in 1usize..6, factor in 1usize..4, seed in any::<u64>(),
    ) {
        let sys = dipole(3, seed);
        let field = random_control(2.0, p, 1.0, 1, seed).unwrap();
        let fine = field.refine(factor).unwrap();
        let a = end_point(&sys, &field).unwrap();
        let b = end_point(&sys, &fine).unwrap();
        prop_assert!((a.matrix() - b.matrix()).norm() <= 1e-11);
    }

    #[test]
    fn objective_never_exceeds_kinematic_maximum(n in 2usize..4, seed in any::<u64>()) {
        let sys = dipole(n, seed);
        let field = random_control(3.0, 8, 2.0, 1, seed).unwrap();
        let g = random_special_unitary(n, seed.wrapping_add(7)).unwrap();
        for obj in [Objective::gate_real(g.clone()).unwrap(), Objective::gate_phase_free(g).unwrap()] {
            let v = objective_value(&sys, &field, &obj).unwrap();
            prop_assert!(v <= obj.kinematic_max() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dropping_a_parameter_never_lowers_corank(p in 1usize..10, seed in any::<u64>(), col in 0usize..10) {
        let sys = dipole(2, seed);
        let field = random_control(1.0, p, 1.0, 1, seed).unwrap();
        let tol = Tolerances::default();
        let report = endpoint_jacobian(&sys, &field).unwrap();
        let reduced = report.without_column(col % p, &tol).unwrap();
        prop_assert!(reduced.corank() >= report.corank());
        prop_assert!(report.corank() <= report.rows());
    }

    #[test]
    fn lie_closure_dimension_is_bounded(n in 2usize..5, seed in any::<u64>()) {
        let d = larc_dimension(&dipole(n, seed));
        prop_assert!((1..=n * n - 1).contains(&d));
    }

    #[test]
    fn state_map_rank_is_bounded(n in 2usize..4, seed in any::<u64>()) {
        let sys = dipole(n, seed);
        let field = random_control(2.0, 6, 1.0, 1, seed).unwrap();
        let mut psi = nalgebra::DVector::zeros(n);
        psi[0] = num_complex::Complex64::new(1.0, 0.0);
        let r = state_map_rank(&sys, &field, &psi, &Tolerances::default()).unwrap();
        prop_assert!(r <= 2 * n - 2);
    }

    #[test]
    fn piece_averaging_preserves_the_time_integral(
        samples in prop::collection::vec(-5.0f64..5.0, 1..40), pieces in 1usize..8,
    ) {
        prop_assume!(samples.len() % pieces == 0);
        let avg = resample_piece_average(&samples, pieces).unwrap();
        let lhs: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
        let rhs: f64 = avg.iter().sum::<f64>() / pieces as f64;
        prop_assert!(close(lhs, rhs, 1e-12));
    }

    #[test]
    fn seed_splitting_is_deterministic_and_index_sensitive(
        master in any::<u64>(), a in any::<u64>(), b in any::<u64>(),
    ) {
        prop_assert_eq!(split_seed(master, &[a, b]), split_seed(master, &[a, b]));
        prop_assume!(a != b);
        prop_assert_ne!(split_seed(master, &[a]), split_seed(master, &[b]));
    }
}
