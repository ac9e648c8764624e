use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use spincm::flows::{integrate, residue_gauge_rate, vector_field_gradient, vector_field_residue, FlowSpec};
use spincm::kp::{psi_pair, residue_of_product, ring_grid, Gauge};
use spincm::lax::{build_lax, hamiltonians, resolvent_residue};
use spincm::{random_state, PhaseState, TimeVector, C64};

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn scale(m: &DMatrix<C64>) -> f64 {
    1.0 + max_abs(m)
}

fn state() -> impl Strategy<Value = PhaseState> {
    (1usize..=5, 1usize..=3, any::<u64>()).prop_map(|(n, d, seed)| random_state(n, d, seed, 1.0).unwrap())
}

fn gauge_factors(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((0.3f64..3.0, 0.0f64..std::f64::consts::TAU), n)
        .prop_map(|v| v.into_iter().map(|(r, t)| C64::from_polar(r, t)).collect())
}

fn state_and_gauge() -> impl Strategy<Value = (PhaseState, Vec<C64>)> {
    state().prop_flat_map(|s| {
        let n = s.n_particles();
        (Just(s), gauge_factors(n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lax_matrix_is_gauge_covariant((s, lambda) in state_and_gauge()) {
        let rescaled = s.gauge_rescale(&lambda).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_vec(lambda.clone()));
        let d_inv = DMatrix::from_diagonal(&DVector::from_vec(lambda.iter().map(|z| z.inv()).collect()));
        let (l, l2) = (build_lax(&s).unwrap(), build_lax(&rescaled).unwrap());
        let expected = &d_inv * &l.l * &d;
        prop_assert!(max_abs(&(l2.l - &expected)) <= 1e-12 * scale(&expected));
        let expected_r = &d_inv * &l.r * &d;
        prop_assert!(max_abs(&(l2.r - &expected_r)) <= 1e-12 * scale(&expected_r));
    }

    #[test]
    fn hamiltonians_are_gauge_invariant((s, lambda) in state_and_gauge()) {
        let h = hamiltonians(&s, 5).unwrap();
        let h2 = hamiltonians(&s.gauge_rescale(&lambda).unwrap(), 5).unwrap();
        for (a, b) in h.iter().zip(&h2) {
            prop_assert!((a - b).norm() <= 1e-10 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn baker_akhiezer_matrices_are_gauge_invariant((s, lambda) in state_and_gauge()) {
        let rescaled = s.gauge_rescale(&lambda).unwrap();
        let x = ring_grid(&s, 1, 1.5)[0];
        let z = C64::new(1.3, 0.7);
        let times = TimeVector::default();
        if let (Ok(u), Ok(v)) = (
            psi_pair(&s, &times, z, x, Gauge::Stripped),
            psi_pair(&rescaled, &times, z, x, Gauge::Stripped),
        ) {
            prop_assert!(max_abs(&(&u.psi_tilde - &v.psi_tilde)) <= 1e-10 * scale(&u.psi_tilde));
            prop_assert!(max_abs(&(&u.psi_dagger_tilde - &v.psi_dagger_tilde)) <= 1e-10 * scale(&u.psi_dagger_tilde));
        }
    }

    #[test]
    fn r_identity_holds(s in state()) {
        let lax = build_lax(&s).unwrap();
        prop_assert!(max_abs(&lax.r_identity_defect()) <= 1e-12);
    }

    #[test]
    fn flat_round_trip(s in state()) {
        let back = PhaseState::from_flat(s.n_particles(), s.spin_dim(), &s.to_flat()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn hamiltonian_flows_keep_the_constraint(s in state(), m in 1usize..=4) {
        let v = vector_field_gradient(&s, m).unwrap();
        for i in 0..s.n_particles() {
            let rate: C64 = (0..s.spin_dim())
                .map(|al| v.db[(i, al)] * s.a()[(i, al)] + s.b()[(i, al)] * v.da[(i, al)])
                .sum();
            prop_assert!(rate.norm() <= 1e-11 * (1.0 + v.da.iter().chain(v.db.iter()).map(|z| z.norm()).fold(0.0, f64::max)));
        }
    }

    #[test]
    fn both_routes_move_the_products_alike(s in state(), m in 1usize..=4) {
        let g = vector_field_gradient(&s, m).unwrap();
        let r = vector_field_residue(&s, m).unwrap();
        let prod = |t: &spincm::flows::Tangent| t.da.transpose() * s.b() + s.a().transpose() * &t.db;
        let (pg, pr) = (prod(&g), prod(&r));
        prop_assert!(max_abs(&(&pg - &pr)) <= 1e-12 * scale(&pg));
        let rates = residue_gauge_rate(&s, m).unwrap();
        let fixed = r.without_gauge(&s, &rates);
        prop_assert!(max_abs(&(&fixed.da - &g.da)) <= 1e-12 * scale(&g.da));
        prop_assert!(max_abs(&(&fixed.db - &g.db)) <= 1e-12 * scale(&g.db));
    }

    #[test]
    fn resolvent_residues_satisfy_the_recursion(s in state(), m in 0usize..=5) {
        // res z^{m+1} G A G = L res z^m G A G + A L^m
        let l = build_lax(&s).unwrap().l;
        let a = build_lax(&s).unwrap().r;
        let lhs = resolvent_residue(&l, m + 1, Some(&a));
        let rhs = &l * resolvent_residue(&l, m, Some(&a)) + &a * resolvent_residue(&l, m, None);
        prop_assert!(max_abs(&(&lhs - &rhs)) <= 1e-11 * scale(&lhs));
    }

    #[test]
    fn product_residue_trace_is_pole_velocity_sum(s in state(), m in 1usize..=3) {
        let x = ring_grid(&s, 1, 1.0)[0];
        let v = vector_field_gradient(&s, m).unwrap();
        let expected: C64 = s.x().iter().zip(v.dx.iter()).map(|(xi, d)| d / ((x - xi) * (x - xi))).sum();
        let got = residue_of_product(&s, m, x).unwrap().trace();
        prop_assert!((got - expected).norm() <= 1e-11 * (1.0 + expected.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conservation_error_converges(seed in any::<u64>(), m in 2usize..=4) {
        // Velocities of t_m grow like ||L||^{m-1}; the step shrinks accordingly.
        let s = random_state(3, 2, seed, 1.0).unwrap();
        let norm = spincm::oracle::norm_inf(&build_lax(&s).unwrap().l).max(1.0);
        let dt = 1e-3 / norm.powi(m as i32 - 2);
        let run = |h: f64| integrate(&s, &FlowSpec::new(m, C64::new(0.05, 0.0), h));
        if let (Ok(coarse), Ok(fine)) = (run(dt), run(dt / 2.0)) {
            let (c, f) = (coarse.conservation_defect(), fine.conservation_defect());
            prop_assert!(f <= 1e-10 || c / f >= 8.0, "defects {c:e} -> {f:e}");
            let (c, f) = (coarse.max_drift(), fine.max_drift());
            prop_assert!(f <= 1e-11 || c / f >= 8.0, "drift {c:e} -> {f:e}");
        }
    }

    #[test]
    fn t1_flow_is_a_shift(s in state(), t in -1.0f64..1.0) {
        let traj = integrate(&s, &FlowSpec::new(1, C64::new(t, 0.0), 1e-2)).unwrap();
        let end = &traj.last().state;
        for i in 0..s.n_particles() {
            prop_assert!((end.x()[i] - (s.x()[i] - t)).norm() <= 1e-12);
        }
        prop_assert_eq!(end.p(), s.p());
    }
}
