use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use subflow_core::branching::{branching_family, spray_map, BranchFamilySpec};
use subflow_core::endpoint::{corank_profile, CorankSettings};
use subflow_core::flow::{flow_endpoint, hamiltonian, integrate_geodesic, CotangentState};
use subflow_core::numerics::{double_integral_theta, numerical_rank, IntegratorSpec};
use subflow_core::structures::{
    flat_martinet_structure, glued_structure, heisenberg_structure, product_structure, standard_bump, SRStructure,
};

fn rk4() -> IntegratorSpec {
    IntegratorSpec::rk4(1e-3).unwrap()
}

fn builtins() -> Vec<SRStructure> {
    vec![
        glued_structure(),
        heisenberg_structure(),
        flat_martinet_structure(),
        product_structure(&[glued_structure(), heisenberg_structure()]).unwrap(),
    ]
}

fn line_trace(duration: f64) -> subflow_core::GeodesicTrace {
    let init = CotangentState::from_slices(&[0.0, -1.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
    integrate_geodesic(&glued_structure(), &init, duration, &rk4()).unwrap()
}

fn rotation(n: usize, seed: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()] + if i == j { 2.0 } else { 0.0 }).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_invariant_under_permutation_and_rotation(
        entries in prop::collection::vec(-1.0f64..1.0, 12),
        seed in prop::collection::vec(-1.0f64..1.0, 9),
        drop_col in 0usize..4,
    ) {
        let mut m = DMatrix::from_row_slice(3, 4, &entries);
        // force a dependent column half of the time
        if drop_col < 2 {
            let c = m.column(0) * 0.5 + m.column(1) * 2.0;
            m.set_column(2 + drop_col, &c);
        }
        let r = numerical_rank(&m, 1e-8).unwrap().rank;
        let mut swapped = m.clone();
        swapped.swap_columns(0, 3);
        swapped.swap_rows(0, 2);
        prop_assert_eq!(numerical_rank(&swapped, 1e-8).unwrap().rank, r);
        let rotated = rotation(3, &seed) * &m;
        prop_assert_eq!(numerical_rank(&rotated, 1e-8).unwrap().rank, r);
    }

    #[test]
    fn frame_jacobians_match_finite_differences(q in prop::collection::vec(-1.5f64..1.5, 6)) {
        for s in builtins() {
            let x = DVector::from_iterator(s.dim(), q.iter().copied().cycle().take(s.dim()));
            for i in 0..s.frame_size() {
                let jac = s.jacobian(i, &x);
                for c in 0..s.dim() {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += h;
                    xm[c] -= h;
                    let fd = (s.field(i, &xp) - s.field(i, &xm)) / (2.0 * h);
                    let err = (jac.column(c) - &fd).norm();
                    prop_assert!(err <= 1e-5 * (1.0 + fd.norm()), "{} field {i} column {c}: {err}", s.label());
                }
            }
        }
    }

    #[test]
    fn energy_and_vertical_momentum_conserved(
        q in prop::collection::vec(-1.0f64..1.0, 6),
        p in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        for s in builtins() {
            let n = s.dim();
            let init = CotangentState::new(
                DVector::from_iterator(n, q.iter().copied().cycle().take(n)),
                DVector::from_iterator(n, p.iter().copied().cycle().take(n)),
            ).unwrap();
            let tr = integrate_geodesic(&s, &init, 1.0, &rk4()).unwrap();
            let h0 = hamiltonian(&s, &init);
            for st in &tr.states {
                prop_assert!((hamiltonian(&s, st) - h0).abs() < 1e-8);
                for z in (2..n).step_by(3) {
                    prop_assert!((st.p[z] - init.p[z]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_flow_inverts_forward_flow(
        q in prop::collection::vec(-1.0f64..1.0, 3),
        p in prop::collection::vec(-1.0f64..1.0, 3),
        duration in 0.1f64..1.5,
    ) {
        for s in [glued_structure(), heisenberg_structure()] {
            let init = CotangentState::from_slices(&q, &p).unwrap();
            let fwd = flow_endpoint(&s, &init, duration, &rk4()).unwrap();
            let back = flow_endpoint(&s, &fwd, -duration, &rk4()).unwrap();
            prop_assert!((back.to_vector() - init.to_vector()).norm() < 1e-9);
        }
    }

    #[test]
    fn corank_is_nonincreasing(
        x0 in -0.3f64..0.3,
        y0 in -1.2f64..0.5,
        px in -0.5f64..0.5,
        pz in -1.0f64..1.0,
    ) {
        let s = glued_structure();
        let init = CotangentState::from_slices(&[x0, y0, 0.0], &[px, 1.0, pz]).unwrap();
        let tr = integrate_geodesic(&s, &init, 1.5, &rk4()).unwrap();
        let times: Vec<f64> = (0..=6).map(|k| 0.25 * k as f64).collect();
        let prof = corank_profile(&s, &tr, &times, &CorankSettings::default(), &rk4()).unwrap();
        prop_assert!(prof.coranks.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn double_integral_nondecreasing(a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let theta = standard_bump();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f = |t| double_integral_theta(|s| theta.eval(s), t, 1001);
        prop_assert!(f(lo) <= f(hi) + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn branches_coincide_before_and_fan_out_after(alpha in -0.5f64..0.5) {
        prop_assume!(alpha.abs() > 1e-3);
        let spec = BranchFamilySpec::single_direction(line_trace(1.5), 1.0, DVector::from_vec(vec![0.0, 0.0, 1.0]), &[alpha]);
        let tr = &branching_family(&glued_structure(), &spec, 1.0, &rk4()).unwrap()[0];
        for (t, st) in tr.times.iter().zip(&tr.states) {
            if *t <= 1.0 {
                prop_assert!(st.q[0].abs() < 1e-8 && (st.q[1] - (t - 1.0)).abs() < 1e-8);
            } else {
                // the lateral offset starts like -α∫∫θ and vanishes in f64 right after the branch
                prop_assert!(st.q[0] * alpha <= 0.0);
                if *t >= 1.01 {
                    prop_assert!(st.q[0].signum() == -alpha.signum(), "t = {t}, x = {}", st.q[0]);
                }
            }
        }
    }

    #[test]
    fn spray_curves_are_distinct(a in -0.5f64..0.5, b in -0.5f64..0.5) {
        prop_assume!((a - b).abs() > 1e-2);
        let sup = [0.5, 0.75, 1.0]
            .iter()
            .map(|&t| (spray_map(t, a, 1.0, &rk4()).unwrap() - spray_map(t, b, 1.0, &rk4()).unwrap()).norm())
            .fold(0.0, f64::max);
        prop_assert!(sup > 1e-6);
    }

    #[test]
    fn heisenberg_admits_no_abnormal_direction(d in prop::collection::vec(-1.0f64..1.0, 3)) {
        let dir = DVector::from_vec(d);
        prop_assume!(dir.norm() > 1e-3);
        let init = CotangentState::from_slices(&[0.0; 3], &[0.2, 1.0, 0.7]).unwrap();
        let base = integrate_geodesic(&heisenberg_structure(), &init, 2.0, &rk4()).unwrap();
        let spec = BranchFamilySpec::single_direction(base, 1.0, dir, &[0.1]);
        prop_assert!(branching_family(&heisenberg_structure(), &spec, 0.5, &rk4()).is_err());
    }
}
