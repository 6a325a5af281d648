use byzsgd_core::attacks::{self, AttackContext, AttackKind, AttackSpec};
use byzsgd_core::linalg;
use byzsgd_core::model::{self, DomainSpec};
use byzsgd_core::rge::{self, saddle, GradientMatrix};
use byzsgd_core::seed::{stream, StreamTag};
use proptest::prelude::*;

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, dim)
}

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..5, 4usize..14).prop_flat_map(|(d, m)| prop::collection::vec(vec_strategy(d), m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_idempotent_and_nonexpansive(x in vec_strategy(4), y in vec_strategy(4), r in 0.1..30.0f64) {
        let dom = DomainSpec::ball(r);
        let px = model::project(&x, &dom);
        let py = model::project(&y, &dom);
        prop_assert!(linalg::norm(&px) <= r * (1.0 + 1e-12));
        let ppx = model::project(&px, &dom);
        prop_assert!(linalg::dist(&ppx, &px) <= 1e-12 * (1.0 + r));
        prop_assert!(linalg::dist(&px, &py) <= linalg::dist(&x, &y) + 1e-9);
    }

    #[test]
    fn column_fit_feasible(s in prop::collection::vec(-10.0..10.0f64, 1..12), t in -15.0..15.0f64, slack in 0.0..1.0f64) {
        let n = s.len();
        let cap = (1.0 / n as f64) + slack * (1.0 - 1.0 / n as f64);
        let (w, fitted) = saddle::column_fit(&s, t, cap).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x >= -1e-15 && x <= cap + 1e-12));
        prop_assert!((linalg::dot(&s, &w) - fitted).abs() < 1e-9 * (1.0 + t.abs()));
    }

    #[test]
    fn saddle_solution_invariants(cols in matrix_strategy(), eps in 0.0..0.25f64) {
        let m = cols.len();
        let g = GradientMatrix::from_columns(&cols).unwrap();
        let cap = rge::weight_cap(1.0 - eps, m);
        let active: Vec<usize> = (0..m).collect();
        let c = vec![1.0; m];
        let sol = saddle::solve_saddle(&g, &active, &c, cap).unwrap();
        for w in &sol.weights {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x >= -1e-15 && x <= cap + 1e-12));
        }
        prop_assert!((linalg::norm(&sol.direction) - 1.0).abs() < 1e-9);
        let phi: f64 = sol.tau.iter().sum();
        prop_assert!((phi - sol.phi).abs() <= 1e-6 * (1.0 + phi));
        prop_assert!(sol.tau.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn filter_structure(cols in matrix_strategy(), eps in 0.0..0.25f64, s0 in 0.0..200.0f64) {
        let m = cols.len();
        let g = GradientMatrix::from_columns(&cols).unwrap();
        match rge::estimate(&g, s0, eps) {
            Ok((ghat, report)) => {
                prop_assert!(rge::check_report_invariants(&report, m).is_ok(), "{:?}", rge::check_report_invariants(&report, m));
                prop_assert_eq!(ghat, g.mean_of(&report.active_indices));
                prop_assert_eq!(report.phi_trace.len(), report.rounds + 1);
            }
            Err(e) => prop_assert!(matches!(
                e,
                byzsgd_core::Error::Infeasible { .. } | byzsgd_core::Error::FilterCollapsed { .. }
            ), "{e:?}"),
        }
    }

    #[test]
    fn identical_columns_exact(col in vec_strategy(3), m in 2usize..12, eps in 0.0..0.25f64) {
        let g = GradientMatrix::from_columns(&vec![col.clone(); m]).unwrap();
        let (ghat, report) = rge::estimate(&g, 0.0, eps).unwrap();
        prop_assert_eq!(report.rounds, 0);
        prop_assert!(linalg::dist(&ghat, &col) <= 1e-12 * (1.0 + linalg::norm(&col)));
    }

    #[test]
    fn attacks_leave_honest_columns(cols in matrix_strategy(), seed in any::<u64>(), round in 0u64..50, mobile in any::<bool>()) {
        let m = cols.len();
        let g = GradientMatrix::from_columns(&cols).unwrap();
        let kinds = [
            AttackKind::GaussianNoise { scale: 3.0 },
            AttackKind::SignFlip { scale: 2.0 },
            AttackKind::Constant { vector: vec![5.0] },
            AttackKind::OmniscientShift { scale: 10.0 },
        ];
        for kind in kinds {
            let spec = AttackSpec { kind, mobile, eps: 0.3 };
            let corrupt = attacks::choose_corrupt_set(seed, round, m, &spec);
            prop_assert_eq!(corrupt.len(), attacks::corrupt_count(0.3, m));
            let honest: Vec<usize> = (0..m).filter(|i| !corrupt.contains(i)).collect();
            let mean = g.mean_of(&honest);
            let ctx = AttackContext { round, honest_mean: &mean };
            let mut rng = stream(seed, StreamTag::Adversary, round, 1);
            let out = attacks::apply_attack(&mut rng, &spec, &g, &corrupt, &ctx).unwrap();
            for &i in &honest {
                prop_assert_eq!(out.column(i), g.column(i));
            }
        }
    }
}
