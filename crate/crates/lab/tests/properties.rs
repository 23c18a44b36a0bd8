use faer::Mat;
use proptest::prelude::*;

use icl_lab::experiments::{aggregate, RunRow};
use icl_lab::io::fmt_f64;
use icl_lab::ridge::{solve_ridge, solve_ridge_via, RidgeProblem, Route, SolverPath};

fn problem() -> impl Strategy<Value = (Mat<f64>, Vec<f64>, f64)> {
    (1usize..12, 1usize..12, 1e-3..10.0f64).prop_flat_map(|(n, p, lambda)| {
        (
            prop::collection::vec(-2.0..2.0f64, n * p),
            prop::collection::vec(-2.0..2.0f64, n),
            Just(lambda),
        )
            .prop_map(move |(xs, y, lambda)| (Mat::from_fn(n, p, |i, j| xs[i * p + j]), y, lambda))
    })
}

fn row(value: f64, model: &str, run: usize, err: f64) -> RunRow {
    RunRow {
        sweep_value: value,
        model: model.into(),
        run_index: run,
        icl_error: err,
        stderr: 0.0,
        null_risk: 0.5,
        solver_path: SolverPath::Primal,
        wall_time_seconds: 0.0,
        dataset_checksum: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn primal_and_dual_agree((x, y, lambda) in problem()) {
        let prob = RidgeProblem::new(x.as_ref(), &y, lambda).unwrap();
        let a = solve_ridge_via(&prob, Route::Primal).unwrap();
        let b = solve_ridge_via(&prob, Route::Dual).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn solution_beats_perturbations((x, y, lambda) in problem(), seed in any::<u64>()) {
        let prob = RidgeProblem::new(x.as_ref(), &y, lambda).unwrap();
        let w = solve_ridge(&prob).unwrap().weights;
        let best = prob.objective(&w);
        prop_assert!(best <= prob.objective(&vec![0.0; w.len()]) + 1e-12);
        let mut s = seed;
        for _ in 0..10 {
            let moved: Vec<f64> = w
                .iter()
                .map(|v| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    v + ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e-3
                })
                .collect();
            prop_assert!(best <= prob.objective(&moved) + 1e-12 * (1.0 + best));
        }
    }

    #[test]
    fn aggregate_ignores_row_order(
        errs in prop::collection::vec(0.0..10.0f64, 12),
        shuffle in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let rows: Vec<RunRow> = errs
            .iter()
            .enumerate()
            .map(|(i, &e)| row((i % 2) as f64, if i % 3 == 0 { "linear" } else { "mlp_relu" }, i, e))
            .collect();
        let permuted: Vec<RunRow> = shuffle.iter().map(|&i| rows[i].clone()).collect();
        prop_assert_eq!(aggregate(&rows), aggregate(&permuted));
    }

    #[test]
    fn csv_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
