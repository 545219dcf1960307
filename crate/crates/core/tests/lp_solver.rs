use adlearn::lp::{
    extract_duals, read_mps, solve, write_mps, Basis, DenseMatrix, LinearProgram, LpError, LpStatus, MpsModel,
    PerturbationPolicy, RowSense, WarmStart,
};
use adlearn::lp::{solve_with, SolverOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{random_lp, vertex_oracle};

const NONE: PerturbationPolicy = PerturbationPolicy::none();

fn check_optimality(lp: &LinearProgram, sol: &adlearn::lp::LpSolution) {
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!(lp.max_violation(&sol.x) <= 1e-7, "primal residual {}", lp.max_violation(&sol.x));
    let (pi, d) = extract_duals(sol).unwrap();
    for (i, p) in pi.iter().enumerate() {
        match lp.senses[i] {
            RowSense::Ge => assert!(*p >= -1e-7, "ge dual {p}"),
            RowSense::Le => assert!(*p <= 1e-7, "le dual {p}"),
            RowSense::Eq => {}
        }
    }
    // Strong duality: c'x = b'π + Σ d_j x_j, with d_j of the right sign at the bound.
    let bound_part: f64 = (0..lp.n_cols()).map(|j| d[j] * sol.x[j]).sum();
    let dual_obj: f64 = lp.rhs.iter().zip(&pi).map(|(b, p)| b * p).sum::<f64>() + bound_part;
    assert!((sol.objective - dual_obj).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
    let act = lp.activities(&sol.x);
    for i in 0..lp.n_rows() {
        assert!((pi[i] * (act[i] - lp.rhs[i])).abs() <= 1e-6, "row complementarity");
    }
    for j in 0..lp.n_cols() {
        let at_lo = (sol.x[j] - lp.lower[j]).abs() <= 1e-7;
        let at_hi = (sol.x[j] - lp.upper[j]).abs() <= 1e-7;
        if !at_lo && !at_hi {
            assert!(d[j].abs() <= 1e-6, "interior column with reduced cost {}", d[j]);
        }
    }
}

#[test]
fn single_variable_upper_bound() {
    let lp = LinearProgram::from_rows(vec![-1.0], vec![vec![1.0]], vec![RowSense::Le], vec![3.0]).unwrap();
    let sol = solve(&lp, None, &NONE).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.x[0] - 3.0).abs() < 1e-12);
    assert!((sol.objective + 3.0).abs() < 1e-12);
}

#[test]
fn contradictory_rows_are_infeasible() {
    let lp = LinearProgram::from_rows(
        vec![1.0],
        vec![vec![1.0], vec![1.0]],
        vec![RowSense::Ge, RowSense::Le],
        vec![1.0, 0.0],
    )
    .unwrap();
    assert_eq!(solve(&lp, None, &NONE).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn open_ray_is_unbounded() {
    let lp = LinearProgram::from_rows(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![RowSense::Le], vec![1.0]).unwrap();
    assert_eq!(solve(&lp, None, &NONE).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn binding_bound_shadow_prices() {
    let lp = LinearProgram::from_rows(vec![1.0], vec![vec![1.0]], vec![RowSense::Ge], vec![1.0]).unwrap();
    let (pi, _) = extract_duals(&solve(&lp, None, &NONE).unwrap()).unwrap();
    assert!((pi[0] - 1.0).abs() < 1e-12);
    let lp = LinearProgram::from_rows(vec![2.0], vec![vec![1.0]], vec![RowSense::Ge], vec![3.0]).unwrap();
    let (pi, _) = extract_duals(&solve(&lp, None, &NONE).unwrap()).unwrap();
    assert!((pi[0] - 2.0).abs() < 1e-12);
}

#[test]
fn duals_of_infeasible_solution_are_refused() {
    let lp = LinearProgram::from_rows(
        vec![1.0],
        vec![vec![1.0], vec![1.0]],
        vec![RowSense::Ge, RowSense::Le],
        vec![1.0, 0.0],
    )
    .unwrap();
    let sol = solve(&lp, None, &NONE).unwrap();
    assert!(matches!(extract_duals(&sol), Err(LpError::NotOptimal(LpStatus::Infeasible))));
}

#[test]
fn malformed_programs_are_rejected() {
    let bad = LinearProgram::new(
        DenseMatrix::new(1, 1, vec![1.0]),
        vec![1.0],
        vec![RowSense::Le],
        vec![1.0],
        vec![2.0],
        vec![1.0],
    );
    assert!(matches!(bad, Err(LpError::Malformed(_))));
    let bad = LinearProgram::from_rows(vec![1.0, 2.0], vec![vec![1.0]], vec![RowSense::Le], vec![1.0]);
    assert!(matches!(bad, Err(LpError::Malformed(_))));
}

#[test]
fn iteration_limit_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lp = loop {
        let lp = random_lp(&mut rng, 8, 6);
        if solve(&lp, None, &NONE).unwrap().iterations > 2 {
            break lp;
        }
    };
    let opts = adlearn::lp::SolverOptions { max_iters: 1, ..Default::default() };
    assert!(matches!(
        adlearn::lp::solve_with(&lp, None, &NONE, &opts),
        Err(LpError::IterationLimit(1))
    ));
}

#[test]
fn random_programs_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut feasible = 0;
    for k in 0..200 {
        let lp = random_lp(&mut rng, 8, 6);
        let sol = solve(&lp, None, &NONE).unwrap();
        match vertex_oracle(&lp) {
            Some(v) => {
                feasible += 1;
                assert_eq!(sol.status, LpStatus::Optimal, "instance {k}");
                assert!((sol.objective - v).abs() <= 1e-8 * (1.0 + v.abs()), "instance {k}: {} vs {v}", sol.objective);
                check_optimality(&lp, &sol);
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible, "instance {k}"),
        }
    }
    assert!(feasible > 100);
}

#[test]
fn warm_restarts_agree_with_cold_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = loop {
        let lp = random_lp(&mut rng, 8, 6);
        if solve(&lp, None, &NONE).unwrap().is_optimal() {
            break lp;
        }
    };
    let pert = PerturbationPolicy::default();
    let mut ws = WarmStart::new();
    let mut prev: Option<Basis> = None;
    for _ in 0..100 {
        let mut lp = base.clone();
        for b in lp.rhs.iter_mut() {
            *b += rng.random_range(-0.5..0.5);
        }
        let cold = solve(&lp, None, &pert).unwrap();
        let warm = ws.solve(&lp, &pert).unwrap();
        let from_basis = solve(&lp, prev.as_ref(), &pert).unwrap();
        assert_eq!(cold.status, warm.status);
        assert_eq!(cold.status, from_basis.status);
        if cold.is_optimal() {
            assert!((cold.objective - warm.objective).abs() <= 1e-8);
            assert!((cold.objective - from_basis.objective).abs() <= 1e-8);
            prev = cold.basis.clone();
        }
    }
    assert!(ws.hits() >= 99);
}

#[test]
fn permuted_columns_keep_the_optimal_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pert = PerturbationPolicy::default();
    for _ in 0..50 {
        let lp = random_lp(&mut rng, 8, 6);
        let (m, n) = (lp.n_rows(), lp.n_cols());
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for (k, &j) in perm.iter().enumerate() {
                data[i * n + k] = lp.matrix().get(i, j);
            }
        }
        let p = |v: &Vec<f64>| perm.iter().map(|&j| v[j]).collect::<Vec<f64>>();
        let lp2 = LinearProgram::new(
            DenseMatrix::new(m, n, data),
            p(&lp.objective),
            lp.senses.clone(),
            lp.rhs.clone(),
            p(&lp.lower),
            p(&lp.upper),
        )
        .unwrap();
        let a = solve(&lp, None, &pert).unwrap();
        let b = solve(&lp2, None, &pert).unwrap();
        assert_eq!(a.status, b.status);
        if a.is_optimal() {
            assert!((a.objective - b.objective).abs() <= 1e-8);
        }
    }
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let lp = random_lp(&mut rng, 8, 6);
        let a = solve(&lp, None, &PerturbationPolicy::default()).unwrap();
        let b = solve(&lp, None, &PerturbationPolicy::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn mps_round_trip_preserves_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut lp = random_lp(&mut rng, 8, 6);
        lp.lower[0] = f64::NEG_INFINITY;
        let n = lp.n_cols();
        let integer: Vec<bool> = (0..n).map(|j| j % 3 == 1).collect();
        let model = MpsModel { name: "test".into(), lp: lp.clone(), integer: integer.clone() };
        let text = write_mps(&model).unwrap();
        for line in text.lines().filter(|l| l.starts_with("    ")) {
            assert!(line.len() <= 61, "fixed-format line too long: {line:?}");
        }
        let back = read_mps(&text).unwrap();
        assert_eq!(back.lp.n_rows(), lp.n_rows());
        assert_eq!(back.lp.n_cols(), lp.n_cols());
        assert_eq!(back.integer, integer);
        assert_eq!(back.lp.senses, lp.senses);
        // Twelve-character numbers carry about eight significant digits.
        let coarse = SolverOptions { feas_tol: 1e-7, ..Default::default() };
        let a = solve_with(&lp, None, &NONE, &coarse).unwrap();
        let b = solve_with(&back.lp, None, &NONE, &coarse).unwrap();
        assert_eq!(a.status, b.status);
        if a.is_optimal() {
            assert!((a.objective - b.objective).abs() <= 1e-6 * (1.0 + a.objective.abs()));
        }
    }
    assert!(read_mps("NAME x\nROWS\n N COST\n").is_err());
}

#[test]
fn redundant_equalities_are_handled() {
    // x + y = 2 stated twice, plus x - y = 0.
    let lp = LinearProgram::from_rows(
        vec![1.0, 1.0],
        vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, -1.0]],
        vec![RowSense::Eq, RowSense::Eq, RowSense::Eq],
        vec![2.0, 4.0, 0.0],
    )
    .unwrap();
    let sol = solve(&lp, None, &NONE).unwrap();
    check_optimality(&lp, &sol);
    assert!((sol.x[0] - 1.0).abs() < 1e-9 && (sol.x[1] - 1.0).abs() < 1e-9);
}

#[test]
fn free_columns_enter_in_both_directions() {
    // min x s.t. x >= -4, x free.
    let lp = LinearProgram::new(
        DenseMatrix::new(1, 1, vec![1.0]),
        vec![1.0],
        vec![RowSense::Ge],
        vec![-4.0],
        vec![f64::NEG_INFINITY],
        vec![f64::INFINITY],
    )
    .unwrap();
    let sol = solve(&lp, None, &NONE).unwrap();
    assert!((sol.x[0] + 4.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_solutions_certify_themselves(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = random_lp(&mut rng, 12, 10);
        let sol = solve(&lp, None, &PerturbationPolicy::default()).unwrap();
        if sol.is_optimal() {
            prop_assert!(lp.max_violation(&sol.x) <= 1e-7);
            let unpert = solve(&lp, None, &NONE).unwrap();
            prop_assert!((unpert.objective - sol.objective).abs() <= 1e-5 * (1.0 + sol.objective.abs()));
        }
    }

    #[test]
    fn perturbation_offsets_increase_with_column(n in 1usize..50, eps in 1e-9f64..1e-3) {
        let p = PerturbationPolicy::deterministic(eps);
        for j in 1..n {
            prop_assert!(p.offset(j, n) > p.offset(j - 1, n));
        }
    }
}


#[test]
fn degenerate_programs_terminate_with_certificates() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..30 {
        let (m, n) = (rng.random_range(10..30), rng.random_range(10..40));
        let mut data = Vec::new();
        for _ in 0..m * n {
            data.push(if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-2i32..=2) as f64 });
        }
        let senses: Vec<RowSense> = (0..m).map(|i| if i % 4 == 0 { RowSense::Eq } else { RowSense::Le }).collect();
        let rhs: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.7) { 0.0 } else { 1.0 }).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3i32..=3) as f64).collect();
        let lp = LinearProgram::new(DenseMatrix::new(m, n, data), c, senses, rhs, vec![0.0; n], vec![2.0; n]).unwrap();
        let a = solve(&lp, None, &NONE).unwrap();
        let b = solve(&lp, None, &PerturbationPolicy::default()).unwrap();
        assert_eq!(a.status, b.status);
        if a.is_optimal() {
            check_optimality(&lp, &a);
            assert!((a.objective - b.objective).abs() <= 1e-5);
        }
    }
}
