mod common;

use adlearn::datagen::{generate, ArProcessConfig, Dataset};
use adlearn::dispatch::{DispatchModel, DispatchOptions};
use adlearn::forecast::{ForecastSpec, Variant};
use adlearn::netcase::{compute_ptdf, SystemCase};
use adlearn::trainer::{
    cost, nelder_mead, simplex_init, train, CostEvaluator, Init, NelderMeadOptions, Termination, TrainConfig,
};
use common::case;
use proptest::prelude::*;

fn model(c: &SystemCase) -> DispatchModel {
    DispatchModel::new(c, &compute_ptdf(c, None).unwrap(), DispatchOptions::default()).unwrap()
}

fn single_bus_data(t: usize, seed: u64) -> Dataset {
    let sigma = ArProcessConfig::sigma_for_cv(6.0, 0.9, 0.4);
    generate(&ArProcessConfig::single(0.6, 0.9, sigma, seed), t).unwrap()
}

fn steady_state(theta: &[f64]) -> f64 {
    theta[0] / (1.0 - theta[1])
}

#[test]
fn simplex_init_examples() {
    let s = simplex_init(&[0.6, 0.9]);
    assert_eq!(s.len(), 3);
    assert_eq!(s[0], vec![0.6, 0.9]);
    assert!((s[1][0] - 0.63).abs() < 1e-15 && s[1][1] == 0.9);
    assert!(s[2][0] == 0.6 && (s[2][1] - 0.945).abs() < 1e-15);

    let z = simplex_init(&[0.0; 3]);
    for (i, v) in z.iter().enumerate().skip(1) {
        assert_eq!(v[i - 1], 0.01);
    }
    assert_eq!(simplex_init(&[4.0]).len(), 2);
}

#[test]
fn quadratic_hook_converges() {
    let f = |x: &[f64]| Ok::<_, ()>((x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2));
    let r = nelder_mead(f, &[0.6, 0.9], None, &NelderMeadOptions::default()).unwrap();
    assert_eq!(r.termination, Termination::Converged);
    assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] + 2.0).abs() < 1e-4, "{:?}", r.x);
    assert!(r.trajectory.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn box_projection_holds() {
    let f = |x: &[f64]| Ok::<_, ()>(x[0]);
    let opts = NelderMeadOptions { bound: 5.0, ..Default::default() };
    let r = nelder_mead(f, &[0.0], None, &opts).unwrap();
    assert!((r.x[0] + 5.0).abs() < 1e-6, "{:?}", r.x);
}

#[test]
fn iteration_limit_is_reported() {
    let f = |x: &[f64]| Ok::<_, ()>(x.iter().map(|v| v * v).sum());
    let opts = NelderMeadOptions { max_iters: 3, ..Default::default() };
    let r = nelder_mead(f, &[5.0, 5.0], None, &opts).unwrap();
    assert_eq!(r.termination, Termination::IterationLimit);
    assert_eq!(r.iterations, 3);
    assert_eq!(r.trajectory.len(), 4);
}

#[test]
fn noiseless_cost_is_the_deterministic_dispatch_cost() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = generate(&ArProcessConfig::single(0.6, 0.9, 0.0, 1), 20).unwrap();
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let theta = spec.from_values(vec![0.6, 0.9, 1.0, 1.0]).unwrap();
    // g = (5, 1) at costs (1, 2); up reserve on unit 2 at 0.6, down on unit 1 at 0.3.
    let v = cost(&theta, &m, &spec, &ds).unwrap();
    assert!((v - 7.9).abs() < 1e-9, "{v}");
}

#[test]
fn ls_ex_training_is_a_no_op() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_bus_data(60, 3);
    let spec = ForecastSpec::standard(&c, &ds, Variant::LsEx, &[]).unwrap();
    let r = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
    assert_eq!(r.termination, Termination::NothingToTrain);
    assert_eq!(r.theta, r.ls_theta);
    assert_eq!(r.cost, r.ls_cost);
    let again = cost(&r.ls_theta, &m, &spec, &ds).unwrap();
    assert_eq!(again, r.ls_cost);
}

#[test]
fn higher_shed_price_never_lowers_cost() {
    let c = case("singlebus");
    let ds = single_bus_data(80, 5);
    let spec = ForecastSpec::standard(&c, &ds, Variant::LsEx, &[]).unwrap();
    let theta = spec.ls_baseline(&ds, 1.96).unwrap().theta;
    let base = cost(&theta, &model(&c), &spec, &ds).unwrap();
    let dear = c.with_penalties(2.0 * c.penalties.load_shed, c.penalties.spill).unwrap();
    let higher = cost(&theta, &model(&dear), &spec, &ds).unwrap();
    assert!(higher >= base - 1e-9, "{higher} < {base}");
}

#[test]
fn opt_opt_dominates_ls_ex_in_sample() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_bus_data(50, 11);
    let ls_spec = ForecastSpec::standard(&c, &ds, Variant::LsEx, &[]).unwrap();
    let ls = train(&TrainConfig::default(), &ls_spec, &m, &ds).unwrap();
    for variant in [Variant::OptOpt, Variant::LsOpt, Variant::OptEx] {
        let spec = ForecastSpec::standard(&c, &ds, variant, &[]).unwrap();
        let r = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
        assert!(r.cost <= ls.cost + 1e-9, "{variant:?}: {} > {}", r.cost, ls.cost);
        assert!(r.cost <= r.initial_cost);
        assert!(r.trajectory.windows(2).all(|w| w[1] <= w[0]));
        let fixed: Vec<usize> = (0..spec.dim()).filter(|i| !spec.trainable_indices().contains(i)).collect();
        for i in fixed {
            assert_eq!(r.theta.values[i], r.ls_theta.values[i], "{variant:?} moved fixed coefficient {i}");
        }
        let check = CostEvaluator::new(&m, &spec, &ds, 1).unwrap().cost(&r.theta).unwrap();
        assert!((check - r.cost).abs() < 1e-9, "{variant:?}: cold {check} vs trained {}", r.cost);
    }
}

#[test]
fn training_is_deterministic_across_worker_counts() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_bus_data(40, 2);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let one = train(&TrainConfig { jobs: 1, ..Default::default() }, &spec, &m, &ds).unwrap();
    let four = train(&TrainConfig { jobs: 4, ..Default::default() }, &spec, &m, &ds).unwrap();
    assert_eq!(one, four);
}

#[test]
fn given_and_zero_initializations() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_bus_data(40, 4);
    let spec = ForecastSpec::standard(&c, &ds, Variant::LsOpt, &[]).unwrap();
    let zeros = TrainConfig { init: Init::Zeros, ..Default::default() };
    let r = train(&zeros, &spec, &m, &ds).unwrap();
    assert!(r.cost <= r.initial_cost);
    assert_eq!(r.theta.values[..2], r.ls_theta.values[..2]);

    let given = TrainConfig { init: Init::Given(vec![0.6, 0.9, 2.0, 2.0]), ..Default::default() };
    let r = train(&given, &spec, &m, &ds).unwrap();
    assert_eq!(r.theta.values[..2], [0.6, 0.9]);

    let bad = TrainConfig { init: Init::Given(vec![1.0]), ..Default::default() };
    assert!(train(&bad, &spec, &m, &ds).is_err());
    let bad = TrainConfig { nelder_mead: NelderMeadOptions { shrink: 1.5, ..Default::default() }, ..Default::default() };
    assert!(train(&bad, &spec, &m, &ds).is_err());
}

#[test]
fn trajectory_csv_has_header() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_bus_data(30, 8);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptEx, &[]).unwrap();
    let r = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
    let csv = r.trajectory_csv();
    assert!(csv.starts_with("iter,cost\n0,"));
    assert_eq!(csv.lines().count(), r.trajectory.len() + 1);
    let back: adlearn::trainer::TrainResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn expensive_shedding_biases_the_forecast_upward() {
    let c = case("singlebus");
    let m = model(&c);
    let mut upward = 0;
    for seed in 0..10 {
        let ds = single_bus_data(200, 100 + seed);
        let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
        let r = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
        if steady_state(&r.theta.values) >= steady_state(&r.ls_theta.values) {
            upward += 1;
        }
    }
    assert!(upward >= 6, "upward bias on only {upward}/10 seeds");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn best_vertex_is_monotone_on_random_quadratics(
        a in prop::collection::vec(0.1f64..5.0, 3),
        c in prop::collection::vec(-10.0f64..10.0, 3),
        x0 in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let f = |x: &[f64]| Ok::<_, ()>((0..3).map(|i| a[i] * (x[i] - c[i]).powi(2)).sum::<f64>());
        let r = nelder_mead(f, &x0, None, &NelderMeadOptions::default()).unwrap();
        prop_assert!(r.trajectory.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.fx <= f(&x0).unwrap());
        prop_assert!(r.fx < 1e-6, "{}", r.fx);
    }

    #[test]
    fn in_sample_dominance_on_random_data(seed in 0u64..1000) {
        let c = case("singlebus");
        let m = model(&c);
        let ds = single_bus_data(30, seed);
        let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
        let r = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
        prop_assert!(r.cost <= r.ls_cost);
    }
}
