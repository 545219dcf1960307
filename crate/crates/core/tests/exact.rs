mod common;

use adlearn::datagen::{generate, ArProcessConfig, Dataset};
use adlearn::dispatch::{DispatchModel, DispatchOptions};
use adlearn::exact::{
    build_kkt, export_bigm_mps, root_relaxation, sample_bound, solve_bnb, BigMOptions, BnbOptions, BnbStatus,
    ExactError, PairKind,
};
use adlearn::forecast::{ForecastSpec, ThetaVector, Variant};
use adlearn::lp::{read_mps, write_mps, RowSense};
use adlearn::netcase::{compute_ptdf, SystemCase};
use adlearn::trainer::{train, CostEvaluator, TrainConfig};
use common::case;

fn model(c: &SystemCase) -> DispatchModel {
    DispatchModel::new(c, &compute_ptdf(c, None).unwrap(), DispatchOptions::default()).unwrap()
}

fn data(t: usize, seed: u64) -> Dataset {
    let sigma = ArProcessConfig::sigma_for_cv(6.0, 0.9, 0.4);
    generate(&ArProcessConfig::single(0.6, 0.9, sigma, seed), t).unwrap()
}

fn ls_theta(c: &SystemCase, variant: Variant) -> ThetaVector {
    let long = data(200, 99);
    ForecastSpec::standard(c, &long, variant, &[]).unwrap().ls_baseline(&long, 1.96).unwrap().theta
}

#[test]
fn pairs_cover_every_planning_inequality() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(2, 1);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let inst = build_kkt(&m, &spec, &ds, &ls_theta(&c, Variant::OptOpt), None).unwrap();
    let lp = &inst.planning.lp;
    let rows = lp.senses.iter().filter(|s| **s != RowSense::Eq).count();
    let bounds = lp.lower.iter().filter(|v| v.is_finite()).count() + lp.upper.iter().filter(|v| v.is_finite()).count();
    assert_eq!(inst.len(), 2);
    assert_eq!(inst.n_pairs(), rows + bounds);
    let mut seen = std::collections::BTreeSet::new();
    for p in &inst.planning.pairs {
        assert!(seen.insert(p.kind), "duplicate pair {:?}", p.kind);
        if let PairKind::Row(i) = p.kind {
            assert_ne!(lp.senses[i], RowSense::Eq);
        }
    }
}

#[test]
fn forecast_rows_reproduce_least_squares_predictions() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(6, 3);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let base = ls_theta(&c, Variant::OptOpt);
    let inst = build_kkt(&m, &spec, &ds, &base, None).unwrap();
    let th = base.gather(&spec.trainable_indices());
    for t in 0..ds.len() {
        let p = spec.predict_raw(&base, ds.features(t)).unwrap();
        let mut want = m.expand_demand(ds.bus_ids(), &p.demand).unwrap();
        want.extend(&p.r_up);
        want.extend(&p.r_dn);
        let y = inst.forecast(t, &th);
        assert_eq!(y.len(), want.len());
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{y:?} vs {want:?}");
        }
    }
}

#[test]
fn root_relaxation_bounds_the_heuristic() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(8, 5);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let tr = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
    let inst = build_kkt(&m, &spec, &ds, &tr.ls_theta, None).unwrap();
    let th = tr.theta.gather(&inst.trainable);
    let mut eval = CostEvaluator::new(&m, &spec, &ds, 1).unwrap();
    let costs = eval.sample_costs(&tr.theta).unwrap();
    for t in 0..inst.len() {
        // Forecast pinned to the trained point: bounds the sample's cost there.
        let y = inst.forecast(t, &th);
        let root = root_relaxation(&inst, t, &y, &y).unwrap();
        let exact = sample_bound(&inst, t, &y, &y, 100_000).unwrap();
        assert!(exact.exact);
        assert!(root <= exact.value + 1e-7, "t={t}: {root} > {}", exact.value);
        assert!((exact.value - costs[t]).abs() <= 1e-6 * (1.0 + costs[t]), "t={t}: {} vs {}", exact.value, costs[t]);
        assert!(exact.max_bound_drop <= 1e-9);
    }
}

#[test]
fn oversized_instance_is_rejected() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(400, 2);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    match build_kkt(&m, &spec, &ds, &ls_theta(&c, Variant::OptOpt), None) {
        Err(ExactError::TooLarge { samples: 400, .. }) => {}
        other => panic!("expected TooLarge, got {:?}", other.err()),
    }
    let spec = ForecastSpec::standard(&c, &ds.head(4).unwrap(), Variant::LsEx, &[]).unwrap();
    let ds4 = ds.head(4).unwrap();
    assert!(matches!(
        build_kkt(&m, &spec, &ds4, &ls_theta(&c, Variant::LsEx), None),
        Err(ExactError::NothingToTrain)
    ));
}

/// Dense grid over `LS ± 1` at step 0.01 on the two demand coefficients.
#[test]
fn two_sample_optimum_matches_grid_search() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(2, 11);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptEx, &[]).unwrap();
    let base = ls_theta(&c, Variant::OptEx);
    let inst = build_kkt(&m, &spec, &ds, &base, None).unwrap();
    assert_eq!(inst.dim(), 2);
    let ls = base.gather(&inst.trainable);
    let bx: Vec<(f64, f64)> = ls.iter().map(|v| (v - 1.0, v + 1.0)).collect();
    let opts = BnbOptions { gap_tol: 0.0, theta_box: Some(bx), ..Default::default() };
    let r = solve_bnb(&inst, &opts, &[base.clone()]).unwrap();
    assert_eq!(r.status, BnbStatus::Optimal);
    assert!(r.gap <= 1e-9, "gap {}", r.gap);

    let mut eval = CostEvaluator::new(&m, &spec, &ds, 1).unwrap();
    let mut grid_min = f64::INFINITY;
    for i in 0..=200 {
        for j in 0..=200 {
            let th = [ls[0] - 1.0 + 0.01 * i as f64, ls[1] - 1.0 + 0.01 * j as f64];
            grid_min = grid_min.min(eval.cost(&inst.full_theta(&th)).unwrap());
        }
    }
    // Cost is Lipschitz in θ with constant ≤ λ_LS·max(1, |lag|); half a step per axis.
    let lag = (0..ds.len()).map(|t| ds.features(t).iter().fold(1.0f64, |a, v| a.max(v.abs()))).fold(1.0, f64::max);
    let resolution = c.penalties.load_shed * 2.0 * lag * 0.005;
    assert!(r.objective <= grid_min + 1e-9, "{} > grid {grid_min}", r.objective);
    assert!(grid_min - r.objective <= resolution, "{} vs grid {grid_min}", r.objective);
    assert!((eval.cost(&r.theta).unwrap() - r.objective).abs() <= 1e-5);
    assert!(r.complementarity <= 1e-7, "{}", r.complementarity);
}

#[test]
fn zero_gap_search_terminates_on_two_samples() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(2, 4);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let base = ls_theta(&c, Variant::OptOpt);
    let inst = build_kkt(&m, &spec, &ds, &base, None).unwrap();
    let bx = inst.theta_box_around(&[base.clone()], 0.5);
    let opts = BnbOptions { gap_tol: 0.0, abs_tol: 0.0, theta_box: Some(bx), ..Default::default() };
    let r = solve_bnb(&inst, &opts, &[base]).unwrap();
    assert_eq!(r.status, BnbStatus::Optimal);
    assert!(r.nodes < opts.node_limit);
    assert!(r.objective - r.lower_bound <= 0.0);
}

#[test]
fn exact_never_exceeds_heuristic_and_reproduces_objective() {
    let c = case("singlebus");
    let m = model(&c);
    for seed in [1, 2] {
        let ds = data(6, seed);
        let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
        let tr = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
        let inst = build_kkt(&m, &spec, &ds, &tr.ls_theta, None).unwrap();
        let bx = inst.theta_box_around(&[tr.ls_theta.clone(), tr.theta.clone()], 0.5);
        let opts = BnbOptions { theta_box: Some(bx), ..Default::default() };
        let r = solve_bnb(&inst, &opts, &[tr.ls_theta.clone(), tr.theta.clone()]).unwrap();
        assert_eq!(r.status, BnbStatus::Optimal);
        assert!(r.gap <= 1e-3);
        assert!(r.objective <= tr.cost + 1e-6, "seed {seed}: {} > {}", r.objective, tr.cost);
        let mut eval = CostEvaluator::new(&m, &spec, &ds, 1).unwrap();
        assert!((eval.cost(&r.theta).unwrap() - r.objective).abs() <= 1e-5);
        assert!(r.complementarity <= 1e-7, "{}", r.complementarity);
        assert!(r.max_bound_drop <= 1e-9, "{}", r.max_bound_drop);
    }
}

#[test]
fn bad_box_is_rejected() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(3, 1);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptEx, &[]).unwrap();
    let base = ls_theta(&c, Variant::OptEx);
    let inst = build_kkt(&m, &spec, &ds, &base, None).unwrap();
    for bx in [vec![(0.0, 1.0)], vec![(1.0, 0.0), (0.0, 1.0)], vec![(f64::NEG_INFINITY, 0.0), (0.0, 1.0)]] {
        let opts = BnbOptions { theta_box: Some(bx), ..Default::default() };
        assert!(matches!(solve_bnb(&inst, &opts, &[]), Err(ExactError::Box(_))));
    }
}

fn export_case(caps: bool) -> Result<(usize, usize, adlearn::exact::BigMExport, Vec<f64>), ExactError> {
    let c = case("singlebus");
    let m = model(&c);
    let ds = data(2, 8);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let base = ls_theta(&c, Variant::OptOpt);
    let inst = build_kkt(&m, &spec, &ds, &base, Some(1e3))?;
    let bx = inst.theta_box_around(&[base.clone()], 0.5);
    let opts = BigMOptions {
        theta_box: Some(bx),
        primal_cap: caps.then_some(1e4),
        dual_cap: caps.then_some(1e3),
        ..Default::default()
    };
    let ex = export_bigm_mps(&inst, &opts)?;
    let point = ex.embed(&inst, &base.gather(&inst.trainable))?;
    Ok((inst.n_pairs(), inst.len(), ex, point))
}

#[test]
fn bigm_export_round_trips_and_embeds_feasibly() {
    let (pairs, samples, ex, point) = export_case(true).unwrap();
    let lp = &ex.model.lp;
    assert_eq!(ex.pairs.len(), pairs * samples);
    assert_eq!(ex.model.integer.iter().filter(|b| **b).count(), pairs * samples);
    let back = read_mps(&write_mps(&ex.model).unwrap()).unwrap();
    assert_eq!(back.lp.n_rows(), lp.n_rows());
    assert_eq!(back.lp.n_cols(), lp.n_cols());
    assert_eq!(back.integer, ex.model.integer);

    for (j, v) in point.iter().enumerate() {
        assert!(*v >= lp.lower[j] - 1e-7 && *v <= lp.upper[j] + 1e-7, "column {j}: {v}");
        if ex.model.integer[j] {
            assert!(*v == 0.0 || *v == 1.0);
        }
    }
    for (i, a) in lp.activities(&point).iter().enumerate() {
        let tol = 1e-6 * (1.0 + lp.rhs[i].abs());
        let ok = match lp.senses[i] {
            RowSense::Le => *a <= lp.rhs[i] + tol,
            RowSense::Ge => *a >= lp.rhs[i] - tol,
            RowSense::Eq => (a - lp.rhs[i]).abs() <= tol,
        };
        assert!(ok, "row {i}: {a} {:?} {}", lp.senses[i], lp.rhs[i]);
    }
}

/// Capacity row `g + r_up ≤ G̃`: slack ≤ G̃ since g, r_up ≥ 0, and never above `G̃ + r̄_up`.
#[test]
fn capacity_row_bigm_is_within_interval_bound() {
    let c = case("singlebus");
    let (_, _, ex, _) = export_case(true).unwrap();
    let mut checked = 0;
    for (i, g) in c.generators.iter().enumerate() {
        let cap = c.tilde.capacity[i];
        let name = format!("row cap_{}", g.id);
        for p in ex.pairs.iter().filter(|p| p.pair == name) {
            assert!(p.primal <= cap + g.rbar_up + 1e-9, "{}: {} > {}", p.pair, p.primal, cap + g.rbar_up);
            checked += 1;
        }
    }
    assert!(checked > 0, "no capacity pairs among {:?}", ex.pairs.iter().map(|p| &p.pair).take(20).collect::<Vec<_>>());
}

#[test]
fn uncapped_export_names_the_unbounded_pair() {
    match export_case(false) {
        Err(ExactError::UnboundedBigM { pair }) => assert!(!pair.is_empty()),
        other => panic!("expected UnboundedBigM, got {:?}", other.map(|r| r.0)),
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig { cases: 6, ..Default::default() })]

    /// Incumbents satisfy complementarity, bounds never drop, and exact ≤ heuristic.
    #[test]
    fn search_invariants_hold(seed in 20u64..10_000, t in 3usize..6) {
        let c = case("singlebus");
        let m = model(&c);
        let ds = data(t, seed);
        let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
        let tr = train(&TrainConfig::default(), &spec, &m, &ds).unwrap();
        let inst = build_kkt(&m, &spec, &ds, &tr.ls_theta, None).unwrap();
        let bx = inst.theta_box_around(&[tr.ls_theta.clone(), tr.theta.clone()], 0.5);
        let opts = BnbOptions { theta_box: Some(bx), ..Default::default() };
        let r = solve_bnb(&inst, &opts, &[tr.ls_theta.clone(), tr.theta.clone()]).unwrap();
        proptest::prop_assert!(r.complementarity <= 1e-7);
        proptest::prop_assert!(r.max_bound_drop <= 1e-9);
        proptest::prop_assert!(r.objective <= tr.cost + 1e-6);
        proptest::prop_assert!(r.lower_bound <= r.objective);
    }
}
