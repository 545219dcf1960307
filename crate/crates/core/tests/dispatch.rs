mod common;

use adlearn::datagen::Dataset;
use adlearn::dispatch::{DispatchModel, DispatchOptions, DispatchPlan, SampleCache};
use adlearn::forecast::{ForecastSpec, Variant};
use adlearn::lp::PerturbationPolicy;
use adlearn::netcase::{compute_ptdf, parse_case_str, SystemCase};
use common::{case, planning_value_dual, redispatch_cost, units};
use proptest::prelude::*;

fn model(c: &SystemCase) -> DispatchModel {
    DispatchModel::new(c, &compute_ptdf(c, None).unwrap(), DispatchOptions::default()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn plan_531() -> DispatchPlan {
    DispatchPlan {
        g: vec![5.0, 1.0, 0.0, 0.0],
        r_up: vec![0.0, 1.0, 0.0, 0.0],
        r_dn: vec![1.0, 0.0, 0.0, 0.0],
        objective: 7.9,
        shed: 0.0,
        spill: 0.0,
        shortfall_up: vec![0.0],
        shortfall_dn: vec![0.0],
        basis: None,
    }
}

#[test]
fn single_bus_planning_example() {
    let m = model(&case("singlebus"));
    let p = m.plan(&[6.0], &[1.0], &[1.0], None).unwrap();
    let want = [5.0, 1.0, 0.0, 0.0];
    for i in 0..4 {
        assert!(close(p.g[i], want[i], 1e-9), "{:?}", p.g);
    }
    assert!(close(p.r_up[1], 1.0, 1e-9) && close(p.r_dn[0], 1.0, 1e-9), "{:?} {:?}", p.r_up, p.r_dn);
    assert!(close(p.objective, 7.9, 1e-9), "{}", p.objective);
}

#[test]
fn zero_forecast_plans_nothing() {
    let m = model(&case("singlebus"));
    let p = m.plan(&[0.0], &[0.0], &[0.0], None).unwrap();
    assert!(p.g.iter().all(|g| g.abs() < 1e-12));
    assert!(p.objective.abs() < 1e-12);
}

#[test]
fn excess_reserve_requirement_uses_the_shortfall_column() {
    let c = case("singlebus");
    let m = model(&c);
    let p = m.plan(&[6.0], &[7.0], &[1.0], None).unwrap();
    assert!(close(p.shortfall_up[0], 2.5, 1e-9), "{:?}", p.shortfall_up);
    let want = planning_value_dual(&units(&c), 6.0, 7.0, 1.0, 64.0, 24.0);
    assert!(close(p.objective, want, 1e-8), "{} vs {want}", p.objective);
}

#[test]
fn assessment_examples() {
    let m = model(&case("singlebus"));
    let a = m.assess(&plan_531(), &[6.5], None).unwrap();
    assert!(close(a.cost, 8.9, 1e-9), "{}", a.cost);
    assert!(close(a.g[1], 1.5, 1e-9));
    assert!(a.shed[0].abs() < 1e-12);
    let a = m.assess(&plan_531(), &[7.5], None).unwrap();
    assert!(close(a.cost, 41.9, 1e-9), "{}", a.cost);
    assert!(close(a.shed[0], 0.5, 1e-9));
    assert!(a.binding.iter().any(|s| s == "generator 2 at upper limit"), "{:?}", a.binding);
}

#[test]
fn perfect_forecast_costs_the_schedule() {
    let m = model(&case("singlebus"));
    let mut plan = plan_531();
    plan.r_up = vec![0.0; 4];
    plan.r_dn = vec![0.0; 4];
    let a = m.assess(&plan, &[6.0], None).unwrap();
    assert!(close(a.cost, 5.0 + 2.0, 1e-12));
}

fn single_sample(prev: f64, now: f64) -> Dataset {
    Dataset::new(vec![1], vec!["lag1_1".into()], vec![1, 2], vec![now, now], vec![prev, prev]).unwrap()
}

#[test]
fn evaluate_sample_composes_plan_and_assessment() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_sample(6.0, 6.5);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let theta = spec.from_values(vec![0.6, 0.9, 1.0, 1.0]).unwrap();
    let out = m.evaluate_sample(&spec, &theta, &ds, 0, None).unwrap();
    assert!(close(out.cost, 8.9, 1e-9), "{}", out.cost);

    let neg = spec.from_values(vec![0.6, 0.9, -3.0, -0.5]).unwrap();
    let zero = spec.from_values(vec![0.6, 0.9, 0.0, 0.0]).unwrap();
    let a = m.evaluate_sample(&spec, &neg, &ds, 0, None).unwrap();
    let b = m.evaluate_sample(&spec, &zero, &ds, 0, None).unwrap();
    assert_eq!(a.cost, b.cost);
    assert_eq!(a.plan.g, b.plan.g);
}

#[test]
fn noiseless_population_forecast_matches_perfect_information() {
    let c = case("singlebus");
    let m = model(&c);
    let ds = single_sample(6.0, 6.0);
    let spec = ForecastSpec::standard(&c, &ds, Variant::OptOpt, &[]).unwrap();
    let theta = spec.from_values(vec![0.6, 0.9, 0.0, 0.0]).unwrap();
    let out = m.evaluate_sample(&spec, &theta, &ds, 0, None).unwrap();
    assert!(close(out.cost, m.perfect_information_cost(&[6.0]).unwrap(), 1e-9));
}

#[test]
fn planning_matches_dual_oracle_on_a_grid() {
    let c = case("singlebus");
    let m = model(&c);
    let u = units(&c);
    for (k, d) in [0.0, 2.0, 6.0, 11.0, 16.0].iter().enumerate() {
        for r in [0.0, 0.7, 2.0, 5.0] {
            let rd = [0.3, 1.5, 4.0][k % 3];
            let p = m.plan(&[*d], &[r], &[rd], None).unwrap();
            let want = planning_value_dual(&u, *d, r, rd, 64.0, 24.0);
            assert!(close(p.objective, want, 1e-8), "D̂={d} R=({r},{rd}): {} vs {want}", p.objective);
        }
    }
}

#[test]
fn negative_demand_forecast_is_absorbed() {
    let m = model(&case("singlebus"));
    let p = m.plan(&[-2.0], &[0.0], &[0.0], None).unwrap();
    assert!(close(p.spill, 2.0, 1e-9));
    assert!(close(p.objective, 48.0, 1e-9));
}

#[test]
fn warm_caches_reproduce_cold_costs() {
    let c = case("ieee24");
    let m = model(&c);
    let nb = c.n_buses();
    let nz = c.n_zones();
    let mut cache = SampleCache::new();
    for k in 0..30 {
        let scale = 0.6 + 0.03 * k as f64;
        let d_hat: Vec<f64> = c.buses.iter().map(|b| 0.9 * b.demand * scale).collect();
        let d: Vec<f64> = c.buses.iter().map(|b| 0.9 * b.demand * (1.5 - 0.02 * k as f64)).collect();
        let r = vec![40.0 + k as f64; nz];
        let warm_plan = m.plan(&d_hat, &r, &r, Some(&mut cache.planning)).unwrap();
        let cold_plan = m.plan(&d_hat, &r, &r, None).unwrap();
        assert!(close(warm_plan.objective, cold_plan.objective, 1e-6 * (1.0 + cold_plan.objective.abs())));
        let wa = m.assess(&cold_plan, &d, Some(&mut cache.assessment)).unwrap();
        let ca = m.assess(&cold_plan, &d, None).unwrap();
        assert!(close(wa.cost, ca.cost, 1e-6 * (1.0 + ca.cost.abs())), "{} vs {}", wa.cost, ca.cost);
        assert_eq!(nb, ca.shed.len());
    }
    assert!(cache.planning.hits() >= 29);
}

const TRIANGLE: &str = r#"{
  "buses": [{"id": 1, "demand": 2.0}, {"id": 2, "demand": 3.0}, {"id": 3, "demand": 1.0}],
  "generators": [
    {"id": 1, "bus": 1, "capacity": 5, "cost": 1, "rbar_up": 1.5, "rbar_dn": 1.5, "p_up": 0.3, "p_dn": 0.3, "zone": 1},
    {"id": 2, "bus": 2, "capacity": 5, "cost": 2, "rbar_up": 1.5, "rbar_dn": 1.5, "p_up": 0.6, "p_dn": 0.6, "zone": 1},
    {"id": 3, "bus": 3, "capacity": 2.5, "cost": 4, "rbar_up": 0.75, "rbar_dn": 0.75, "p_up": 1.2, "p_dn": 1.2, "zone": 1},
    {"id": 4, "bus": 3, "capacity": 2.5, "cost": 8, "rbar_up": 0.75, "rbar_dn": 0.75, "p_up": 2.4, "p_dn": 2.4, "zone": 1}
  ],
  "lines": [
    {"id": 1, "from": 1, "to": 2, "reactance": 0.1, "limit": 0.5},
    {"id": 2, "from": 2, "to": 3, "reactance": 0.1, "limit": 0.5},
    {"id": 3, "from": 1, "to": 3, "reactance": 0.1, "limit": 0.5}
  ],
  "zones": [{"id": 1}],
  "penalties": {"load_shed": 64, "spill": 24}
}"#;

#[test]
fn copper_plate_multi_bus_equals_merit_order() {
    let c = parse_case_str(TRIANGLE).unwrap();
    let opts = DispatchOptions { copper_plate: true, ..DispatchOptions::default() };
    let m = DispatchModel::new(&c, &compute_ptdf(&c, None).unwrap(), opts).unwrap();
    let u = units(&c);
    for total in [1.0, 4.0, 6.0, 9.5, 14.0, 17.0] {
        let d_hat = [total * 0.3, total * 0.5, total * 0.2];
        let p = m.plan(&d_hat, &[1.0], &[0.5], None).unwrap();
        let want = planning_value_dual(&u, total, 1.0, 0.5, 64.0, 24.0);
        assert!(close(p.objective, want, 1e-8), "total {total}: {} vs {want}", p.objective);
        let realized = [total * 0.5, total * 0.1, total * 0.4];
        let a = m.assess(&p, &realized, None).unwrap();
        let lo: Vec<f64> = (0..4).map(|i| p.g[i] - p.r_dn[i]).collect();
        let hi: Vec<f64> = (0..4).map(|i| p.g[i] + p.r_up[i]).collect();
        let cost: Vec<f64> = c.generators.iter().map(|g| g.cost).collect();
        let want_a = redispatch_cost(&lo, &hi, &cost, total, 64.0, 24.0) + a.reserve_cost;
        assert!(close(a.cost, want_a, 1e-8), "{} vs {want_a}", a.cost);
    }
}

#[test]
fn network_limits_bind_and_hold() {
    let c = parse_case_str(TRIANGLE).unwrap();
    let ptdf = compute_ptdf(&c, None).unwrap();
    let m = DispatchModel::new(&c, &ptdf, DispatchOptions::default()).unwrap();
    let d = [2.0, 3.0, 1.0];
    let p = m.plan(&d, &[0.0], &[0.0], None).unwrap();
    let a = m.assess(&p, &d, None).unwrap();
    let inc = c.incidence();
    let mut inj = vec![0.0; 3];
    for (i, g) in a.g.iter().enumerate() {
        inj[inc.gen_bus[i]] += g;
    }
    for b in 0..3 {
        inj[b] += a.shed[b] - a.spill[b] - d[b];
    }
    for f in ptdf.flows(&inj) {
        assert!(f.abs() <= 0.5 + 1e-7, "flow {f}");
    }
    let balance: f64 = a.g.iter().sum::<f64>() - a.spill.iter().sum::<f64>() - d.iter().sum::<f64>() + a.shed.iter().sum::<f64>();
    assert!(balance.abs() < 1e-7);
    let copper = DispatchModel::new(&c, &ptdf, DispatchOptions { copper_plate: true, ..Default::default() }).unwrap();
    assert!(copper.plan(&d, &[0.0], &[0.0], None).unwrap().objective < p.objective - 1e-6);
}

#[test]
fn nodal_balance_isolates_buses() {
    let c = parse_case_str(TRIANGLE).unwrap();
    let ptdf = compute_ptdf(&c, None).unwrap();
    let m = DispatchModel::new(&c, &ptdf, DispatchOptions { nodal_balance: true, ..Default::default() }).unwrap();
    let p = m.plan(&[2.0, 3.0, 1.0], &[0.0], &[0.0], None).unwrap();
    assert!(close(p.g[0], 2.0, 1e-9) && close(p.g[1], 3.0, 1e-9) && close(p.g[2], 1.0, 1e-9), "{:?}", p.g);
}

#[test]
fn planning_perturbation_does_not_change_the_value() {
    let c = case("singlebus");
    let ptdf = compute_ptdf(&c, None).unwrap();
    let plain = DispatchModel::new(
        &c,
        &ptdf,
        DispatchOptions { perturbation: PerturbationPolicy::none(), ..Default::default() },
    )
    .unwrap();
    let pert = model(&c);
    for d in [3.0, 6.0, 9.0] {
        let a = plain.plan(&[d], &[1.0], &[1.0], None).unwrap().objective;
        let b = pert.plan(&[d], &[1.0], &[1.0], None).unwrap().objective;
        assert!(close(a, b, 1e-9));
    }
}

fn ieee24() -> &'static (SystemCase, DispatchModel) {
    use std::sync::OnceLock;
    static M: OnceLock<(SystemCase, DispatchModel)> = OnceLock::new();
    M.get_or_init(|| {
        let c = case("ieee24");
        let m = model(&c);
        (c, m)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn complete_recourse_and_perfect_information_bound(
        scale_hat in -0.5f64..2.5,
        scale in 0.0f64..2.5,
        r_up in 0.0f64..400.0,
        r_dn in 0.0f64..400.0,
        tilt in proptest::collection::vec(0.5f64..1.5, 24),
    ) {
        let (c, m) = ieee24();
        let d_hat: Vec<f64> = c.buses.iter().zip(&tilt).map(|(b, t)| b.demand * scale_hat * t).collect();
        let d: Vec<f64> = c.buses.iter().zip(tilt.iter().rev()).map(|(b, t)| b.demand * scale * t).collect();
        let nz = c.n_zones();
        let p = m.plan(&d_hat, &vec![r_up; nz], &vec![r_dn; nz], None).unwrap();
        for i in 0..c.n_generators() {
            prop_assert!(p.g[i] + p.r_up[i] <= c.tilde.capacity[i] + 1e-7);
            prop_assert!(p.g[i] - p.r_dn[i] >= -1e-7);
        }
        let a = m.assess(&p, &d, None).unwrap();
        let pi = m.perfect_information_cost(&d).unwrap();
        prop_assert!(a.cost >= pi - 1e-6 * (1.0 + pi.abs()), "{} < {}", a.cost, pi);
    }

    #[test]
    fn higher_load_shed_price_never_lowers_cost(
        d_hat in 0.0f64..12.0, d in 0.0f64..16.0, r_up in 0.0f64..5.0, r_dn in 0.0f64..5.0, bump in 0.0f64..100.0,
    ) {
        let c = case("singlebus");
        let m = model(&c);
        let p = m.plan(&[d_hat], &[r_up], &[r_dn], None).unwrap();
        let mut c2 = c.clone();
        c2.penalties.load_shed += bump;
        let m2 = model(&c2);
        let a = m.assess(&p, &[d], None).unwrap();
        let b = m2.assess(&p, &[d], None).unwrap();
        prop_assert!(b.cost >= a.cost - 1e-9);
    }

    #[test]
    fn single_bus_assessment_matches_redispatch_oracle(
        d_hat in 0.0f64..15.0, d in 0.0f64..18.0, r_up in 0.0f64..5.0, r_dn in 0.0f64..5.0,
    ) {
        let c = case("singlebus");
        let m = model(&c);
        let p = m.plan(&[d_hat], &[r_up], &[r_dn], None).unwrap();
        let a = m.assess(&p, &[d], None).unwrap();
        let lo: Vec<f64> = (0..4).map(|i| (p.g[i] - p.r_dn[i]).max(0.0)).collect();
        let hi: Vec<f64> = (0..4).map(|i| p.g[i] + p.r_up[i]).collect();
        let want = redispatch_cost(&lo, &hi, &[1.0, 2.0, 4.0, 8.0], d, 64.0, 24.0) + a.reserve_cost;
        prop_assert!((a.cost - want).abs() < 1e-8, "{} vs {}", a.cost, want);
    }
}
