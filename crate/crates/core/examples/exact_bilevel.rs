//! Exact estimation on a small single-bus instance: the heuristic seeds the
//! branch-and-bound, which certifies a gap, and the big-M MILP goes to MPS.

use adlearn::datagen::{generate, ArProcessConfig};
use adlearn::dispatch::{DispatchModel, DispatchOptions};
use adlearn::exact::{build_kkt, export_bigm_mps, solve_bnb, BigMOptions, BnbOptions};
use adlearn::forecast::{ForecastSpec, Variant};
use adlearn::lp::write_mps;
use adlearn::netcase::{compute_ptdf, parse_case};
use adlearn::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let case = parse_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/singlebus.json"))?;
    let model = DispatchModel::new(&case, &compute_ptdf(&case, None)?, DispatchOptions::default())?;
    let ds = generate(&ArProcessConfig::for_case(&case, 0.9, 0.4, 5), t)?;
    let spec = ForecastSpec::standard(&case, &ds, Variant::OptOpt, &[])?;
    let heur = train(&TrainConfig::default(), &spec, &model, &ds)?;

    let inst = build_kkt(&model, &spec, &ds, &heur.ls_theta, Some(1000.0))?;
    let anchors = [heur.ls_theta.clone(), heur.theta.clone()];
    let theta_box = inst.theta_box_around(&anchors, 0.5);
    println!("{} samples, {} complementarity pairs, θ box {:.3?}", inst.len(), inst.n_pairs(), theta_box);

    let opts = BnbOptions { theta_box: Some(theta_box.clone()), ..Default::default() };
    let r = solve_bnb(&inst, &opts, &anchors)?;
    println!("heuristic {:.6}, exact {:.6}, bound {:.6}, gap {:.2e}", heur.cost, r.objective, r.lower_bound, r.gap);
    println!("status {:?} after {} nodes; ratio {:.6}", r.status, r.nodes, heur.cost / r.objective);

    let export = export_bigm_mps(&inst, &BigMOptions { theta_box: Some(theta_box), primal_cap: Some(1e4), dual_cap: Some(1000.0), ..Default::default() })?;
    let path = std::env::temp_dir().join("adlearn_exact.mps");
    std::fs::write(&path, write_mps(&export.model)?)?;
    let binaries = export.model.integer.iter().filter(|&&b| b).count();
    println!("big-M MILP with {binaries} binaries written to {}", path.display());
    Ok(())
}
