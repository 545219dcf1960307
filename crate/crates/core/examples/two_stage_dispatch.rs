//! Plan energy and reserves against a forecast, then redispatch against the realized
//! demand. Sweeps the realization to show where reserves and load shedding bind.

use adlearn::dispatch::{DispatchModel, DispatchOptions};
use adlearn::netcase::{compute_ptdf, parse_case};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = parse_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/singlebus.json"))?;
    let model = DispatchModel::new(&case, &compute_ptdf(&case, None)?, DispatchOptions::default())?;

    let plan = model.plan(&[6.0], &[1.0], &[1.0], None)?;
    println!("plan: g = {:?}, r_up = {:?}, r_dn = {:?}, cost {:.3}", plan.g, plan.r_up, plan.r_dn, plan.objective);
    println!("{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "demand", "energy", "reserve", "penalty", "total", "perfect");
    for d in [4.0, 5.0, 6.0, 6.5, 7.0, 8.0] {
        let a = model.assess(&plan, &[d], None)?;
        let best = model.perfect_information_cost(&[d])?;
        println!(
            "{d:>8.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            a.energy_cost, a.reserve_cost, a.penalty_cost, a.cost, best
        );
    }
    Ok(())
}
