//! Train every model variant on one single-bus dataset and compare in-sample and
//! out-of-sample costs with the least-squares baseline.

use adlearn::datagen::{generate, ArProcessConfig};
use adlearn::dispatch::{DispatchModel, DispatchOptions};
use adlearn::forecast::{ForecastSpec, Variant};
use adlearn::netcase::{compute_ptdf, parse_case};
use adlearn::trainer::{cost, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let case = parse_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/singlebus.json"))?;
    let model = DispatchModel::new(&case, &compute_ptdf(&case, None)?, DispatchOptions::default())?;
    let train_set = generate(&ArProcessConfig::for_case(&case, 0.9, 0.4, 11), t)?;
    let test_set = generate(&ArProcessConfig::for_case(&case, 0.9, 0.4, 1_000_000), 5000)?;

    println!("{:>8} {:>10} {:>10} {:>10} {:>6}", "variant", "in-sample", "out", "LS out", "iters");
    for v in [Variant::LsEx, Variant::LsOpt, Variant::OptEx, Variant::OptOpt] {
        let spec = ForecastSpec::standard(&case, &train_set, v, &[])?;
        let r = train(&TrainConfig::default(), &spec, &model, &train_set)?;
        let out = cost(&r.theta, &model, &spec, &test_set)?;
        let ls_out = cost(&r.ls_theta, &model, &spec, &test_set)?;
        println!("{:>8} {:>10.4} {:>10.4} {:>10.4} {:>6}", v.name(), r.cost, out, ls_out, r.iterations);
        if v == Variant::OptOpt {
            for (block, coefs) in spec.unpack(&r.theta)? {
                println!("         {block}: {coefs:.3?}");
            }
        }
    }
    Ok(())
}
