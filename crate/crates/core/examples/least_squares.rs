//! Least-squares baseline: AR(1) demand fit plus the exogenous reserve rule
//! `R = z·σ̂`, and the forecasts it produces.

use adlearn::datagen::{generate, ArProcessConfig};
use adlearn::forecast::{ForecastSpec, Variant, DEFAULT_Z};
use adlearn::netcase::parse_case;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = parse_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/singlebus.json"))?;
    let ds = generate(&ArProcessConfig::for_case(&case, 0.9, 0.4, 3), 1000)?;
    let spec = ForecastSpec::standard(&case, &ds, Variant::OptOpt, &[])?;
    let fit = spec.ls_baseline(&ds, DEFAULT_Z)?;
    println!("residual std per bus: {:?}", fit.residual_std);
    for (block, coefs) in spec.unpack(&fit.theta)? {
        println!("{block:>8}: {coefs:?}");
    }
    println!("trainable coordinates under opt-opt: {:?}", spec.trainable_indices());
    for t in 0..3 {
        let p = spec.predict(&fit.theta, ds.features(t))?;
        println!(
            "t={t}: lagged {:?} -> forecast {:.3}, realized {:.3}, R_up {:.3}, R_dn {:.3}",
            ds.features(t),
            p.demand[0],
            ds.demand(t)[0],
            p.r_up[0],
            p.r_dn[0]
        );
    }
    Ok(())
}
