//! Generate an AR(1) demand dataset for the single-bus case, save it, and check
//! its sample moments against the stationary ones.

use adlearn::datagen::{generate, ArProcessConfig, Dataset, ExogenousVariance};
use adlearn::netcase::parse_case;

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
    let c = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / n;
    (m, v.sqrt(), c / v)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let case = parse_case(concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/singlebus.json"))?;
    let process = ArProcessConfig::for_case(&case, 0.9, 0.4, 7);
    let p = process.buses[0];
    let ds = generate(&process, 5000)?;
    let (m, s, rho) = moments(&ds.series(0));
    println!("bus {}: φ0 = {:.3}, φ1 = {}, σ = {:.4}", p.bus, p.phi0, p.phi1, p.sigma);
    println!("stationary mean {:.3}, std {:.3}, lag-1 autocorrelation {}", p.mean(), 0.4 * p.mean(), p.phi1);
    println!("sample     mean {m:.3}, std {s:.3}, lag-1 autocorrelation {rho:.3}");

    let path = std::env::temp_dir().join("adlearn_ar_data.csv");
    ds.save(&path)?;
    let back = Dataset::load(&path)?;
    println!("saved {} rows with features {:?} to {}", back.len(), back.feature_names(), path.display());

    let hetero = generate(&process.clone().with_exogenous(ExogenousVariance::default()), 5000)?;
    let e = hetero.feature_column("E").expect("exogenous feature");
    let (em, es, _) = moments(&e);
    println!("heteroscedastic variant: E mean {em:.3}, std {es:.3}");
    Ok(())
}
