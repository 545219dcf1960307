//! Load the 24-bus case, build its PTDF, and push the zonal loads through the network.

use adlearn::netcase::{compute_ptdf, parse_case, zonal_load};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/ieee24.json").to_string());
    let case = parse_case(&path)?;
    println!(
        "{}: {} buses, {} generators, {} lines, {} zones",
        case.name,
        case.n_buses(),
        case.n_generators(),
        case.lines.len(),
        case.n_zones()
    );
    for (zone, load) in zonal_load(&case) {
        println!("zone {zone}: load {load:.1} MW");
    }

    let ptdf = compute_ptdf(&case, None)?;
    // Injections: each generator at its share of total demand, minus the bus loads.
    let total: f64 = case.buses.iter().map(|b| b.demand).sum();
    let cap: f64 = case.generators.iter().map(|g| g.capacity).sum();
    let mut p: Vec<f64> = case.buses.iter().map(|b| -b.demand).collect();
    for g in &case.generators {
        p[case.bus_index(g.bus).expect("generator bus")] += g.capacity * total / cap;
    }
    let flows = ptdf.flows(&p);
    let mut loading: Vec<(usize, f64)> = flows
        .iter()
        .zip(&case.lines)
        .enumerate()
        .filter_map(|(l, (f, line))| line.limit.map(|c| (l, f.abs() / c)))
        .collect();
    loading.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("slack bus {}; most loaded lines under a pro-rata dispatch:", ptdf.slack);
    for (l, u) in loading.iter().take(5) {
        let line = &case.lines[*l];
        println!("  {} -> {}: {:.0}% of rating", line.from, line.to, 100.0 * u);
    }
    Ok(())
}
