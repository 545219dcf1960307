//! Bounded LP with duals, warm restart after a right-hand-side change, and an MPS round trip.

use adlearn::lp::{read_mps, solve, write_mps, LpBuilder, MpsModel, PerturbationPolicy, RowSense, WarmStart};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three generators serving a demand of 12 at increasing marginal cost.
    let mut b = LpBuilder::new();
    let g1 = b.add_col("g1", 10.0, 0.0, 5.0);
    let g2 = b.add_col("g2", 20.0, 0.0, 5.0);
    let g3 = b.add_col("g3", 30.0, 0.0, 10.0);
    b.add_row("balance", &[(g1, 1.0), (g2, 1.0), (g3, 1.0)], RowSense::Eq, 12.0);
    b.add_row("g2_g3_cap", &[(g2, 1.0), (g3, 1.0)], RowSense::Le, 8.0);
    let mut lp = b.build()?;

    let sol = solve(&lp, None, &PerturbationPolicy::default())?;
    println!("status {:?}, objective {:.4}, iterations {}", sol.status, sol.objective, sol.iterations);
    println!("x = {:?}", sol.x);
    println!("row duals = {:?}", sol.duals);

    let mut warm = WarmStart::default();
    warm.solve(&lp, &PerturbationPolicy::default())?;
    lp.rhs[0] = 13.0;
    let again = warm.solve(&lp, &PerturbationPolicy::default())?;
    println!("demand 13: objective {:.4} in {} warm iterations", again.objective, again.iterations);

    let text = write_mps(&MpsModel { name: "dispatch".into(), lp: lp.clone(), integer: vec![false; 3] })?;
    let back = read_mps(&text)?;
    let x = solve(&back.lp, None, &PerturbationPolicy::none())?;
    println!("MPS round trip: {} bytes, objective {:.4}", text.len(), x.objective);
    Ok(())
}
