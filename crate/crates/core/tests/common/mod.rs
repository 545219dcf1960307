//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use adlearn::lp::{DenseMatrix, LinearProgram, RowSense};
use adlearn::netcase::{parse_case, SystemCase};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn case(name: &str) -> SystemCase {
    parse_case(format!("{}/../../cases/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// One generator of a copper-plate system, planning-side data.
#[derive(Debug, Clone, Copy)]
pub struct Unit {
    pub cap: f64,
    pub cost: f64,
    pub rbar_up: f64,
    pub rbar_dn: f64,
    pub p_up: f64,
    pub p_dn: f64,
}

pub fn units(c: &SystemCase) -> Vec<Unit> {
    c.generators
        .iter()
        .enumerate()
        .map(|(i, g)| Unit {
            cap: c.tilde.capacity[i],
            cost: c.tilde.cost[i],
            rbar_up: g.rbar_up,
            rbar_dn: g.rbar_dn,
            p_up: c.tilde.p_up[i],
            p_dn: c.tilde.p_dn[i],
        })
        .collect()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for k in 0..3 {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        x[k] = det(m) / d;
    }
    Some(x)
}

/// Vertices of `{(g, u, d): 0 ≤ d ≤ g, g + u ≤ G, 0 ≤ u ≤ ū, d ≤ d̄}`.
fn unit_vertices(u: &Unit) -> Vec<[f64; 3]> {
    // Rows a·(g,u,d) ≤ b.
    let rows: [([f64; 3], f64); 6] = [
        ([0.0, 0.0, -1.0], 0.0),
        ([0.0, -1.0, 0.0], 0.0),
        ([-1.0, 0.0, 1.0], 0.0),
        ([1.0, 1.0, 0.0], u.cap),
        ([0.0, 1.0, 0.0], u.rbar_up),
        ([0.0, 0.0, 1.0], u.rbar_dn),
    ];
    let mut out: Vec<[f64; 3]> = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            for k in j + 1..6 {
                let Some(x) = solve3([rows[i].0, rows[j].0, rows[k].0], [rows[i].1, rows[j].1, rows[k].1]) else {
                    continue;
                };
                let ok = rows.iter().all(|(a, b)| a[0] * x[0] + a[1] * x[1] + a[2] * x[2] <= b + 1e-9);
                if ok && !out.iter().any(|v| (0..3).all(|q| (v[q] - x[q]).abs() < 1e-9)) {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Optimal value of the copper-plate single-zone planning LP, computed as the
/// maximum of its three-price dual function over the vertices of the dual
/// arrangement (all dual breakpoints are where two unit vertices tie).
pub fn planning_value_dual(units: &[Unit], d_hat: f64, r_up: f64, r_dn: f64, shed: f64, spill: f64) -> f64 {
    let verts: Vec<Vec<[f64; 3]>> = units.iter().map(unit_vertices).collect();
    // Dual variables y = (π, ρ_up, ρ_dn); unit term is min over vertices of
    // (c−π)g + (p_up−ρ_up)u + (p_dn−ρ_dn)d.
    let dual = |y: [f64; 3]| -> f64 {
        let mut v = y[0] * d_hat + y[1] * r_up + y[2] * r_dn;
        for (u, vs) in units.iter().zip(&verts) {
            v += vs
                .iter()
                .map(|x| (u.cost - y[0]) * x[0] + (u.p_up - y[1]) * x[1] + (u.p_dn - y[2]) * x[2])
                .fold(f64::INFINITY, f64::min);
        }
        v
    };
    // Planes n·y = r.
    let mut planes: Vec<([f64; 3], f64)> = vec![
        ([1.0, 0.0, 0.0], shed),
        ([1.0, 0.0, 0.0], -spill),
        ([0.0, 1.0, 0.0], shed),
        ([0.0, 1.0, 0.0], 0.0),
        ([0.0, 0.0, 1.0], shed),
        ([0.0, 0.0, 1.0], 0.0),
    ];
    for (u, vs) in units.iter().zip(&verts) {
        for a in 0..vs.len() {
            for b in a + 1..vs.len() {
                let dg = vs[a][0] - vs[b][0];
                let du = vs[a][1] - vs[b][1];
                let dd = vs[a][2] - vs[b][2];
                // (c−π)dg + (p_up−ρu)du + (p_dn−ρd)dd = 0.
                let n = [dg, du, dd];
                if n.iter().all(|x| x.abs() < 1e-12) {
                    continue;
                }
                planes.push((n, u.cost * dg + u.p_up * du + u.p_dn * dd));
            }
        }
    }
    let inside = |y: [f64; 3]| {
        y[0] >= -spill - 1e-9 && y[0] <= shed + 1e-9 && (0.0..=shed + 1e-9).contains(&y[1]) && (0.0..=shed + 1e-9).contains(&y[2])
    };
    let mut best = f64::NEG_INFINITY;
    let np = planes.len();
    for i in 0..np {
        for j in i + 1..np {
            for k in j + 1..np {
                let Some(y) = solve3([planes[i].0, planes[j].0, planes[k].0], [planes[i].1, planes[j].1, planes[k].1])
                else {
                    continue;
                };
                if inside(y) {
                    best = best.max(dual(y));
                }
            }
        }
    }
    best
}

/// Copper-plate redispatch within `[lo, hi]`: start at the floors, raise the
/// cheapest units first, shed what cannot be met, spill any floor excess.
pub fn redispatch_cost(lo: &[f64], hi: &[f64], cost: &[f64], demand: f64, shed: f64, spill: f64) -> f64 {
    let floor: f64 = lo.iter().sum();
    let mut total: f64 = lo.iter().zip(cost).map(|(l, c)| l * c).sum();
    if floor >= demand {
        return total + spill * (floor - demand);
    }
    let mut need = demand - floor;
    let mut order: Vec<usize> = (0..lo.len()).collect();
    order.sort_by(|&a, &b| cost[a].total_cmp(&cost[b]));
    for i in order {
        let take = (hi[i] - lo[i]).min(need);
        total += take * cost[i];
        need -= take;
    }
    total + shed * need
}

/// Minimum over all vertices of a bounded LP. A vertex is fixed by `n` independent
/// active constraints: a subset of rows plus bound choices for the other columns.
/// Equality rows need not be in the subset; feasibility is checked afterwards.
pub fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
    let (m, n) = (lp.n_rows(), lp.n_cols());
    let mut best: Option<f64> = None;
    for rmask in 0u32..(1 << m) {
        let k = rmask.count_ones() as usize;
        if k > n {
            continue;
        }
        let nfix = n - k;
        let active: Vec<usize> = (0..m).filter(|i| rmask >> i & 1 == 1).collect();
        for vmask in 0u32..(1 << n) {
            if vmask.count_ones() as usize != nfix {
                continue;
            }
            let fixed: Vec<usize> = (0..n).filter(|&j| vmask >> j & 1 == 1).collect();
            let free: Vec<usize> = (0..n).filter(|&j| vmask >> j & 1 == 0).collect();
            for bmask in 0u32..(1 << nfix) {
                let mut x = vec![0.0; n];
                for (b, &j) in fixed.iter().enumerate() {
                    x[j] = if bmask >> b & 1 == 1 { lp.upper[j] } else { lp.lower[j] };
                }
                let sz = free.len();
                let mut a = vec![vec![0.0; sz + 1]; sz];
                for (r, &i) in active.iter().enumerate() {
                    let row = lp.matrix().row(i);
                    let mut rhs = lp.rhs[i];
                    for &j in &fixed {
                        rhs -= row[j] * x[j];
                    }
                    for (c, &j) in free.iter().enumerate() {
                        a[r][c] = row[j];
                    }
                    a[r][sz] = rhs;
                }
                let Some(sol) = gauss(a) else { continue };
                for (c, &j) in free.iter().enumerate() {
                    x[j] = sol[c];
                }
                if lp.max_violation(&x) <= 1e-9 {
                    let v = lp.objective_value(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
    }
    best
}

fn gauss(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                if f != 0.0 {
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Bounded LP with at most `max_n` columns and `max_m` rows, feasible unless a
/// right-hand side is shifted (one row in ten).
pub fn random_lp(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> LinearProgram {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.0f64).round()).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.5..5.0f64)).collect();
    let x0: Vec<f64> = (0..n).map(|j| rng.random_range(lower[j]..upper[j])).collect();
    let mut data = Vec::with_capacity(m * n);
    let mut senses = Vec::new();
    let mut rhs = Vec::new();
    for _ in 0..m {
        let row: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-3.0..3.0f64) }).collect();
        let act: f64 = row.iter().zip(&x0).map(|(a, x)| a * x).sum();
        let s = match rng.random_range(0..5) {
            0 => RowSense::Eq,
            1 | 2 => RowSense::Le,
            _ => RowSense::Ge,
        };
        let slack = rng.random_range(0.0..2.0);
        let mut b = match s {
            RowSense::Le => act + slack,
            RowSense::Ge => act - slack,
            RowSense::Eq => act,
        };
        if rng.random_bool(0.1) {
            b += rng.random_range(-20.0..20.0);
        }
        data.extend(row);
        senses.push(s);
        rhs.push(b);
    }
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0f64)).collect();
    LinearProgram::new(DenseMatrix::new(m, n, data), c, senses, rhs, lower, upper).unwrap()
}
