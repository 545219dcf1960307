//! Big-M MILP form of the stacked KKT model, written as fixed-format MPS.

use serde::{Deserialize, Serialize};

use super::{ExactError, KktInstance, PairKind};
use crate::lp::{LpBuilder, MpsModel, RowSense};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigMOptions {
    /// Box of the trainable coefficients; `None` uses `|θ_i| ≤ bound`.
    pub theta_box: Option<Vec<(f64, f64)>>,
    pub bound: f64,
    /// Assumed magnitude bound for planning variables without a finite bound.
    pub primal_cap: Option<f64>,
    /// Assumed magnitude bound for multipliers without a finite bound.
    pub dual_cap: Option<f64>,
}

impl Default for BigMOptions {
    fn default() -> Self {
        Self { theta_box: None, bound: 1e3, primal_cap: None, dual_cap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBigM {
    pub sample: usize,
    pub pair: String,
    /// Bound on the slack side.
    pub primal: f64,
    /// Bound on the multiplier side.
    pub dual: f64,
}

#[derive(Debug, Clone)]
struct Block {
    y: Vec<usize>,
    x: Vec<usize>,
    lam: Vec<usize>,
    mu_l: Vec<Option<usize>>,
    mu_u: Vec<Option<usize>>,
    z: Vec<usize>,
    bin: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BigMExport {
    pub model: MpsModel,
    pub pairs: Vec<PairBigM>,
    theta: Vec<usize>,
    blocks: Vec<Block>,
}

struct Row {
    coefs: Vec<(usize, f64)>,
    sense: RowSense,
    rhs: f64,
}

/// Tighten `[lo, hi]` by activity bounds of `rows` until nothing moves.
fn propagate(rows: &[Row], lo: &mut [f64], hi: &mut [f64]) {
    for _ in 0..50 {
        let mut changed = false;
        for r in rows {
            let (mut min_fin, mut min_inf, mut max_fin, mut max_inf) = (0.0, 0usize, 0.0, 0usize);
            for &(j, a) in &r.coefs {
                let (l, h) = if a > 0.0 { (a * lo[j], a * hi[j]) } else { (a * hi[j], a * lo[j]) };
                if l.is_finite() { min_fin += l } else { min_inf += 1 }
                if h.is_finite() { max_fin += h } else { max_inf += 1 }
            }
            for &(j, a) in &r.coefs {
                let (l, h) = if a > 0.0 { (a * lo[j], a * hi[j]) } else { (a * hi[j], a * lo[j]) };
                // Activity bounds of the other terms.
                let rest_min = match (l.is_finite(), min_inf) {
                    (true, 0) => min_fin - l,
                    (false, 1) => min_fin,
                    _ => f64::NEG_INFINITY,
                };
                let rest_max = match (h.is_finite(), max_inf) {
                    (true, 0) => max_fin - h,
                    (false, 1) => max_fin,
                    _ => f64::INFINITY,
                };
                // a·v ≤ rhs − rest_min (≤ rows) and a·v ≥ rhs − rest_max (≥ rows).
                let mut term_hi = f64::INFINITY;
                let mut term_lo = f64::NEG_INFINITY;
                if r.sense != RowSense::Ge {
                    term_hi = r.rhs - rest_min;
                }
                if r.sense != RowSense::Le {
                    term_lo = r.rhs - rest_max;
                }
                let (new_lo, new_hi) = if a > 0.0 { (term_lo / a, term_hi / a) } else { (term_hi / a, term_lo / a) };
                let eps = 1e-9 * (1.0 + hi[j].abs().min(lo[j].abs()));
                if new_hi.is_finite() && new_hi < hi[j] - eps {
                    hi[j] = new_hi;
                    changed = true;
                }
                if new_lo.is_finite() && new_lo > lo[j] + eps {
                    lo[j] = new_lo;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Export the stacked model as a MILP with one binary per complementarity pair.
/// Big-M values come from bound propagation over each sample's KKT rows.
pub fn export_bigm_mps(inst: &KktInstance<'_>, opts: &BigMOptions) -> Result<BigMExport, ExactError> {
    let d = inst.dim();
    let (tlo, thi): (Vec<f64>, Vec<f64>) = match &opts.theta_box {
        Some(b) if b.len() != d => return Err(ExactError::Box(format!("{} intervals for {d} coefficients", b.len()))),
        Some(b) => b.iter().copied().unzip(),
        None => (vec![-opts.bound; d], vec![opts.bound; d]),
    };
    let p = &inst.planning;
    let plp = &p.lp;
    let a = plp.matrix();
    let (m, n) = (plp.n_rows(), plp.n_cols());
    let inv_t = 1.0 / inst.len() as f64;
    let mut b = LpBuilder::new();
    let theta: Vec<usize> = (0..d).map(|k| b.add_col(format!("theta{k}"), 0.0, tlo[k], thi[k])).collect();
    let mut blocks = Vec::with_capacity(inst.len());
    let mut pairs_out = Vec::new();
    let mut integer_cols = Vec::new();
    for (t, s) in inst.samples.iter().enumerate() {
        let (ylo, yhi) = inst.forecast_box(t, &tlo, &thi);
        // Local variable space for propagation: y, x, λ, μ_l, μ_u.
        let ny = ylo.len();
        let cap = |v: f64, c: Option<f64>, upper: bool| match (v.is_finite(), c) {
            (false, Some(c)) => if upper { c } else { -c },
            _ => v,
        };
        let mut lo: Vec<f64> = ylo.clone();
        let mut hi: Vec<f64> = yhi.clone();
        let xo = lo.len();
        for j in 0..n {
            lo.push(cap(plp.lower[j], opts.primal_cap, false));
            hi.push(cap(plp.upper[j], opts.primal_cap, true));
        }
        let lo_lam = lo.len();
        for i in 0..m {
            lo.push(cap(p.dual_bounds[i].0, opts.dual_cap, false));
            hi.push(cap(p.dual_bounds[i].1, opts.dual_cap, true));
        }
        let mut loc_mu_l = vec![None; n];
        let mut loc_mu_u = vec![None; n];
        for j in 0..n {
            if plp.lower[j].is_finite() {
                loc_mu_l[j] = Some(lo.len());
                lo.push(0.0);
                hi.push(opts.dual_cap.unwrap_or(f64::INFINITY));
            }
            if plp.upper[j].is_finite() {
                loc_mu_u[j] = Some(lo.len());
                lo.push(0.0);
                hi.push(opts.dual_cap.unwrap_or(f64::INFINITY));
            }
        }
        let mut rows = Vec::new();
        let primal_coefs = |i: usize, yoff: &dyn Fn(usize) -> usize, xoff: &dyn Fn(usize) -> usize| {
            let mut c: Vec<(usize, f64)> =
                (0..n).filter(|&j| a.get(i, j) != 0.0).map(|j| (xoff(j), a.get(i, j))).collect();
            c.extend(p.sensitivity[i].iter().map(|&(k, v)| (yoff(k), -v)));
            c
        };
        for i in 0..m {
            rows.push(Row { coefs: primal_coefs(i, &|k| k, &|j| xo + j), sense: plp.senses[i], rhs: plp.rhs[i] });
        }
        let dual_coefs = |j: usize, lamoff: &dyn Fn(usize) -> usize, mul: Option<usize>, muu: Option<usize>| {
            let mut c: Vec<(usize, f64)> =
                (0..m).filter(|&i| a.get(i, j) != 0.0).map(|i| (lamoff(i), a.get(i, j))).collect();
            if let Some(v) = mul {
                c.push((v, 1.0));
            }
            if let Some(v) = muu {
                c.push((v, -1.0));
            }
            c
        };
        for j in 0..n {
            rows.push(Row {
                coefs: dual_coefs(j, &|i| lo_lam + i, loc_mu_l[j], loc_mu_u[j]),
                sense: RowSense::Eq,
                rhs: plp.objective[j],
            });
        }
        propagate(&rows, &mut lo, &mut hi);

        // Global columns.
        let y: Vec<usize> = (0..ny).map(|k| b.add_col(format!("y{t}_{k}"), 0.0, ylo[k], yhi[k])).collect();
        let x: Vec<usize> = (0..n).map(|j| b.add_col(format!("x{t}_{j}"), 0.0, plp.lower[j], plp.upper[j])).collect();
        for i in 0..p.g.len() {
            b.set_cost(x[p.r_up[i]], inv_t * p.p_up[i]);
            b.set_cost(x[p.r_dn[i]], inv_t * p.p_dn[i]);
        }
        let lam: Vec<usize> =
            (0..m).map(|i| b.add_col(format!("pi{t}_{i}"), 0.0, p.dual_bounds[i].0, p.dual_bounds[i].1)).collect();
        let mu_l: Vec<Option<usize>> =
            loc_mu_l.iter().enumerate().map(|(j, o)| o.map(|_| b.add_col(format!("mul{t}_{j}"), 0.0, 0.0, f64::INFINITY))).collect();
        let mu_u: Vec<Option<usize>> =
            loc_mu_u.iter().enumerate().map(|(j, o)| o.map(|_| b.add_col(format!("muu{t}_{j}"), 0.0, 0.0, f64::INFINITY))).collect();
        let alp = &s.assessment;
        let z: Vec<usize> = (0..alp.n_cols())
            .map(|j| b.add_col(format!("z{t}_{j}"), inv_t * alp.objective[j], alp.lower[j], alp.upper[j]))
            .collect();

        for k in 0..ny {
            let mut c = vec![(y[k], 1.0)];
            c.extend(s.gain[k].iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(dd, g)| (theta[dd], -g)));
            b.add_row(format!("f{t}_{k}"), &c, RowSense::Eq, s.offset[k]);
        }
        for i in 0..m {
            b.add_row(format!("p{t}_{i}"), &primal_coefs(i, &|k| y[k], &|j| x[j]), plp.senses[i], plp.rhs[i]);
        }
        for j in 0..n {
            b.add_row(format!("d{t}_{j}"), &dual_coefs(j, &|i| lam[i], mu_l[j], mu_u[j]), RowSense::Eq, plp.objective[j]);
        }
        let am = alp.matrix();
        for i in 0..alp.n_rows() {
            let c: Vec<(usize, f64)> =
                (0..alp.n_cols()).filter(|&j| am.get(i, j) != 0.0).map(|j| (z[j], am.get(i, j))).collect();
            b.add_row(format!("a{t}_{i}"), &c, alp.senses[i], alp.rhs[i]);
        }
        for (i, &zj) in s.assessment_g.iter().enumerate() {
            let (g, up, dn) = (x[p.g[i]], x[p.r_up[i]], x[p.r_dn[i]]);
            b.add_row(format!("lo{t}_{i}"), &[(z[zj], 1.0), (g, -1.0), (dn, 1.0)], RowSense::Ge, 0.0);
            b.add_row(format!("hi{t}_{i}"), &[(z[zj], 1.0), (g, -1.0), (up, -1.0)], RowSense::Le, 0.0);
        }

        let mut bin = Vec::with_capacity(p.pairs.len());
        for (q, pair) in p.pairs.iter().enumerate() {
            let (ms, md) = match pair.kind {
                PairKind::Row(i) => {
                    let (mut amin, mut amax) = (0.0, 0.0);
                    for &(v, c) in &rows[i].coefs {
                        let (l, h) = if c > 0.0 { (c * lo[v], c * hi[v]) } else { (c * hi[v], c * lo[v]) };
                        amin += l;
                        amax += h;
                    }
                    let ms = if plp.senses[i] == RowSense::Le { plp.rhs[i] - amin } else { amax - plp.rhs[i] };
                    (ms, lo[lo_lam + i].abs().max(hi[lo_lam + i].abs()))
                }
                PairKind::Lower(j) => (hi[xo + j] - plp.lower[j], hi[loc_mu_l[j].expect("finite lower")]),
                PairKind::Upper(j) => (plp.upper[j] - lo[xo + j], hi[loc_mu_u[j].expect("finite upper")]),
            };
            if !ms.is_finite() || !md.is_finite() {
                return Err(ExactError::UnboundedBigM { pair: format!("sample {t} {}", pair.name) });
            }
            let (ms, md) = (ms.max(0.0), md.max(0.0));
            let bc = b.add_col(format!("b{t}_{q}"), 0.0, 0.0, 1.0);
            integer_cols.push(bc);
            bin.push(bc);
            match pair.kind {
                PairKind::Row(i) => {
                    let mut c = primal_coefs(i, &|k| y[k], &|j| x[j]);
                    if plp.senses[i] == RowSense::Le {
                        c.push((bc, ms));
                        b.add_row(format!("ms{t}_{q}"), &c, RowSense::Ge, plp.rhs[i]);
                        b.add_row(format!("md{t}_{q}"), &[(lam[i], -1.0), (bc, md)], RowSense::Le, md);
                    } else {
                        c.push((bc, -ms));
                        b.add_row(format!("ms{t}_{q}"), &c, RowSense::Le, plp.rhs[i]);
                        b.add_row(format!("md{t}_{q}"), &[(lam[i], 1.0), (bc, md)], RowSense::Le, md);
                    }
                }
                PairKind::Lower(j) => {
                    b.add_row(format!("ms{t}_{q}"), &[(x[j], 1.0), (bc, -ms)], RowSense::Le, plp.lower[j]);
                    let mu = mu_l[j].expect("finite lower");
                    b.add_row(format!("md{t}_{q}"), &[(mu, 1.0), (bc, md)], RowSense::Le, md);
                }
                PairKind::Upper(j) => {
                    b.add_row(format!("ms{t}_{q}"), &[(x[j], 1.0), (bc, ms)], RowSense::Ge, plp.upper[j]);
                    let mu = mu_u[j].expect("finite upper");
                    b.add_row(format!("md{t}_{q}"), &[(mu, 1.0), (bc, md)], RowSense::Le, md);
                }
            }
            pairs_out.push(PairBigM { sample: t, pair: pair.name.clone(), primal: ms, dual: md });
        }
        blocks.push(Block { y, x, lam, mu_l, mu_u, z, bin });
    }
    let lp = b.build()?;
    let mut integer = vec![false; lp.n_cols()];
    for c in integer_cols {
        integer[c] = true;
    }
    Ok(BigMExport { model: MpsModel { name: "ADLEARN".into(), lp, integer }, pairs: pairs_out, theta, blocks })
}

impl BigMExport {
    /// MILP variable vector of the bilevel point at trainable `theta`.
    pub fn embed(&self, inst: &KktInstance<'_>, theta: &[f64]) -> Result<Vec<f64>, ExactError> {
        let mut v = vec![0.0; self.model.lp.n_cols()];
        for (k, &c) in self.theta.iter().enumerate() {
            v[c] = theta[k];
        }
        let plp = &inst.planning.lp;
        for (t, blk) in self.blocks.iter().enumerate() {
            let pt = inst.kkt_point(t, theta)?;
            let lp = inst.planning_lp(&pt.y);
            let act = lp.activities(&pt.x);
            for (k, &c) in blk.y.iter().enumerate() {
                v[c] = pt.y[k];
            }
            for (j, &c) in blk.x.iter().enumerate() {
                v[c] = pt.x[j];
                if let Some(cl) = blk.mu_l[j] {
                    v[cl] = pt.mu_lower[j];
                }
                if let Some(cu) = blk.mu_u[j] {
                    v[cu] = pt.mu_upper[j];
                }
            }
            for (i, &c) in blk.lam.iter().enumerate() {
                v[c] = pt.duals[i];
            }
            for (j, &c) in blk.z.iter().enumerate() {
                v[c] = pt.z[j];
            }
            for (q, pair) in inst.planning.pairs.iter().enumerate() {
                let dual = match pair.kind {
                    PairKind::Row(i) => pt.duals[i],
                    PairKind::Lower(j) => pt.mu_lower[j],
                    PairKind::Upper(j) => pt.mu_upper[j],
                };
                let slack = match pair.kind {
                    PairKind::Row(i) => (act[i] - lp.rhs[i]).abs(),
                    PairKind::Lower(j) => pt.x[j] - plp.lower[j],
                    PairKind::Upper(j) => plp.upper[j] - pt.x[j],
                };
                // Binary 1 lets the slack be positive and forces the multiplier to zero.
                v[blk.bin[q]] = if dual.abs() <= slack.abs() { 1.0 } else { 0.0 };
            }
        }
        Ok(v)
    }
}
