//! Per-sample KKT relaxation over a box of forecasts and its complementarity
//! branch-and-bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::region::Cut;
use super::{ExactError, KktInstance, PairKind};
use crate::lp::{self, Basis, LinearProgram, LpBuilder, LpStatus, PerturbationPolicy, RowSense};

/// Product below which a pair counts as complementary.
const COMP_TOL: f64 = 1e-9;

/// Lower bound on the assessed cost of one sample over a box of forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBound {
    pub value: f64,
    /// `value` is attained by a complementary point (not a node-limit fallback).
    pub exact: bool,
    /// Forecast at the attaining point; empty unless `exact`.
    pub y: Vec<f64>,
    /// Trainable coefficients at the attaining point when the forecast is linked
    /// to θ; empty otherwise.
    pub theta: Vec<f64>,
    pub nodes: usize,
    /// Largest amount by which a child LP bound fell below its parent's (diagnostic; ≈ 0).
    pub max_bound_drop: f64,
}

/// Column and row positions of the relaxation LP.
struct Layout {
    y: Vec<usize>,
    theta: Vec<usize>,
    x: Vec<usize>,
    lam: Vec<usize>,
    mu_l: Vec<Option<usize>>,
    mu_u: Vec<Option<usize>>,
    primal_rows: Vec<usize>,
}

/// Planning primal and dual feasibility, assessment with plan-linked bounds,
/// a strong-duality cut with McCormick products `w = π·ŷ`, and `ŷ` in a box.
pub(crate) struct Relaxation {
    lp: LinearProgram,
    layout: Layout,
    base_rhs: Vec<f64>,
}

impl Relaxation {
    /// With `link = Some((lo, hi, cuts))` the forecast is tied to θ in the box
    /// `[lo, hi]` intersected with `cuts`.
    pub(crate) fn new(
        inst: &KktInstance<'_>,
        t: usize,
        ylo: &[f64],
        yhi: &[f64],
        link: Option<(&[f64], &[f64], &[Cut])>,
    ) -> Result<Self, ExactError> {
        let p = &inst.planning;
        let s = &inst.samples[t];
        let plp = &p.lp;
        let a = plp.matrix();
        let (m, n) = (plp.n_rows(), plp.n_cols());
        let mut b = LpBuilder::new();
        let y: Vec<usize> = (0..ylo.len()).map(|k| b.add_col(format!("y{k}"), 0.0, ylo[k], yhi[k])).collect();
        let mut theta = Vec::new();
        if let Some((lo, hi, cuts)) = link {
            theta = (0..lo.len()).map(|k| b.add_col(format!("theta{k}"), 0.0, lo[k], hi[k])).collect();
            for (k, g) in s.gain.iter().enumerate() {
                let mut coefs = vec![(y[k], 1.0)];
                coefs.extend(g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(d, v)| (theta[d], -v)));
                b.add_row(format!("f{k}"), &coefs, RowSense::Eq, s.offset[k]);
            }
            for (i, cut) in cuts.iter().enumerate() {
                let coefs: Vec<(usize, f64)> =
                    cut.g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(d, v)| (theta[d], *v)).collect();
                b.add_row(format!("cut{i}"), &coefs, RowSense::Le, -cut.c);
            }
        }
        let mut x = Vec::with_capacity(n);
        for j in 0..n {
            x.push(b.add_col(format!("x{j}"), 0.0, plp.lower[j], plp.upper[j]));
        }
        for i in 0..p.g.len() {
            b.set_cost(x[p.r_up[i]], p.p_up[i]);
            b.set_cost(x[p.r_dn[i]], p.p_dn[i]);
        }
        let lam: Vec<usize> =
            (0..m).map(|i| b.add_col(format!("pi{i}"), 0.0, p.dual_bounds[i].0, p.dual_bounds[i].1)).collect();
        let mu_l: Vec<Option<usize>> = (0..n)
            .map(|j| plp.lower[j].is_finite().then(|| b.add_col(format!("mul{j}"), 0.0, 0.0, f64::INFINITY)))
            .collect();
        let mu_u: Vec<Option<usize>> = (0..n)
            .map(|j| plp.upper[j].is_finite().then(|| b.add_col(format!("muu{j}"), 0.0, 0.0, f64::INFINITY)))
            .collect();
        let alp = &s.assessment;
        let z: Vec<usize> = (0..alp.n_cols())
            .map(|j| b.add_col(format!("z{j}"), alp.objective[j], alp.lower[j], alp.upper[j]))
            .collect();

        let mut primal_rows = Vec::with_capacity(m);
        for i in 0..m {
            let mut coefs: Vec<(usize, f64)> =
                (0..n).filter(|&j| a.get(i, j) != 0.0).map(|j| (x[j], a.get(i, j))).collect();
            coefs.extend(p.sensitivity[i].iter().map(|&(k, v)| (y[k], -v)));
            primal_rows.push(b.add_row(format!("p{i}"), &coefs, plp.senses[i], plp.rhs[i]));
        }
        for j in 0..n {
            let mut coefs: Vec<(usize, f64)> =
                (0..m).filter(|&i| a.get(i, j) != 0.0).map(|i| (lam[i], a.get(i, j))).collect();
            if let Some(c) = mu_l[j] {
                coefs.push((c, 1.0));
            }
            if let Some(c) = mu_u[j] {
                coefs.push((c, -1.0));
            }
            b.add_row(format!("d{j}"), &coefs, RowSense::Eq, plp.objective[j]);
        }
        // c·x ≤ b0·π + Σ S·w + l·μ_l − u·μ_u; weak duality makes it an equality.
        let mut cut: Vec<(usize, f64)> =
            (0..n).filter(|&j| plp.objective[j] != 0.0).map(|j| (x[j], plp.objective[j])).collect();
        cut.extend((0..m).filter(|&i| plp.rhs[i] != 0.0).map(|i| (lam[i], -plp.rhs[i])));
        for j in 0..n {
            if let Some(c) = mu_l[j] {
                cut.push((c, -plp.lower[j]));
            }
            if let Some(c) = mu_u[j] {
                cut.push((c, plp.upper[j]));
            }
        }
        for i in 0..m {
            let (pl, pu) = p.dual_bounds[i];
            for &(k, v) in &p.sensitivity[i] {
                let w = b.add_col(format!("w{i}_{k}"), 0.0, f64::NEG_INFINITY, f64::INFINITY);
                cut.push((w, -v));
                let (yl, yu) = (ylo[k], yhi[k]);
                let (li, yk) = (lam[i], y[k]);
                b.add_row(format!("mc{i}_{k}a"), &[(w, 1.0), (yk, -pl), (li, -yl)], RowSense::Ge, -pl * yl);
                b.add_row(format!("mc{i}_{k}b"), &[(w, 1.0), (yk, -pu), (li, -yu)], RowSense::Ge, -pu * yu);
                b.add_row(format!("mc{i}_{k}c"), &[(w, 1.0), (yk, -pu), (li, -yl)], RowSense::Le, -pu * yl);
                b.add_row(format!("mc{i}_{k}d"), &[(w, 1.0), (yk, -pl), (li, -yu)], RowSense::Le, -pl * yu);
            }
        }
        b.add_row("strong_duality", &cut, RowSense::Le, 0.0);

        let am = alp.matrix();
        for i in 0..alp.n_rows() {
            let coefs: Vec<(usize, f64)> =
                (0..alp.n_cols()).filter(|&j| am.get(i, j) != 0.0).map(|j| (z[j], am.get(i, j))).collect();
            b.add_row(format!("a{i}"), &coefs, alp.senses[i], alp.rhs[i]);
        }
        for (i, &zj) in s.assessment_g.iter().enumerate() {
            let (g, up, dn) = (x[p.g[i]], x[p.r_up[i]], x[p.r_dn[i]]);
            b.add_row(format!("lo{i}"), &[(z[zj], 1.0), (g, -1.0), (dn, 1.0)], RowSense::Ge, 0.0);
            b.add_row(format!("hi{i}"), &[(z[zj], 1.0), (g, -1.0), (up, -1.0)], RowSense::Le, 0.0);
        }
        let lp = b.build()?;
        let base_rhs = plp.rhs.clone();
        Ok(Self { lp, layout: Layout { y, theta, x, lam, mu_l, mu_u, primal_rows }, base_rhs })
    }

    /// Relaxation LP with `fixings`; `None` when the fixings contradict a bound.
    fn apply(&self, inst: &KktInstance<'_>, fixings: &[(u32, bool)]) -> Option<LinearProgram> {
        let mut lp = self.lp.clone();
        let l = &self.layout;
        let plp = &inst.planning.lp;
        let pin = |lp: &mut LinearProgram, c: usize, v: f64| {
            lp.lower[c] = lp.lower[c].max(v);
            lp.upper[c] = lp.upper[c].min(v);
        };
        for &(k, slack_zero) in fixings {
            match inst.planning.pairs[k as usize].kind {
                PairKind::Row(i) if slack_zero => lp.senses[l.primal_rows[i]] = RowSense::Eq,
                PairKind::Row(i) => pin(&mut lp, l.lam[i], 0.0),
                PairKind::Lower(j) if slack_zero => pin(&mut lp, l.x[j], plp.lower[j]),
                PairKind::Upper(j) if slack_zero => pin(&mut lp, l.x[j], plp.upper[j]),
                PairKind::Lower(j) => pin(&mut lp, l.mu_l[j]?, 0.0),
                PairKind::Upper(j) => pin(&mut lp, l.mu_u[j]?, 0.0),
            }
        }
        lp.lower.iter().zip(&lp.upper).all(|(lo, hi)| lo <= hi).then_some(lp)
    }

    /// Index and size of the largest complementarity product at `v`.
    fn most_violated(&self, inst: &KktInstance<'_>, lp: &LinearProgram, v: &[f64]) -> (usize, f64) {
        let l = &self.layout;
        let plp = &inst.planning.lp;
        let mut best = (0, 0.0);
        for (k, pair) in inst.planning.pairs.iter().enumerate() {
            let prod = match pair.kind {
                PairKind::Row(i) => {
                    let r = l.primal_rows[i];
                    let act: f64 = lp.matrix().row(r).iter().zip(v).map(|(a, x)| a * x).sum();
                    (act - self.base_rhs[i]).abs() * v[l.lam[i]].abs()
                }
                PairKind::Lower(j) => (v[l.x[j]] - plp.lower[j]).max(0.0) * l.mu_l[j].map_or(0.0, |c| v[c]).abs(),
                PairKind::Upper(j) => (plp.upper[j] - v[l.x[j]]).max(0.0) * l.mu_u[j].map_or(0.0, |c| v[c]).abs(),
            };
            if prod > best.1 {
                best = (k, prod);
            }
        }
        best
    }
}

struct Node {
    bound: f64,
    id: usize,
    fixings: Vec<(u32, bool)>,
    basis: Option<Basis>,
    /// Pair to branch on; `None` when the solution is complementary.
    branch: Option<usize>,
    y: Vec<f64>,
    theta: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed: the max-heap pops the smallest bound, then the smallest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

fn solve_node(
    inst: &KktInstance<'_>,
    rel: &Relaxation,
    fixings: Vec<(u32, bool)>,
    warm: Option<&Basis>,
    id: usize,
) -> Result<Option<Node>, ExactError> {
    let Some(lp) = rel.apply(inst, &fixings) else {
        return Ok(None);
    };
    let sol = lp::solve(&lp, warm, &PerturbationPolicy::none())?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Ok(None),
        status => return Err(ExactError::Relaxation { t: usize::MAX, status }),
    }
    let (k, prod) = rel.most_violated(inst, &lp, &sol.x);
    Ok(Some(Node {
        bound: sol.objective,
        id,
        fixings,
        basis: sol.basis,
        branch: (prod > COMP_TOL).then_some(k),
        y: rel.layout.y.iter().map(|&c| sol.x[c]).collect(),
        theta: rel.layout.theta.iter().map(|&c| sol.x[c]).collect(),
    }))
}

/// Best-first complementarity branch-and-bound for sample `t` with forecasts
/// in `[ylo, yhi]`. After `node_limit` nodes the smallest open bound is returned.
pub fn sample_bound(
    inst: &KktInstance<'_>,
    t: usize,
    ylo: &[f64],
    yhi: &[f64],
    node_limit: usize,
) -> Result<SampleBound, ExactError> {
    search(inst, t, Relaxation::new(inst, t, ylo, yhi, None)?, node_limit)
}

/// As [`sample_bound`], with the forecast tied to θ in `[lo, hi] ∩ cuts`.
pub(crate) fn linked_sample_bound(
    inst: &KktInstance<'_>,
    t: usize,
    lo: &[f64],
    hi: &[f64],
    cuts: &[Cut],
    node_limit: usize,
) -> Result<SampleBound, ExactError> {
    let (ylo, yhi) = inst.forecast_box(t, lo, hi);
    search(inst, t, Relaxation::new(inst, t, &ylo, &yhi, Some((lo, hi, cuts)))?, node_limit)
}

fn search(inst: &KktInstance<'_>, t: usize, rel: Relaxation, node_limit: usize) -> Result<SampleBound, ExactError> {
    let tag = |e: ExactError| match e {
        ExactError::Relaxation { status, .. } => ExactError::Relaxation { t, status },
        e => e,
    };
    let root = solve_node(inst, &rel, Vec::new(), None, 0)
        .map_err(tag)?
        .ok_or(ExactError::Relaxation { t, status: LpStatus::Infeasible })?;
    let mut heap = BinaryHeap::from([root]);
    let mut nodes = 1;
    let mut max_bound_drop = 0.0f64;
    while let Some(node) = heap.pop() {
        let Some(k) = node.branch else {
            let (y, theta) = (node.y, node.theta);
            return Ok(SampleBound { value: node.bound, exact: true, y, theta, nodes, max_bound_drop });
        };
        if nodes >= node_limit {
            let (y, theta) = (Vec::new(), Vec::new());
            return Ok(SampleBound { value: node.bound, exact: false, y, theta, nodes, max_bound_drop });
        }
        for slack_zero in [true, false] {
            let mut fixings = node.fixings.clone();
            fixings.push((k as u32, slack_zero));
            nodes += 1;
            if let Some(child) = solve_node(inst, &rel, fixings, node.basis.as_ref(), nodes).map_err(tag)? {
                max_bound_drop = max_bound_drop.max(node.bound - child.bound);
                heap.push(child);
            }
        }
    }
    Err(ExactError::Relaxation { t, status: LpStatus::Infeasible })
}

/// Bound of the root relaxation (no complementarity enforced) for sample `t`.
pub fn root_relaxation(inst: &KktInstance<'_>, t: usize, ylo: &[f64], yhi: &[f64]) -> Result<f64, ExactError> {
    let rel = Relaxation::new(inst, t, ylo, yhi, None)?;
    let sol = lp::solve(&rel.lp, None, &PerturbationPolicy::none())?;
    if sol.status != LpStatus::Optimal {
        return Err(ExactError::Relaxation { t, status: sol.status });
    }
    Ok(sol.objective)
}
