//! Branch-and-bound over cells of trainable θ.
//!
//! A node is a polyhedron `P` inside the θ box. Samples whose planning basis is
//! fixed on `P` contribute their exact assessed cost, which is convex in θ there;
//! the others contribute a constant bound from complementarity branch-and-bound
//! over the interval image of `P`. Branching fixes the basis of one sample at an
//! interior point of `P` and splits the rest of `P` along that region's facets.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::region::{region_at, region_covering, Cut, Region};
use super::relax::{linked_sample_bound, SampleBound};
use super::{ExactError, KktInstance};
use crate::lp::{self, LpBuilder, LpStatus, PerturbationPolicy, RowSense};
use crate::forecast::ThetaVector;
use crate::trainer::{opt_secs, CostEvaluator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbOptions {
    /// Stop when `(upper − lower) ≤ gap_tol·|upper|`.
    pub gap_tol: f64,
    pub abs_tol: f64,
    #[serde(with = "opt_secs")]
    pub time_limit: Option<Duration>,
    pub node_limit: usize,
    /// Per-sample complementarity nodes before falling back to the open bound.
    pub sample_node_limit: usize,
    /// Box of the trainable coefficients; `None` uses `|θ_i| ≤ bound`.
    pub theta_box: Option<Vec<(f64, f64)>>,
    pub bound: f64,
    /// Worker threads for per-sample bounds; 0 = all cores.
    pub jobs: usize,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-3,
            abs_tol: 1e-9,
            time_limit: None,
            node_limit: 1_000_000,
            sample_node_limit: 20_000,
            theta_box: None,
            bound: 1e3,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnbStatus {
    Optimal,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbResult {
    pub theta: ThetaVector,
    /// Mean assessed cost of `theta` through the forecast-plan-assess pipeline.
    pub objective: f64,
    pub lower_bound: f64,
    /// `(objective − lower_bound) / |objective|`.
    pub gap: f64,
    pub status: BnbStatus,
    pub nodes: usize,
    pub sample_nodes: usize,
    /// Largest complementarity product of the KKT points at `theta`.
    pub complementarity: f64,
    /// Largest decrease of a child bound below its parent's before the child
    /// inherits the parent bound; 0 when none dropped.
    pub max_bound_drop: f64,
    pub elapsed_secs: f64,
}

struct Node {
    lb: f64,
    id: usize,
    cuts: Vec<Cut>,
    /// Bounding box of the node polyhedron.
    lo: Vec<f64>,
    hi: Vec<f64>,
    regions: Vec<Option<Arc<Region>>>,
    bounds: Vec<Option<SampleBound>>,
    /// Minimizer of the node LP.
    theta: Vec<f64>,
    /// Cost at `theta` minus the constant bound, per sample without a region.
    excess: Vec<f64>,
    /// Chebyshev center of the node polyhedron.
    center: Vec<f64>,
}

impl Node {
    fn is_exact(&self) -> bool {
        self.regions.iter().all(Option::is_some)
    }
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
    fn cmp(&self, other: &Self) -> Ordering {
        other.lb.total_cmp(&self.lb).then(other.id.cmp(&self.id))
    }
}

/// θ columns bounded by the box plus one row per cut.
fn polyhedron(lo: &[f64], hi: &[f64], cuts: &[Cut]) -> (LpBuilder, Vec<usize>) {
    let mut b = LpBuilder::new();
    let theta: Vec<usize> = (0..lo.len()).map(|k| b.add_col(format!("theta{k}"), 0.0, lo[k], hi[k])).collect();
    for (i, cut) in cuts.iter().enumerate() {
        let coefs: Vec<(usize, f64)> =
            cut.g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (theta[k], *v)).collect();
        b.add_row(format!("cut{i}"), &coefs, RowSense::Le, -cut.c);
    }
    (b, theta)
}

/// Minimum of `w·θ` over the polyhedron; `None` when it is empty.
fn minimize(lo: &[f64], hi: &[f64], cuts: &[Cut], w: &[f64]) -> Result<Option<Vec<f64>>, ExactError> {
    let (mut b, theta) = polyhedron(lo, hi, cuts);
    for (k, &c) in theta.iter().enumerate() {
        b.set_cost(c, w[k]);
    }
    let sol = lp::solve(&b.build()?, None, &PerturbationPolicy::none())?;
    Ok(match sol.status {
        LpStatus::Optimal => Some(theta.iter().map(|&c| sol.x[c]).collect()),
        _ => None,
    })
}

/// Box around `[lo, hi] ∩ cuts` by interval propagation; `None` when proven empty.
fn bounding_box(lo: &[f64], hi: &[f64], cuts: &[Cut]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (mut lo, mut hi) = (lo.to_vec(), hi.to_vec());
    for _ in 0..10 {
        let mut changed = false;
        for cut in cuts {
            // g_k θ_k ≤ −c − Σ_{j≠k} min(g_j θ_j)
            let mins: Vec<f64> =
                cut.g.iter().enumerate().map(|(j, &v)| if v > 0.0 { v * lo[j] } else { v * hi[j] }).collect();
            let total: f64 = mins.iter().sum();
            for (k, &v) in cut.g.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let rest = -cut.c - (total - mins[k]);
                let eps = 1e-12 * (1.0 + lo[k].abs().max(hi[k].abs()));
                if v > 0.0 {
                    let b = rest / v;
                    if b < hi[k] - eps {
                        hi[k] = b;
                        changed = true;
                    }
                } else {
                    let b = rest / v;
                    if b > lo[k] + eps {
                        lo[k] = b;
                        changed = true;
                    }
                }
            }
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > &(h + 1e-9 * (1.0 + h.abs()))) {
            return None;
        }
        if !changed {
            break;
        }
    }
    for k in 0..lo.len() {
        hi[k] = hi[k].max(lo[k]);
    }
    Some((lo, hi))
}

/// Center and radius of the largest ball inside the polyhedron; `None` when empty.
fn chebyshev_center(lo: &[f64], hi: &[f64], cuts: &[Cut]) -> Result<Option<(Vec<f64>, f64)>, ExactError> {
    let d = lo.len();
    let mut b = LpBuilder::new();
    let theta: Vec<usize> = (0..d).map(|k| b.add_col(format!("theta{k}"), 0.0, lo[k], hi[k])).collect();
    let r = b.add_col("radius", -1.0, 0.0, f64::INFINITY);
    for k in 0..d {
        b.add_row(format!("lo{k}"), &[(theta[k], 1.0), (r, -1.0)], RowSense::Ge, lo[k]);
        b.add_row(format!("hi{k}"), &[(theta[k], 1.0), (r, 1.0)], RowSense::Le, hi[k]);
    }
    for (i, cut) in cuts.iter().enumerate() {
        let norm = cut.g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut coefs: Vec<(usize, f64)> =
            cut.g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (theta[k], *v)).collect();
        coefs.push((r, norm));
        b.add_row(format!("cut{i}"), &coefs, RowSense::Le, -cut.c);
    }
    let sol = lp::solve(&b.build()?, None, &PerturbationPolicy::none())?;
    Ok((sol.status == LpStatus::Optimal).then(|| (theta.iter().map(|&c| sol.x[c]).collect(), sol.x[r])))
}

/// Whether `cut` removes part of the polyhedron.
fn cuts_into(lo: &[f64], hi: &[f64], cuts: &[Cut], cut: &Cut) -> Result<bool, ExactError> {
    if cut.max_over_box(lo, hi) <= cut.tol() {
        return Ok(false);
    }
    let w: Vec<f64> = cut.g.iter().map(|v| -v).collect();
    Ok(match minimize(lo, hi, cuts, &w)? {
        Some(x) => cut.eval(&x) > cut.tol(),
        None => false,
    })
}

/// Node LP: samples with a region contribute their exact reserve and assessment
/// costs as functions of θ, the others their constant bound.
fn node_bound(
    inst: &KktInstance<'_>,
    lo: &[f64],
    hi: &[f64],
    cuts: &[Cut],
    regions: &[Option<Arc<Region>>],
    bounds: &[Option<SampleBound>],
) -> Result<Option<(f64, Vec<f64>)>, ExactError> {
    let p = &inst.planning;
    let inv_t = 1.0 / inst.len() as f64;
    let (mut b, theta) = polyhedron(lo, hi, cuts);
    let mut obj = vec![0.0; lo.len()];
    let mut constant = 0.0;
    let reserve: Vec<(usize, f64)> =
        (0..p.g.len()).flat_map(|i| [(p.r_up[i], p.p_up[i]), (p.r_dn[i], p.p_dn[i])]).collect();
    for t in 0..inst.len() {
        let Some(r) = &regions[t] else {
            constant += inv_t * bounds[t].as_ref().expect("bound for a sample without region").value;
            continue;
        };
        let (c, g) = r.affine(&reserve);
        constant += inv_t * c;
        for (o, v) in obj.iter_mut().zip(&g) {
            *o += inv_t * v;
        }
        let s = &inst.samples[t];
        let alp = &s.assessment;
        let z: Vec<usize> = (0..alp.n_cols())
            .map(|j| b.add_col(format!("z{t}_{j}"), inv_t * alp.objective[j], alp.lower[j], alp.upper[j]))
            .collect();
        let am = alp.matrix();
        for i in 0..alp.n_rows() {
            let coefs: Vec<(usize, f64)> =
                (0..alp.n_cols()).filter(|&j| am.get(i, j) != 0.0).map(|j| (z[j], am.get(i, j))).collect();
            b.add_row(format!("a{t}_{i}"), &coefs, alp.senses[i], alp.rhs[i]);
        }
        for (i, &zj) in s.assessment_g.iter().enumerate() {
            let link = |w: &[(usize, f64)]| {
                let (c, g) = r.affine(w);
                let mut coefs = vec![(z[zj], 1.0)];
                coefs.extend(g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (theta[k], -v)));
                (coefs, c)
            };
            let (coefs, c) = link(&[(p.g[i], 1.0), (p.r_dn[i], -1.0)]);
            b.add_row(format!("lo{t}_{i}"), &coefs, RowSense::Ge, c);
            let (coefs, c) = link(&[(p.g[i], 1.0), (p.r_up[i], 1.0)]);
            b.add_row(format!("hi{t}_{i}"), &coefs, RowSense::Le, c);
        }
    }
    for (k, &c) in theta.iter().enumerate() {
        b.set_cost(c, obj[k]);
    }
    let sol = lp::solve(&b.build()?, None, &PerturbationPolicy::none())?;
    match sol.status {
        LpStatus::Optimal => Ok(Some((sol.objective + constant, theta.iter().map(|&c| sol.x[c]).collect()))),
        LpStatus::Infeasible => Ok(None),
        status => Err(ExactError::Relaxation { t: usize::MAX, status }),
    }
}

struct Search<'i, 'a> {
    inst: &'i KktInstance<'a>,
    opts: &'i BnbOptions,
    pool: rayon::ThreadPool,
    eval: CostEvaluator<'a>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
    sample_nodes: usize,
    /// Inscribed radius below which a cell counts as flat.
    flat: f64,
    /// Inscribed radius below which an assigned region is bisected instead.
    thin: f64,
}

impl Search<'_, '_> {
    fn upper(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0)
    }

    fn tolerance(&self) -> f64 {
        let u = self.upper();
        if u.is_finite() {
            (self.opts.gap_tol * u.abs()).max(self.opts.abs_tol)
        } else {
            self.opts.abs_tol
        }
    }

    /// Evaluate `theta` (clamped into the box) as an incumbent; returns per-sample costs.
    fn consider(&mut self, theta: &[f64]) -> Result<Vec<f64>, ExactError> {
        let th: Vec<f64> = theta.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
        let costs = self.eval.sample_costs(&self.inst.full_theta(&th))?;
        let v = costs.iter().sum::<f64>() / costs.len() as f64;
        if v < self.upper() {
            self.best = Some((v, th));
        }
        Ok(costs)
    }

    /// θ whose forecasts are closest, in least squares, to the minimizers of the
    /// samples without a region.
    fn fit(&self, bounds: &[Option<SampleBound>]) -> Option<Vec<f64>> {
        let d = self.inst.dim();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (s, b) in self.inst.samples.iter().zip(bounds) {
            let Some(b) = b else { continue };
            if !b.exact {
                return None;
            }
            for k in 0..s.offset.len() {
                if s.gain[k].iter().any(|&g| g != 0.0) {
                    rows.extend_from_slice(&s.gain[k]);
                    rhs.push(b.y[k] - s.offset[k]);
                }
            }
        }
        if rhs.is_empty() {
            return None;
        }
        let a = DMatrix::from_row_slice(rhs.len(), d, &rows);
        let sol = a.svd(true, true).solve(&DVector::from_vec(rhs), 1e-12).ok()?;
        Some(sol.iter().copied().collect())
    }

    fn node(
        &mut self,
        cuts: Vec<Cut>,
        regions: Vec<Option<Arc<Region>>>,
        parent: Option<&Node>,
        id: usize,
    ) -> Result<Option<Node>, ExactError> {
        let (plo, phi) = parent.map_or((&self.lo, &self.hi), |p| (&p.lo, &p.hi));
        let Some((lo, hi)) = bounding_box(plo, phi, &cuts) else { return Ok(None) };
        // Cells without interior are covered by the closures of their siblings.
        let center = match chebyshev_center(&lo, &hi, &cuts)? {
            Some((c, r)) if r > self.flat => c,
            _ => return Ok(None),
        };
        let parent = parent.map(|p| &p.bounds[..]);
        let (inst, limit) = (self.inst, self.opts.sample_node_limit);
        let states: Result<Vec<(Option<Arc<Region>>, Option<SampleBound>)>, ExactError> = self.pool.install(|| {
            (0..inst.len())
                .into_par_iter()
                .map(|t| {
                    if let Some(r) = &regions[t] {
                        return Ok((Some(r.clone()), None));
                    }
                    if let Some(r) = region_covering(inst, t, &lo, &hi)? {
                        return Ok((Some(Arc::new(r)), None));
                    }
                    if let Some(Some(b)) = parent.map(|p| &p[t]) {
                        let inside = !b.theta.is_empty()
                            && b.theta.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
                            && cuts.iter().all(|c| c.eval(&b.theta) <= c.tol());
                        if b.exact && inside {
                            return Ok((None, Some(SampleBound { nodes: 0, ..b.clone() })));
                        }
                    }
                    match linked_sample_bound(inst, t, &lo, &hi, &cuts, limit) {
                        Ok(b) => Ok((None, Some(b))),
                        // A sliver that only the bounding box saw as nonempty.
                        Err(ExactError::Relaxation { status: LpStatus::Infeasible, .. }) => Ok((None, None)),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        });
        let (regions, bounds): (Vec<_>, Vec<_>) = states?.into_iter().unzip();
        if regions.iter().zip(&bounds).any(|(r, b)| r.is_none() && b.is_none()) {
            return Ok(None);
        }
        self.sample_nodes += bounds.iter().flatten().map(|b| b.nodes).sum::<usize>();
        let Some((lb, theta)) = node_bound(inst, &lo, &hi, &cuts, &regions, &bounds)? else { return Ok(None) };
        let costs = self.consider(&theta)?;
        let excess = costs.iter().zip(&bounds).map(|(c, b)| b.as_ref().map_or(0.0, |b| c - b.value)).collect();
        if let Some(th) = self.fit(&bounds) {
            self.consider(&th)?;
        }
        Ok(Some(Node { lb, id, cuts, lo, hi, regions, bounds, theta, excess, center }))
    }

    /// Child cut sets and regions: the region of the sample with the largest excess
    /// at an interior point, then the rest of the node split along its facets.
    fn branch(&self, node: &Node) -> Result<Vec<(Vec<Cut>, Vec<Option<Arc<Region>>>)>, ExactError> {
        let mut t = usize::MAX;
        for (s, r) in node.regions.iter().enumerate() {
            if r.is_none() && (t == usize::MAX || node.excess[s] > node.excess[t]) {
                t = s;
            }
        }
        // Where the sample attains its bound, nudged into the interior.
        let target = match &node.bounds[t] {
            Some(b) if b.exact && !b.theta.is_empty() => &b.theta,
            _ => &node.theta,
        };
        let point: Vec<f64> = target.iter().zip(&node.center).map(|(x, c)| x + 0.01 * (c - x)).collect();
        let region = region_at(self.inst, t, &point)?;
        let mut facets = Vec::new();
        if let Some(r) = &region {
            for f in &r.facets {
                if cuts_into(&node.lo, &node.hi, &node.cuts, f)? {
                    facets.push(f.clone());
                }
            }
        }
        let mut inside = node.cuts.clone();
        inside.extend(facets.iter().cloned());
        let thick = match &region {
            Some(r) if r.facets.iter().all(|f| f.eval(&point) <= f.tol()) => {
                chebyshev_center(&node.lo, &node.hi, &inside)?.is_some_and(|(_, rad)| rad > self.thin)
            }
            _ => false,
        };
        let Some(region) = region.filter(|_| thick) else {
            // Degenerate basis or a sliver of a region: bisect the widest side.
            let k = (0..node.lo.len())
                .max_by(|&a, &b| (node.hi[a] - node.lo[a]).total_cmp(&(node.hi[b] - node.lo[b])))
                .expect("at least one coefficient");
            let mid = 0.5 * (node.lo[k] + node.hi[k]);
            let mut g = vec![0.0; node.lo.len()];
            g[k] = 1.0;
            let below = Cut { c: -mid, g };
            let mut a = node.cuts.clone();
            a.push(below.clone());
            let mut b = node.cuts.clone();
            b.push(below.negated());
            return Ok(vec![(a, node.regions.clone()), (b, node.regions.clone())]);
        };
        let mut assigned = node.regions.clone();
        assigned[t] = Some(Arc::new(region));
        let mut children = vec![(inside, assigned)];
        for i in 0..facets.len() {
            let mut c = node.cuts.clone();
            c.extend(facets[..i].iter().cloned());
            c.push(facets[i].negated());
            children.push((c, node.regions.clone()));
        }
        Ok(children)
    }
}

/// Minimize the mean assessed cost over a box of trainable θ. `seeds` (full θ
/// vectors, e.g. least squares and a trained solution) are clamped into the box
/// and evaluated as initial incumbents.
pub fn solve_bnb(inst: &KktInstance<'_>, opts: &BnbOptions, seeds: &[ThetaVector]) -> Result<BnbResult, ExactError> {
    let start = Instant::now();
    let d = inst.dim();
    let (lo, hi): (Vec<f64>, Vec<f64>) = match &opts.theta_box {
        Some(b) if b.len() != d => return Err(ExactError::Box(format!("{} intervals for {d} coefficients", b.len()))),
        Some(b) => b.iter().copied().unzip(),
        None => (vec![-opts.bound; d], vec![opts.bound; d]),
    };
    if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
        return Err(ExactError::Box("intervals must be finite with lower ≤ upper".into()));
    }
    if !(opts.gap_tol >= 0.0) || !(opts.abs_tol >= 0.0) || opts.node_limit == 0 || opts.sample_node_limit == 0 {
        return Err(ExactError::Box("tolerances must be nonnegative and limits positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| ExactError::Box(format!("worker pool: {e}")))?;
    let eval = CostEvaluator::new(inst.model, inst.spec, inst.dataset, opts.jobs)?;
    let mut s = Search { inst, opts, pool, eval, lo: lo.clone(), hi: hi.clone(), best: None, sample_nodes: 0, flat: 0.0, thin: 0.0 };
    let width = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    s.flat = 1e-9 * width.max(1.0);
    s.thin = 1e-6 * width.max(1.0);
    for seed in seeds {
        if seed.len() != inst.base.len() {
            return Err(ExactError::Box(format!("seed has {} coefficients, expected {}", seed.len(), inst.base.len())));
        }
        s.consider(&seed.gather(&inst.trainable))?;
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
    s.consider(&center)?;
    let root = s
        .node(Vec::new(), vec![None; inst.len()], None, 0)?
        .ok_or(ExactError::Relaxation { t: usize::MAX, status: LpStatus::Infeasible })?;
    let mut heap = BinaryHeap::new();
    if !root.is_exact() {
        heap.push(root);
    }
    let mut nodes = 1;
    let mut max_bound_drop = 0.0_f64;
    let status = loop {
        let Some(node) = heap.peek() else { break BnbStatus::Optimal };
        if s.upper() - node.lb <= s.tolerance() {
            break BnbStatus::Optimal;
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() >= t) {
            break BnbStatus::TimeLimit;
        }
        if nodes >= opts.node_limit {
            break BnbStatus::NodeLimit;
        }
        let node = heap.pop().expect("peeked");
        let kids = s.branch(&node)?;
        for (cuts, regions) in kids {
            let child = s.node(cuts, regions, Some(&node), nodes)?;
            nodes += 1;
            // A node with a region for every sample is solved exactly by its LP.
            if let Some(mut child) = child.filter(|c| !c.is_exact()) {
                max_bound_drop = max_bound_drop.max(node.lb - child.lb);
                child.lb = child.lb.max(node.lb);
                if child.lb < s.upper() - s.tolerance() {
                    heap.push(child);
                }
            }
        }
    };
    let (objective, theta) = s.best.clone().expect("the box center is always evaluated");
    let open = heap.peek().map_or(objective, |n| n.lb);
    let lower_bound = open.min(objective);
    let gap = if objective != 0.0 { (objective - lower_bound) / objective.abs() } else { objective - lower_bound };
    let complementarity = inst.complementarity_violation(&theta)?;
    Ok(BnbResult {
        theta: inst.full_theta(&theta),
        objective,
        lower_bound,
        gap,
        status,
        nodes,
        sample_nodes: s.sample_nodes,
        complementarity,
        max_bound_drop,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
