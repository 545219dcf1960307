//! Bounded-variable two-phase primal simplex on a dense tableau.
//!
//! Computational form: every row `a_i x ≶ b_i` becomes `a_i x + s_i = 0` where the
//! logical `s_i` carries the row bounds (`≤ b` gives `s ≥ −b`, `≥ b` gives `s ≤ −b`,
//! `= b` fixes `s = −b`). The logicals form the initial basis. Phase 1 attaches an
//! artificial to each row whose basic value violates its bounds; artificials are
//! never stored as columns because a basic artificial always has a unit column and
//! a nonbasic one is discarded.

use std::hash::Hasher;

use super::{Basis, Fnv, LinearProgram, LpError, LpSolution, LpStatus, PerturbationPolicy, RowSense, VarStatus};

const ART: usize = usize::MAX;
const INF: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub pivot_tol: f64,
    /// Reduced-cost tolerance for pricing.
    pub opt_tol: f64,
    pub comp_tol: f64,
    pub max_iters: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Pivots on a cached tableau before it is rebuilt from the original matrix.
    pub refactor_after: usize,
    pub compute_duals: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            pivot_tol: 1e-9,
            opt_tol: 1e-10,
            comp_tol: 1e-6,
            max_iters: 100_000,
            bland_after: 50,
            refactor_after: 2_000,
            compute_duals: true,
        }
    }
}

/// Solve with default options, optionally starting from `warm`.
pub fn solve(lp: &LinearProgram, warm: Option<&Basis>, perturb: &PerturbationPolicy) -> Result<LpSolution, LpError> {
    solve_with(lp, warm, perturb, &SolverOptions::default())
}

pub fn solve_with(
    lp: &LinearProgram,
    warm: Option<&Basis>,
    perturb: &PerturbationPolicy,
    opts: &SolverOptions,
) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let cost = perturb.apply(&lp.objective);
    let mut eng = Engine::cold(lp, cost);
    if let Some(b) = warm {
        if b.basic.len() == eng.m && b.status.len() == eng.nt {
            eng.refactor(lp, &b.basic, Some(&b.status));
        }
    }
    eng.run(lp, opts)
}

/// Tableau cache for repeated solves of one LP structure with changing rhs and bounds.
///
/// Reuse requires an identical matrix and perturbed objective; otherwise the solve
/// starts cold and replaces the cache.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    cached: Option<(u64, Engine)>,
    hits: usize,
}

impl WarmStart {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.cached = None;
    }

    /// Number of solves that reused the cached tableau.
    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn solve(&mut self, lp: &LinearProgram, perturb: &PerturbationPolicy) -> Result<LpSolution, LpError> {
        self.solve_with(lp, perturb, &SolverOptions::default())
    }

    pub fn solve_with(
        &mut self,
        lp: &LinearProgram,
        perturb: &PerturbationPolicy,
        opts: &SolverOptions,
    ) -> Result<LpSolution, LpError> {
        let cost = perturb.apply(&lp.objective);
        let key = structure_key(lp, &cost);
        let mut eng = match self.cached.take() {
            Some((k, mut eng)) if k == key => {
                self.hits += 1;
                eng.load_bounds(lp);
                if eng.pivots_since_refactor > opts.refactor_after {
                    let head = eng.head.clone();
                    let stat = eng.stat.clone();
                    eng.refactor(lp, &head, Some(&stat));
                }
                eng
            }
            _ => {
                lp.validate()?;
                Engine::cold(lp, cost)
            }
        };
        let res = eng.run(lp, opts);
        if res.is_ok() {
            self.cached = Some((key, eng));
        }
        res
    }
}

fn structure_key(lp: &LinearProgram, cost: &[f64]) -> u64 {
    let mut h = Fnv::default();
    h.write_u64(lp.matrix().fingerprint());
    for c in cost {
        h.write_u64(c.to_bits());
    }
    h.finish()
}

enum Step {
    Progress,
    Optimal,
    Unbounded,
}

#[derive(Debug, Clone)]
struct Engine {
    m: usize,
    n: usize,
    nt: usize,
    tab: Vec<f64>,
    head: Vec<usize>,
    stat: Vec<VarStatus>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    beta: Vec<f64>,
    d: Vec<f64>,
    scratch: Vec<f64>,
    iters: usize,
    pivots_since_refactor: usize,
}

impl Engine {
    fn cold(lp: &LinearProgram, structural_cost: Vec<f64>) -> Self {
        let m = lp.n_rows();
        let n = lp.n_cols();
        let nt = n + m;
        let mut tab = vec![0.0; m * nt];
        for i in 0..m {
            tab[i * nt..i * nt + n].copy_from_slice(lp.matrix().row(i));
            tab[i * nt + n + i] = 1.0;
        }
        let mut cost = structural_cost;
        cost.resize(nt, 0.0);
        let mut stat = vec![VarStatus::AtLower; nt];
        for s in stat.iter_mut().skip(n) {
            *s = VarStatus::Basic;
        }
        let mut eng = Self {
            m,
            n,
            nt,
            tab,
            head: (n..nt).collect(),
            stat,
            lo: vec![0.0; nt],
            hi: vec![0.0; nt],
            cost,
            beta: vec![0.0; m],
            d: vec![0.0; nt],
            scratch: vec![0.0; nt],
            iters: 0,
            pivots_since_refactor: 0,
        };
        eng.load_bounds(lp);
        eng
    }

    fn load_bounds(&mut self, lp: &LinearProgram) {
        let n = self.n;
        self.lo[..n].copy_from_slice(&lp.lower);
        self.hi[..n].copy_from_slice(&lp.upper);
        for i in 0..self.m {
            let b = lp.rhs[i];
            let (l, u) = match lp.senses[i] {
                RowSense::Le => (-b, INF),
                RowSense::Ge => (-INF, -b),
                RowSense::Eq => (-b, -b),
            };
            self.lo[n + i] = l;
            self.hi[n + i] = u;
        }
        self.iters = 0;
    }

    /// Rebuild the tableau from the original matrix with `wanted` as the target basis.
    fn refactor(&mut self, lp: &LinearProgram, wanted: &[usize], status: Option<&[VarStatus]>) {
        let (m, n, nt) = (self.m, self.n, self.nt);
        for i in 0..m {
            self.tab[i * nt..i * nt + n].copy_from_slice(lp.matrix().row(i));
            self.tab[i * nt + n..(i + 1) * nt].fill(0.0);
            self.tab[i * nt + n + i] = 1.0;
        }
        let prev = status.map(|s| s.to_vec());
        self.head = (n..nt).collect();
        for s in self.stat.iter_mut() {
            *s = VarStatus::AtLower;
        }
        for i in 0..m {
            self.stat[n + i] = VarStatus::Basic;
        }
        let mut assigned = vec![false; m];
        for &j in wanted {
            if j == ART || j >= nt {
                continue;
            }
            if j >= n && !assigned[j - n] && self.head[j - n] == j {
                assigned[j - n] = true;
                continue;
            }
            let mut best = None;
            let mut best_abs = 1e-7;
            for r in 0..m {
                if assigned[r] {
                    continue;
                }
                let a = self.tab[r * nt + j].abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(r);
                }
            }
            if let Some(r) = best {
                let leaving = self.head[r];
                self.pivot_tableau(r, j, false);
                self.stat[leaving] = VarStatus::AtLower;
                self.head[r] = j;
                self.stat[j] = VarStatus::Basic;
                assigned[r] = true;
            }
        }
        if let Some(prev) = prev {
            for j in 0..nt {
                if self.stat[j] != VarStatus::Basic && prev[j] != VarStatus::Basic {
                    self.stat[j] = prev[j];
                }
            }
        }
        self.pivots_since_refactor = 0;
    }

    fn normalize_status(&mut self) {
        for j in 0..self.nt {
            let (l, u) = (self.lo[j], self.hi[j]);
            let s = &mut self.stat[j];
            *s = match *s {
                VarStatus::Basic => VarStatus::Basic,
                VarStatus::AtLower if l > -INF => VarStatus::AtLower,
                VarStatus::AtUpper if u < INF => VarStatus::AtUpper,
                _ if l > -INF => VarStatus::AtLower,
                _ if u < INF => VarStatus::AtUpper,
                _ => VarStatus::Free,
            };
        }
    }

    #[inline]
    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.stat[j] {
            VarStatus::AtLower => self.lo[j],
            VarStatus::AtUpper => self.hi[j],
            _ => 0.0,
        }
    }

    fn compute_beta(&mut self) {
        let nt = self.nt;
        let nz: Vec<(usize, f64)> = (0..nt)
            .filter(|&j| self.stat[j] != VarStatus::Basic)
            .map(|j| (j, self.nonbasic_value(j)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        for r in 0..self.m {
            let row = &self.tab[r * nt..(r + 1) * nt];
            let s: f64 = nz.iter().map(|&(j, v)| row[j] * v).sum();
            self.beta[r] = -s;
        }
    }

    fn negate_row(&mut self, r: usize) {
        for v in &mut self.tab[r * self.nt..(r + 1) * self.nt] {
            *v = -*v;
        }
    }

    /// Move infeasible basics to their violated bound and attach artificials.
    fn make_feasible(&mut self, tol: f64) -> bool {
        let mut any = false;
        for r in 0..self.m {
            let b = self.head[r];
            if b == ART {
                if self.beta[r] < 0.0 {
                    self.negate_row(r);
                    self.beta[r] = -self.beta[r];
                }
                any = true;
                continue;
            }
            let x = self.beta[r];
            let (v, st) = if x < self.lo[b] - tol {
                (self.lo[b], VarStatus::AtLower)
            } else if x > self.hi[b] + tol {
                (self.hi[b], VarStatus::AtUpper)
            } else {
                continue;
            };
            let residual = x - v;
            if residual < 0.0 {
                self.negate_row(r);
            }
            self.stat[b] = st;
            self.head[r] = ART;
            self.beta[r] = residual.abs();
            any = true;
        }
        any
    }

    fn max_art(&self) -> f64 {
        (0..self.m).filter(|&r| self.head[r] == ART).map(|r| self.beta[r]).fold(0.0, f64::max)
    }

    fn phase1_costs(&mut self) {
        let nt = self.nt;
        self.d.fill(0.0);
        for r in 0..self.m {
            if self.head[r] == ART {
                let row = &self.tab[r * nt..(r + 1) * nt];
                for (dj, a) in self.d.iter_mut().zip(row) {
                    *dj -= a;
                }
            }
        }
        for j in 0..nt {
            if self.stat[j] == VarStatus::Basic {
                self.d[j] = 0.0;
            }
        }
    }

    fn phase2_costs(&mut self) {
        let nt = self.nt;
        self.d.copy_from_slice(&self.cost);
        for r in 0..self.m {
            let b = self.head[r];
            if b == ART {
                continue;
            }
            let cb = self.cost[b];
            if cb != 0.0 {
                let row = &self.tab[r * nt..(r + 1) * nt];
                for (dj, a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        for j in 0..nt {
            if self.stat[j] == VarStatus::Basic {
                self.d[j] = 0.0;
            }
        }
    }

    fn price(&self, bland: bool, tol: f64) -> Option<(usize, f64)> {
        let mut best = None;
        let mut best_score = 0.0;
        for j in 0..self.nt {
            let dj = self.d[j];
            let dir = match self.stat[j] {
                VarStatus::Basic => continue,
                VarStatus::AtLower if self.hi[j] > self.lo[j] && dj < -tol => 1.0,
                VarStatus::AtUpper if self.hi[j] > self.lo[j] && dj > tol => -1.0,
                VarStatus::Free if dj < -tol => 1.0,
                VarStatus::Free if dj > tol => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    #[inline]
    fn basic_bounds(&self, r: usize, phase: u8) -> (f64, f64) {
        let b = self.head[r];
        if b == ART {
            (0.0, if phase == 1 { INF } else { 0.0 })
        } else {
            (self.lo[b], self.hi[b])
        }
    }

    /// Returns `Some((row, step))` for a pivot, `Some((usize::MAX, step))` for a bound flip,
    /// `None` when the ray is unbounded.
    fn ratio_test(&self, q: usize, dir: f64, phase: u8, bland: bool, ptol: f64) -> Option<(usize, f64)> {
        let nt = self.nt;
        let mut tmin = INF;
        for r in 0..self.m {
            let a = self.tab[r * nt + q] * dir;
            if a.abs() <= ptol {
                continue;
            }
            let (l, u) = self.basic_bounds(r, phase);
            let t = if a > 0.0 {
                if l == -INF {
                    continue;
                }
                (self.beta[r] - l) / a
            } else {
                if u == INF {
                    continue;
                }
                (u - self.beta[r]) / (-a)
            };
            tmin = tmin.min(t.max(0.0));
        }
        let flip = self.hi[q] - self.lo[q];
        if flip.is_finite() && flip <= tmin {
            return Some((usize::MAX, flip));
        }
        if tmin == INF {
            return None;
        }
        let cutoff = tmin + 1e-12 * (1.0 + tmin);
        let mut pick = usize::MAX;
        let mut pick_key = usize::MAX;
        let mut pick_abs = 0.0;
        for r in 0..self.m {
            let a = self.tab[r * nt + q] * dir;
            if a.abs() <= ptol {
                continue;
            }
            let (l, u) = self.basic_bounds(r, phase);
            let t = if a > 0.0 {
                if l == -INF {
                    continue;
                }
                (self.beta[r] - l) / a
            } else {
                if u == INF {
                    continue;
                }
                (u - self.beta[r]) / (-a)
            };
            if t.max(0.0) > cutoff {
                continue;
            }
            if bland {
                let key = if self.head[r] == ART { nt + r } else { self.head[r] };
                if key < pick_key {
                    pick_key = key;
                    pick = r;
                }
            } else if a.abs() > pick_abs {
                pick_abs = a.abs();
                pick = r;
            }
        }
        Some((pick, tmin))
    }

    fn pivot_tableau(&mut self, r: usize, q: usize, update_d: bool) {
        let nt = self.nt;
        let piv = self.tab[r * nt + q];
        let inv = 1.0 / piv;
        {
            let row = &mut self.tab[r * nt..(r + 1) * nt];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[q] = 1.0;
            self.scratch.copy_from_slice(row);
        }
        let pr = &self.scratch;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let row = &mut self.tab[i * nt..(i + 1) * nt];
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(pr) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        if update_d {
            let dq = self.d[q];
            if dq != 0.0 {
                for (v, p) in self.d.iter_mut().zip(pr) {
                    *v -= dq * p;
                }
                self.d[q] = 0.0;
            }
        }
        self.pivots_since_refactor += 1;
    }

    fn step(&mut self, phase: u8, bland: bool, opts: &SolverOptions, degenerate: &mut usize) -> Step {
        let Some((q, dir)) = self.price(bland, opts.opt_tol) else {
            return Step::Optimal;
        };
        let Some((r, t)) = self.ratio_test(q, dir, phase, bland, opts.pivot_tol) else {
            return Step::Unbounded;
        };
        let nt = self.nt;
        self.iters += 1;
        if t != 0.0 {
            for i in 0..self.m {
                self.beta[i] -= dir * self.tab[i * nt + q] * t;
            }
        }
        if r == usize::MAX {
            self.stat[q] = match self.stat[q] {
                VarStatus::AtLower => VarStatus::AtUpper,
                _ => VarStatus::AtLower,
            };
            *degenerate = 0;
            return Step::Progress;
        }
        if t <= 1e-12 {
            *degenerate += 1;
        } else {
            *degenerate = 0;
        }
        let entering = self.nonbasic_value(q) + dir * t;
        let leaving = self.head[r];
        if leaving != ART {
            let a = self.tab[r * nt + q] * dir;
            self.stat[leaving] = if a > 0.0 { VarStatus::AtLower } else { VarStatus::AtUpper };
        }
        self.pivot_tableau(r, q, true);
        self.head[r] = q;
        self.stat[q] = VarStatus::Basic;
        self.beta[r] = entering;
        if self.iters % 100 == 0 {
            self.compute_beta();
        }
        Step::Progress
    }

    /// Pivot zero-level artificials out of the basis where a nonzero entry exists.
    fn drive_out_artificials(&mut self, opts: &SolverOptions) {
        let nt = self.nt;
        for r in 0..self.m {
            if self.head[r] != ART {
                continue;
            }
            let mut best = None;
            let mut best_abs = opts.pivot_tol.max(1e-7);
            for j in 0..nt {
                if self.stat[j] == VarStatus::Basic {
                    continue;
                }
                let a = self.tab[r * nt + j].abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                let v = self.nonbasic_value(j);
                self.pivot_tableau(r, j, false);
                self.head[r] = j;
                self.stat[j] = VarStatus::Basic;
                self.beta[r] = v;
            }
        }
    }

    fn iterate(&mut self, phase: u8, opts: &SolverOptions) -> Result<Step, LpError> {
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut rechecks = 0;
        loop {
            if self.iters >= opts.max_iters {
                return Err(LpError::IterationLimit(opts.max_iters));
            }
            if phase == 1 && self.max_art() <= opts.feas_tol {
                return Ok(Step::Optimal);
            }
            match self.step(phase, bland, opts, &mut degenerate) {
                Step::Progress => {
                    if degenerate >= opts.bland_after {
                        bland = true;
                    }
                }
                Step::Optimal => {
                    // Guard against drift in the incrementally updated reduced costs.
                    if rechecks < 2 {
                        rechecks += 1;
                        if phase == 1 {
                            self.phase1_costs();
                        } else {
                            self.phase2_costs();
                        }
                        self.compute_beta();
                        if self.price(bland, opts.opt_tol).is_some() {
                            continue;
                        }
                    }
                    return Ok(Step::Optimal);
                }
                Step::Unbounded => return Ok(Step::Unbounded),
            }
        }
    }

    fn run(&mut self, lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution, LpError> {
        let mut attempt = 0;
        loop {
            self.normalize_status();
            self.compute_beta();
            if self.make_feasible(opts.feas_tol) {
                self.phase1_costs();
                self.iterate(1, opts)?;
                if self.max_art() > opts.feas_tol {
                    return Ok(LpSolution::terminal(LpStatus::Infeasible, self.iters));
                }
                self.drive_out_artificials(opts);
            }
            self.phase2_costs();
            if let Step::Unbounded = self.iterate(2, opts)? {
                return Ok(LpSolution::terminal(LpStatus::Unbounded, self.iters));
            }
            self.compute_beta();
            let sol = self.extract(lp, opts);
            let scale = 1.0 + lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if attempt == 0 && lp.max_violation(&sol.x) > opts.feas_tol * scale {
                attempt += 1;
                let head = self.head.clone();
                let stat = self.stat.clone();
                self.refactor(lp, &head, Some(&stat));
                continue;
            }
            return Ok(sol);
        }
    }

    fn extract(&self, lp: &LinearProgram, opts: &SolverOptions) -> LpSolution {
        let (m, n, nt) = (self.m, self.n, self.nt);
        let mut xall = vec![0.0; nt];
        for j in 0..nt {
            if self.stat[j] != VarStatus::Basic {
                xall[j] = self.nonbasic_value(j);
            }
        }
        for r in 0..m {
            if self.head[r] != ART {
                xall[self.head[r]] = self.beta[r];
            }
        }
        let x: Vec<f64> = xall[..n].to_vec();
        let objective = lp.objective_value(&x);
        let (duals, reduced_costs) = if opts.compute_duals {
            let mut dbar: Vec<f64> = lp.objective.clone();
            dbar.resize(nt, 0.0);
            for r in 0..m {
                let b = self.head[r];
                if b == ART || b >= n {
                    continue;
                }
                let cb = lp.objective[b];
                if cb != 0.0 {
                    let row = &self.tab[r * nt..(r + 1) * nt];
                    for (dj, a) in dbar.iter_mut().zip(row) {
                        *dj -= cb * a;
                    }
                }
            }
            for r in 0..m {
                if self.head[r] != ART {
                    dbar[self.head[r]] = 0.0;
                }
            }
            let duals = (0..m).map(|i| -dbar[n + i]).collect();
            dbar.truncate(n);
            (duals, dbar)
        } else {
            (Vec::new(), Vec::new())
        };
        LpSolution {
            status: LpStatus::Optimal,
            x,
            duals,
            reduced_costs,
            objective,
            basis: Some(Basis { basic: self.head.clone(), status: self.stat.clone() }),
            iterations: self.iters,
        }
    }
}
