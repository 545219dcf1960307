//! Energy and reserve scheduling (planning) and ex-post redispatch (assessment).
//!
//! Planning uses the planning parameter set and a perturbed objective; assessment
//! uses the actual set, keeps the plan fixed and adds the reserve payments at
//! actual prices as a constant. Both LPs are built once per model as templates;
//! per-sample solves only rewrite the right-hand side and column bounds.
//!
//! Nodal shed and spill columns exist at every bus that carries load or a
//! generator. Every zone gets up and down reserve rows with a shortfall column
//! priced at the planning load-shed penalty, so the planning LP is feasible for
//! any requirement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::forecast::{ForecastError, ForecastSpec, Prediction, ThetaVector};
use crate::lp::{Basis, LinearProgram, LpBuilder, LpError, LpSolution, LpStatus, PerturbationPolicy, RowSense, WarmStart};
use crate::netcase::{PtdfMatrix, SystemCase};

/// Row activity within this distance of a line limit is reported as binding.
const BINDING_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("{which} LP returned {status:?}; complete recourse is violated")]
    NotOptimal { which: &'static str, status: LpStatus },
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchOptions {
    /// Drop all line-flow rows.
    pub copper_plate: bool,
    /// Replace the system balance with one balance row per bus (no transfers).
    pub nodal_balance: bool,
    /// Planning-objective perturbation; assessment is never perturbed.
    pub perturbation: PerturbationPolicy,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self { copper_plate: false, nodal_balance: false, perturbation: PerturbationPolicy::default() }
    }
}

/// Schedule from the planning LP.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub g: Vec<f64>,
    pub r_up: Vec<f64>,
    pub r_dn: Vec<f64>,
    /// Unperturbed planning objective.
    pub objective: f64,
    pub shed: f64,
    pub spill: f64,
    /// Unmet up/down requirement per zone.
    pub shortfall_up: Vec<f64>,
    pub shortfall_dn: Vec<f64>,
    pub basis: Option<Basis>,
}

/// Ex-post redispatch of a plan against realized demand.
#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentResult {
    pub g: Vec<f64>,
    /// Per case bus.
    pub shed: Vec<f64>,
    pub spill: Vec<f64>,
    pub energy_cost: f64,
    pub reserve_cost: f64,
    pub penalty_cost: f64,
    pub cost: f64,
    /// Names of binding line rows and of generators at an adjustment limit.
    pub binding: Vec<String>,
}

/// Per-sample warm-start state; one per sample index, never shared.
#[derive(Debug, Clone, Default)]
pub struct SampleCache {
    pub planning: WarmStart,
    pub assessment: WarmStart,
}

impl SampleCache {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
struct Layout {
    g: Vec<usize>,
    r_up: Vec<usize>,
    r_dn: Vec<usize>,
    /// (case bus, column) pairs.
    shed: Vec<(usize, usize)>,
    spill: Vec<(usize, usize)>,
    short_up: Vec<usize>,
    short_dn: Vec<usize>,
    /// Balance rows with the buses whose demand they carry.
    balance: Vec<(usize, Vec<usize>)>,
    /// (row, line, direction): `+1` for the `≤ F` row, `−1` for the `≥ −F` row.
    lines: Vec<(usize, usize, f64)>,
    zone_up: Vec<usize>,
    zone_dn: Vec<usize>,
}

/// Planning LP whose rhs is affine in the forecast: `rhs = base + S·ŷ`, with
/// `ŷ = [D̂ per case bus, R̂_up per zone, R̂_dn per zone]`.
#[derive(Debug, Clone)]
pub struct PlanningTemplate {
    pub lp: LinearProgram,
    /// Sparse rows of `S`: `(forecast index, coefficient)`.
    pub sensitivity: Vec<Vec<(usize, f64)>>,
    pub n_forecast: usize,
}

impl PlanningTemplate {
    pub fn rhs(&self, y_hat: &[f64]) -> Vec<f64> {
        self.lp
            .rhs
            .iter()
            .zip(&self.sensitivity)
            .map(|(b, row)| b + row.iter().map(|&(k, a)| a * y_hat[k]).sum::<f64>())
            .collect()
    }
}

/// Planning and assessment LP templates for one case.
#[derive(Debug, Clone)]
pub struct DispatchModel {
    case: SystemCase,
    opts: DispatchOptions,
    gen_bus: Vec<usize>,
    gen_zone: Vec<Option<usize>>,
    planning: PlanningTemplate,
    plan_layout: Layout,
    assessment: LinearProgram,
    assess_layout: Layout,
    /// Per line: PTDF row (empty when the line is unlimited or dropped).
    ptdf_rows: Vec<Vec<f64>>,
}

struct Side<'a> {
    cost: &'a [f64],
    p_up: &'a [f64],
    p_dn: &'a [f64],
    load_shed: f64,
    spill: f64,
    limit: Vec<Option<f64>>,
}

impl DispatchModel {
    pub fn new(case: &SystemCase, ptdf: &PtdfMatrix, opts: DispatchOptions) -> Result<Self, DispatchError> {
        let nb = case.n_buses();
        if ptdf.n_buses != nb || ptdf.n_lines != case.lines.len() {
            return Err(DispatchError::Dimension(format!(
                "PTDF is {}×{}, case has {} lines and {nb} buses",
                ptdf.n_lines,
                ptdf.n_buses,
                case.lines.len()
            )));
        }
        let inc = case.incidence();
        let mut active = vec![false; nb];
        for (b, bus) in case.buses.iter().enumerate() {
            active[b] = bus.demand > 0.0;
        }
        for &b in &inc.gen_bus {
            active[b] = true;
        }
        let ptdf_rows: Vec<Vec<f64>> = (0..ptdf.n_lines).map(|l| ptdf.row(l).to_vec()).collect();
        let plan_side = Side {
            cost: &case.tilde.cost,
            p_up: &case.tilde.p_up,
            p_dn: &case.tilde.p_dn,
            load_shed: case.tilde.penalties.load_shed,
            spill: case.tilde.penalties.spill,
            limit: case.tilde.limit.clone(),
        };
        let actual_cost: Vec<f64> = case.generators.iter().map(|g| g.cost).collect();
        let assess_side = Side {
            cost: &actual_cost,
            p_up: &[],
            p_dn: &[],
            load_shed: case.penalties.load_shed,
            spill: case.penalties.spill,
            limit: case.lines.iter().map(|l| l.limit).collect(),
        };
        let (plan_lp, plan_layout) = build(case, &inc.gen_bus, &inc.gen_zone, &active, &ptdf_rows, &plan_side, &opts, true)?;
        let (assess_lp, assess_layout) =
            build(case, &inc.gen_bus, &inc.gen_zone, &active, &ptdf_rows, &assess_side, &opts, false)?;
        let nz = case.n_zones();
        let n_forecast = nb + 2 * nz;
        let mut sensitivity = vec![Vec::new(); plan_lp.n_rows()];
        for (row, buses) in &plan_layout.balance {
            sensitivity[*row] = buses.iter().map(|&b| (b, 1.0)).collect();
        }
        for &(row, l, _) in &plan_layout.lines {
            sensitivity[row] = (0..nb).filter(|&b| ptdf_rows[l][b] != 0.0).map(|b| (b, ptdf_rows[l][b])).collect();
        }
        for (z, &row) in plan_layout.zone_up.iter().enumerate() {
            sensitivity[row] = vec![(nb + z, 1.0)];
        }
        for (z, &row) in plan_layout.zone_dn.iter().enumerate() {
            sensitivity[row] = vec![(nb + nz + z, 1.0)];
        }
        Ok(Self {
            case: case.clone(),
            opts,
            gen_bus: inc.gen_bus,
            gen_zone: inc.gen_zone,
            planning: PlanningTemplate { lp: plan_lp, sensitivity, n_forecast },
            plan_layout,
            assessment: assess_lp,
            assess_layout,
            ptdf_rows,
        })
    }

    pub fn case(&self) -> &SystemCase {
        &self.case
    }

    pub fn options(&self) -> &DispatchOptions {
        &self.opts
    }

    /// Planning template with the rhs at a zero forecast.
    pub fn planning_template(&self) -> &PlanningTemplate {
        &self.planning
    }

    /// Planning-LP column indices of generation, up and down reserves.
    pub fn plan_columns(&self) -> (&[usize], &[usize], &[usize]) {
        (&self.plan_layout.g, &self.plan_layout.r_up, &self.plan_layout.r_dn)
    }

    /// Forecast vector `ŷ` in template order from per-bus demand and per-zone reserves.
    pub fn forecast_vector(&self, demand: &[f64], r_up: &[f64], r_dn: &[f64]) -> Result<Vec<f64>, DispatchError> {
        let (nb, nz) = (self.case.n_buses(), self.case.n_zones());
        if demand.len() != nb || r_up.len() != nz || r_dn.len() != nz {
            return Err(DispatchError::Dimension(format!(
                "forecast has {} demands and {}/{} reserves; case has {nb} buses and {nz} zones",
                demand.len(),
                r_up.len(),
                r_dn.len()
            )));
        }
        if r_up.iter().chain(r_dn).any(|r| !(*r >= 0.0)) {
            return Err(DispatchError::Dimension("reserve requirements must be nonnegative".into()));
        }
        let mut y = Vec::with_capacity(nb + 2 * nz);
        y.extend_from_slice(demand);
        y.extend_from_slice(r_up);
        y.extend_from_slice(r_dn);
        Ok(y)
    }

    /// Planning LP for forecast demand per case bus and requirements per zone.
    pub fn planning_lp(&self, demand: &[f64], r_up: &[f64], r_dn: &[f64]) -> Result<LinearProgram, DispatchError> {
        let y = self.forecast_vector(demand, r_up, r_dn)?;
        let mut lp = self.planning.lp.clone();
        lp.rhs = self.planning.rhs(&y);
        Ok(lp)
    }

    pub fn plan(
        &self,
        demand: &[f64],
        r_up: &[f64],
        r_dn: &[f64],
        warm: Option<&mut WarmStart>,
    ) -> Result<DispatchPlan, DispatchError> {
        let lp = self.planning_lp(demand, r_up, r_dn)?;
        let sol = match warm {
            Some(w) => w.solve(&lp, &self.opts.perturbation)?,
            None => crate::lp::solve(&lp, None, &self.opts.perturbation)?,
        };
        self.plan_from_solution(&sol)
    }

    /// Read a plan out of an optimal planning-LP solution.
    pub fn plan_from_solution(&self, sol: &LpSolution) -> Result<DispatchPlan, DispatchError> {
        if sol.status != LpStatus::Optimal {
            return Err(DispatchError::NotOptimal { which: "planning", status: sol.status });
        }
        let l = &self.plan_layout;
        let pick = |cols: &[usize]| -> Vec<f64> { cols.iter().map(|&j| sol.x[j].max(0.0)).collect() };
        Ok(DispatchPlan {
            g: pick(&l.g),
            r_up: pick(&l.r_up),
            r_dn: pick(&l.r_dn),
            objective: sol.objective,
            shed: l.shed.iter().map(|&(_, j)| sol.x[j]).sum(),
            spill: l.spill.iter().map(|&(_, j)| sol.x[j]).sum(),
            shortfall_up: pick(&l.short_up),
            shortfall_dn: pick(&l.short_dn),
            basis: sol.basis.clone(),
        })
    }

    fn check_plan(&self, plan: &DispatchPlan) -> Result<(), DispatchError> {
        let ng = self.case.n_generators();
        if plan.g.len() != ng || plan.r_up.len() != ng || plan.r_dn.len() != ng {
            return Err(DispatchError::Dimension(format!("plan does not cover {ng} generators")));
        }
        Ok(())
    }

    /// Assessment LP: generation bounded to `[g* − r_dn*, g* + r_up*]`.
    pub fn assessment_lp(&self, plan: &DispatchPlan, demand: &[f64]) -> Result<LinearProgram, DispatchError> {
        self.check_plan(plan)?;
        let lo: Vec<f64> = (0..plan.g.len()).map(|i| (plan.g[i] - plan.r_dn[i]).max(0.0)).collect();
        let hi: Vec<f64> = (0..plan.g.len()).map(|i| (plan.g[i] + plan.r_up[i]).max(lo[i])).collect();
        self.assessment_with_bounds(&lo, &hi, demand)
    }

    /// Assessment LP at `demand` with generation in `[0, ∞)`, plus the generation
    /// column of each generator. Callers add the plan-dependent bounds as rows.
    pub fn assessment_skeleton(&self, demand: &[f64]) -> Result<(LinearProgram, Vec<usize>), DispatchError> {
        let ng = self.case.n_generators();
        let lp = self.assessment_with_bounds(&vec![0.0; ng], &vec![f64::INFINITY; ng], demand)?;
        Ok((lp, self.assess_layout.g.clone()))
    }

    /// Planning-LP rows of the zonal reserve requirements (up, down).
    pub fn reserve_rows(&self) -> (&[usize], &[usize]) {
        (&self.plan_layout.zone_up, &self.plan_layout.zone_dn)
    }

    fn assessment_with_bounds(&self, lo: &[f64], hi: &[f64], demand: &[f64]) -> Result<LinearProgram, DispatchError> {
        let nb = self.case.n_buses();
        if demand.len() != nb {
            return Err(DispatchError::Dimension(format!("{} demands for {nb} buses", demand.len())));
        }
        let mut lp = self.assessment.clone();
        let l = &self.assess_layout;
        for (i, &j) in l.g.iter().enumerate() {
            lp.lower[j] = lo[i];
            lp.upper[j] = hi[i];
        }
        for (row, buses) in &l.balance {
            lp.rhs[*row] = buses.iter().map(|&b| demand[b]).sum();
        }
        for &(row, line, _) in &l.lines {
            let flow: f64 = self.ptdf_rows[line].iter().zip(demand).map(|(a, d)| a * d).sum();
            lp.rhs[row] = self.assessment.rhs[row] + flow;
        }
        Ok(lp)
    }

    pub fn assess(
        &self,
        plan: &DispatchPlan,
        demand: &[f64],
        warm: Option<&mut WarmStart>,
    ) -> Result<AssessmentResult, DispatchError> {
        let lp = self.assessment_lp(plan, demand)?;
        let sol = solve_plain(&lp, warm)?;
        let reserve_cost: f64 = self
            .case
            .generators
            .iter()
            .enumerate()
            .map(|(i, g)| g.p_up * plan.r_up[i] + g.p_dn * plan.r_dn[i])
            .sum();
        Ok(self.assessment_result(&lp, &sol, reserve_cost))
    }

    fn assessment_result(&self, lp: &LinearProgram, sol: &LpSolution, reserve_cost: f64) -> AssessmentResult {
        let l = &self.assess_layout;
        let nb = self.case.n_buses();
        let g: Vec<f64> = l.g.iter().map(|&j| sol.x[j]).collect();
        let mut shed = vec![0.0; nb];
        let mut spill = vec![0.0; nb];
        for &(b, j) in &l.shed {
            shed[b] = sol.x[j];
        }
        for &(b, j) in &l.spill {
            spill[b] = sol.x[j];
        }
        let energy_cost: f64 = self.case.generators.iter().zip(&g).map(|(gen, x)| gen.cost * x).sum();
        let penalty_cost = self.case.penalties.load_shed * shed.iter().sum::<f64>()
            + self.case.penalties.spill * spill.iter().sum::<f64>();
        let act = lp.activities(&sol.x);
        let mut binding = Vec::new();
        for &(row, line, sign) in &l.lines {
            if sign > 0.0 && (act[row] - lp.rhs[row]).abs() <= BINDING_TOL * (1.0 + lp.rhs[row].abs()) {
                binding.push(format!("line {} forward", self.case.lines[line].id));
            } else if sign < 0.0 && (act[row] - lp.rhs[row]).abs() <= BINDING_TOL * (1.0 + lp.rhs[row].abs()) {
                binding.push(format!("line {} reverse", self.case.lines[line].id));
            }
        }
        for (i, &j) in l.g.iter().enumerate() {
            if lp.upper[j] > lp.lower[j] {
                if sol.x[j] >= lp.upper[j] - BINDING_TOL {
                    binding.push(format!("generator {} at upper limit", self.case.generators[i].id));
                } else if sol.x[j] <= lp.lower[j] + BINDING_TOL {
                    binding.push(format!("generator {} at lower limit", self.case.generators[i].id));
                }
            }
        }
        AssessmentResult {
            g,
            shed,
            spill,
            energy_cost,
            reserve_cost,
            penalty_cost,
            cost: sol.objective + reserve_cost,
            binding,
        }
    }

    /// Cost with generation free in `[0, G]` and no reserve payment.
    pub fn perfect_information_cost(&self, demand: &[f64]) -> Result<f64, DispatchError> {
        let lo = vec![0.0; self.case.n_generators()];
        let hi: Vec<f64> = self.case.generators.iter().map(|g| g.capacity).collect();
        let lp = self.assessment_with_bounds(&lo, &hi, demand)?;
        Ok(solve_plain(&lp, None)?.objective)
    }

    /// Spread per-dataset-bus values over case buses (zeros elsewhere).
    pub fn expand_demand(&self, bus_ids: &[u32], values: &[f64]) -> Result<Vec<f64>, DispatchError> {
        let mut d = vec![0.0; self.case.n_buses()];
        for (id, v) in bus_ids.iter().zip(values) {
            let b = self
                .case
                .bus_index(*id)
                .ok_or_else(|| DispatchError::Dimension(format!("dataset bus {id} is not in the case")))?;
            d[b] = *v;
        }
        Ok(d)
    }

    /// Forecast, plan and assess sample `t`.
    pub fn evaluate_sample(
        &self,
        spec: &ForecastSpec,
        theta: &ThetaVector,
        dataset: &Dataset,
        t: usize,
        cache: Option<&mut SampleCache>,
    ) -> Result<SampleOutcome, DispatchError> {
        let pred = spec.predict(theta, dataset.features(t))?;
        let realized = self.expand_demand(dataset.bus_ids(), dataset.demand(t))?;
        self.evaluate_prediction(&pred, dataset.bus_ids(), &realized, cache)
    }

    /// Plan against `pred` (demand per dataset bus, reserves clamped) and assess
    /// against realized demand per case bus.
    pub fn evaluate_prediction(
        &self,
        pred: &Prediction,
        bus_ids: &[u32],
        realized: &[f64],
        cache: Option<&mut SampleCache>,
    ) -> Result<SampleOutcome, DispatchError> {
        let d_hat = self.expand_demand(bus_ids, &pred.demand)?;
        let r_up: Vec<f64> = pred.r_up.iter().map(|r| r.max(0.0)).collect();
        let r_dn: Vec<f64> = pred.r_dn.iter().map(|r| r.max(0.0)).collect();
        let (plan, assessment) = match cache {
            Some(c) => {
                let plan = self.plan(&d_hat, &r_up, &r_dn, Some(&mut c.planning))?;
                let a = self.assess(&plan, realized, Some(&mut c.assessment))?;
                (plan, a)
            }
            None => {
                let plan = self.plan(&d_hat, &r_up, &r_dn, None)?;
                let a = self.assess(&plan, realized, None)?;
                (plan, a)
            }
        };
        Ok(SampleOutcome { cost: assessment.cost, forecast: d_hat, plan, assessment })
    }

    /// Generator bus and zone indices.
    pub fn generator_location(&self, i: usize) -> (usize, Option<usize>) {
        (self.gen_bus[i], self.gen_zone[i])
    }
}

/// Result of one forecast-plan-assess pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub cost: f64,
    /// Forecast demand per case bus.
    pub forecast: Vec<f64>,
    pub plan: DispatchPlan,
    pub assessment: AssessmentResult,
}

fn solve_plain(lp: &LinearProgram, warm: Option<&mut WarmStart>) -> Result<LpSolution, DispatchError> {
    let none = PerturbationPolicy::none();
    let sol = match warm {
        Some(w) => w.solve(lp, &none)?,
        None => crate::lp::solve(lp, None, &none)?,
    };
    if sol.status != LpStatus::Optimal {
        return Err(DispatchError::NotOptimal { which: "assessment", status: sol.status });
    }
    Ok(sol)
}

#[allow(clippy::too_many_arguments)]
fn build(
    case: &SystemCase,
    gen_bus: &[usize],
    gen_zone: &[Option<usize>],
    active: &[bool],
    ptdf_rows: &[Vec<f64>],
    side: &Side<'_>,
    opts: &DispatchOptions,
    planning: bool,
) -> Result<(LinearProgram, Layout), DispatchError> {
    let nb = case.n_buses();
    let ng = case.n_generators();
    let nz = case.n_zones();
    let mut b = LpBuilder::new();
    let inf = f64::INFINITY;
    let mut lay = Layout {
        g: Vec::new(),
        r_up: Vec::new(),
        r_dn: Vec::new(),
        shed: Vec::new(),
        spill: Vec::new(),
        short_up: Vec::new(),
        short_dn: Vec::new(),
        balance: Vec::new(),
        lines: Vec::new(),
        zone_up: Vec::new(),
        zone_dn: Vec::new(),
    };
    for (i, g) in case.generators.iter().enumerate() {
        lay.g.push(b.add_col(format!("g_{}", g.id), side.cost[i], 0.0, inf));
    }
    if planning {
        for (i, g) in case.generators.iter().enumerate() {
            lay.r_up.push(b.add_col(format!("rup_{}", g.id), side.p_up[i], 0.0, g.rbar_up));
        }
        for (i, g) in case.generators.iter().enumerate() {
            lay.r_dn.push(b.add_col(format!("rdn_{}", g.id), side.p_dn[i], 0.0, g.rbar_dn));
        }
    }
    for bus in 0..nb {
        if active[bus] {
            let id = case.buses[bus].id;
            lay.shed.push((bus, b.add_col(format!("shed_{id}"), side.load_shed, 0.0, inf)));
            lay.spill.push((bus, b.add_col(format!("spill_{id}"), side.spill, 0.0, inf)));
        }
    }
    if planning {
        for z in &case.zones {
            lay.short_up.push(b.add_col(format!("short_up_{}", z.id), side.load_shed, 0.0, inf));
        }
        for z in &case.zones {
            lay.short_dn.push(b.add_col(format!("short_dn_{}", z.id), side.load_shed, 0.0, inf));
        }
    }
    let shed_of = |bus: usize| lay.shed.iter().find(|s| s.0 == bus).map(|s| s.1);
    let spill_of = |bus: usize| lay.spill.iter().find(|s| s.0 == bus).map(|s| s.1);

    // Balance: Σ g − Σ spill + Σ shed = Σ demand (system-wide or per bus).
    let groups: Vec<Vec<usize>> =
        if opts.nodal_balance { (0..nb).filter(|&x| active[x]).map(|x| vec![x]).collect() } else { vec![(0..nb).collect()] };
    let mut balance_rows = Vec::new();
    for grp in groups {
        let mut coefs = Vec::new();
        for (i, &gb) in gen_bus.iter().enumerate() {
            if grp.contains(&gb) {
                coefs.push((lay.g[i], 1.0));
            }
        }
        for &bus in &grp {
            if let Some(j) = shed_of(bus) {
                coefs.push((j, 1.0));
            }
            if let Some(j) = spill_of(bus) {
                coefs.push((j, -1.0));
            }
        }
        let name = if grp.len() == 1 && opts.nodal_balance {
            format!("balance_{}", case.buses[grp[0]].id)
        } else {
            "balance".to_string()
        };
        let row = b.add_row(name, &coefs, RowSense::Eq, 0.0);
        balance_rows.push((row, grp));
    }
    lay.balance = balance_rows;

    // Flow limits: −F ≤ B(Mg + shed − spill − D) ≤ F, demand moved to the rhs.
    if !opts.copper_plate && !opts.nodal_balance {
        for (l, line) in case.lines.iter().enumerate() {
            let Some(f) = side.limit[l] else { continue };
            let row = &ptdf_rows[l];
            let mut coefs = Vec::new();
            for (i, &gb) in gen_bus.iter().enumerate() {
                if row[gb] != 0.0 {
                    coefs.push((lay.g[i], row[gb]));
                }
            }
            for &(bus, j) in &lay.shed {
                if row[bus] != 0.0 {
                    coefs.push((j, row[bus]));
                }
            }
            for &(bus, j) in &lay.spill {
                if row[bus] != 0.0 {
                    coefs.push((j, -row[bus]));
                }
            }
            let up = b.add_row(format!("flow_{}_fwd", line.id), &coefs, RowSense::Le, f);
            lay.lines.push((up, l, 1.0));
            let dn = b.add_row(format!("flow_{}_rev", line.id), &coefs, RowSense::Ge, -f);
            lay.lines.push((dn, l, -1.0));
        }
    }

    if planning {
        for (z, zone) in case.zones.iter().enumerate() {
            let mut coefs: Vec<(usize, f64)> =
                (0..ng).filter(|&i| gen_zone[i] == Some(z)).map(|i| (lay.r_up[i], 1.0)).collect();
            coefs.push((lay.short_up[z], 1.0));
            lay.zone_up.push(b.add_row(format!("reserve_up_{}", zone.id), &coefs, RowSense::Eq, 0.0));
        }
        for (z, zone) in case.zones.iter().enumerate() {
            let mut coefs: Vec<(usize, f64)> =
                (0..ng).filter(|&i| gen_zone[i] == Some(z)).map(|i| (lay.r_dn[i], 1.0)).collect();
            coefs.push((lay.short_dn[z], 1.0));
            lay.zone_dn.push(b.add_row(format!("reserve_dn_{}", zone.id), &coefs, RowSense::Eq, 0.0));
        }
        for (i, g) in case.generators.iter().enumerate() {
            b.add_row(format!("cap_{}", g.id), &[(lay.g[i], 1.0), (lay.r_up[i], 1.0)], RowSense::Le, case.tilde.capacity[i]);
        }
        for (i, g) in case.generators.iter().enumerate() {
            b.add_row(format!("floor_{}", g.id), &[(lay.g[i], 1.0), (lay.r_dn[i], -1.0)], RowSense::Ge, 0.0);
        }
    }
    debug_assert!(nz == case.zones.len());
    Ok((b.build()?, lay))
}
