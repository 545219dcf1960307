//! Power-system case data: JSON schema, validation, stress transforms, incidence
//! maps and DC power transfer distribution factors.
//!
//! Every case carries two parameter sets. The *actual* set prices the ex-post
//! assessment; the *planning* set (overridable per generator, line and penalty)
//! drives the ex-ante schedule. Planning values default to the actual ones.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid case: {0}")]
    Invariant(String),
    #[error("network: {0}")]
    Network(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Long-run mean load; zero for buses without load.
    #[serde(default)]
    pub demand: f64,
    /// Zone used only to aggregate forecast residuals into reserve requirements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub capacity: f64,
    pub cost: f64,
    pub rbar_up: f64,
    pub rbar_dn: f64,
    pub p_up: f64,
    pub p_dn: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub reactance: f64,
    /// Flow limit; absent means unconstrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Penalties {
    pub load_shed: f64,
    pub spill: f64,
}

/// Planning-side generator overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorOverride {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_dn: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineOverride {
    pub id: u32,
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_shed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spill: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TildeOverrides {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<GeneratorOverride>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<LineOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalties: Option<PenaltyOverride>,
}

/// On-disk JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub demand_factor: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub lines: Vec<Line>,
    pub zones: Vec<Zone>,
    pub penalties: Penalties,
    #[serde(default, skip_serializing_if = "is_default_tilde")]
    pub tilde: TildeOverrides,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

fn is_default_tilde(t: &TildeOverrides) -> bool {
    *t == TildeOverrides::default()
}

/// Resolved planning-side parameters, indexed like the case vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningParams {
    pub capacity: Vec<f64>,
    pub cost: Vec<f64>,
    pub p_up: Vec<f64>,
    pub p_dn: Vec<f64>,
    pub limit: Vec<Option<f64>>,
    pub penalties: Penalties,
}

/// Validated system description.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemCase {
    pub name: String,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub zones: Vec<Zone>,
    pub penalties: Penalties,
    pub tilde: PlanningParams,
    /// Multiplier applied to bus mean loads when generating data.
    pub demand_factor: f64,
    bus_index: HashMap<u32, usize>,
    zone_index: HashMap<u32, usize>,
}

impl SystemCase {
    pub fn from_file_data(file: CaseFile) -> Result<Self, CaseError> {
        let inv = |s: String| Err(CaseError::Invariant(s));
        let mut bus_index = HashMap::new();
        for (i, b) in file.buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return inv(format!("duplicate bus id {}", b.id));
            }
            if !(b.demand >= 0.0 && b.demand.is_finite()) {
                return inv(format!("bus {} has demand {}", b.id, b.demand));
            }
        }
        let mut zone_index = HashMap::new();
        for (i, z) in file.zones.iter().enumerate() {
            if zone_index.insert(z.id, i).is_some() {
                return inv(format!("duplicate zone id {}", z.id));
            }
        }
        for b in &file.buses {
            if let Some(z) = b.zone {
                if !zone_index.contains_key(&z) {
                    return inv(format!("bus {} references unknown zone {z}", b.id));
                }
            }
        }
        let mut gen_index = HashMap::new();
        for (i, g) in file.generators.iter().enumerate() {
            if gen_index.insert(g.id, i).is_some() {
                return inv(format!("duplicate generator id {}", g.id));
            }
            if !bus_index.contains_key(&g.bus) {
                return inv(format!("generator {} references unknown bus {}", g.id, g.bus));
            }
            if let Some(z) = g.zone {
                if !zone_index.contains_key(&z) {
                    return inv(format!("generator {} references unknown zone {z}", g.id));
                }
            }
            for (what, v) in [
                ("capacity", g.capacity),
                ("cost", g.cost),
                ("rbar_up", g.rbar_up),
                ("rbar_dn", g.rbar_dn),
                ("p_up", g.p_up),
                ("p_dn", g.p_dn),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return inv(format!("generator {} has {what} = {v}", g.id));
                }
            }
        }
        let mut line_index = HashMap::new();
        for (i, l) in file.lines.iter().enumerate() {
            if line_index.insert(l.id, i).is_some() {
                return inv(format!("duplicate line id {}", l.id));
            }
            if l.from == l.to {
                return inv(format!("line {} connects bus {} to itself", l.id, l.from));
            }
            for b in [l.from, l.to] {
                if !bus_index.contains_key(&b) {
                    return inv(format!("line {} references unknown bus {b}", l.id));
                }
            }
            if !(l.reactance > 0.0 && l.reactance.is_finite()) {
                return inv(format!("line {} has reactance {}", l.id, l.reactance));
            }
            if let Some(f) = l.limit {
                if !(f > 0.0 && f.is_finite()) {
                    return inv(format!("line {} has limit {f}", l.id));
                }
            }
        }
        let mut tilde = PlanningParams {
            capacity: file.generators.iter().map(|g| g.capacity).collect(),
            cost: file.generators.iter().map(|g| g.cost).collect(),
            p_up: file.generators.iter().map(|g| g.p_up).collect(),
            p_dn: file.generators.iter().map(|g| g.p_dn).collect(),
            limit: file.lines.iter().map(|l| l.limit).collect(),
            penalties: file.penalties,
        };
        for o in &file.tilde.generators {
            let Some(&i) = gen_index.get(&o.id) else {
                return inv(format!("planning override references unknown generator {}", o.id));
            };
            let fields = [
                (&mut tilde.capacity[i], o.capacity, "capacity"),
                (&mut tilde.cost[i], o.cost, "cost"),
                (&mut tilde.p_up[i], o.p_up, "p_up"),
                (&mut tilde.p_dn[i], o.p_dn, "p_dn"),
            ];
            for (slot, v, what) in fields {
                if let Some(v) = v {
                    if !(v >= 0.0 && v.is_finite()) {
                        return inv(format!("planning {what} of generator {} is {v}", o.id));
                    }
                    *slot = v;
                }
            }
        }
        for o in &file.tilde.lines {
            let Some(&i) = line_index.get(&o.id) else {
                return inv(format!("planning override references unknown line {}", o.id));
            };
            if let Some(f) = o.limit {
                if !(f > 0.0 && f.is_finite()) {
                    return inv(format!("planning limit of line {} is {f}", o.id));
                }
            }
            tilde.limit[i] = o.limit;
        }
        if let Some(p) = &file.tilde.penalties {
            if let Some(v) = p.load_shed {
                tilde.penalties.load_shed = v;
            }
            if let Some(v) = p.spill {
                tilde.penalties.spill = v;
            }
        }
        if !(file.demand_factor > 0.0 && file.demand_factor.is_finite()) {
            return inv(format!("demand_factor is {}", file.demand_factor));
        }
        let case = SystemCase {
            name: file.name,
            buses: file.buses,
            generators: file.generators,
            lines: file.lines,
            zones: file.zones,
            penalties: file.penalties,
            tilde,
            demand_factor: file.demand_factor,
            bus_index,
            zone_index,
        };
        check_penalty_order(&case.penalties, case.max_cost(), "actual")?;
        check_penalty_order(&case.tilde.penalties, case.max_planning_cost(), "planning")?;
        Ok(case)
    }

    pub fn to_file_data(&self) -> CaseFile {
        let mut tilde = TildeOverrides::default();
        for (i, g) in self.generators.iter().enumerate() {
            let diff = |a: f64, b: f64| if a != b { Some(a) } else { None };
            let o = GeneratorOverride {
                id: g.id,
                capacity: diff(self.tilde.capacity[i], g.capacity),
                cost: diff(self.tilde.cost[i], g.cost),
                p_up: diff(self.tilde.p_up[i], g.p_up),
                p_dn: diff(self.tilde.p_dn[i], g.p_dn),
            };
            if o.capacity.is_some() || o.cost.is_some() || o.p_up.is_some() || o.p_dn.is_some() {
                tilde.generators.push(o);
            }
        }
        for (i, l) in self.lines.iter().enumerate() {
            if self.tilde.limit[i] != l.limit {
                tilde.lines.push(LineOverride { id: l.id, limit: self.tilde.limit[i] });
            }
        }
        let (p, tp) = (self.penalties, self.tilde.penalties);
        if p != tp {
            tilde.penalties = Some(PenaltyOverride {
                load_shed: (tp.load_shed != p.load_shed).then_some(tp.load_shed),
                spill: (tp.spill != p.spill).then_some(tp.spill),
            });
        }
        CaseFile {
            name: self.name.clone(),
            demand_factor: self.demand_factor,
            buses: self.buses.clone(),
            generators: self.generators.clone(),
            lines: self.lines.clone(),
            zones: self.zones.clone(),
            penalties: self.penalties,
            tilde,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_data()).expect("case serializes")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn zone_index(&self, id: u32) -> Option<usize> {
        self.zone_index.get(&id).copied()
    }

    pub fn max_cost(&self) -> f64 {
        self.generators.iter().map(|g| g.cost).fold(0.0, f64::max)
    }

    pub fn max_planning_cost(&self) -> f64 {
        self.tilde.cost.iter().copied().fold(0.0, f64::max)
    }

    /// Buses with positive mean load, in case order.
    pub fn load_buses(&self) -> Vec<usize> {
        (0..self.buses.len()).filter(|&i| self.buses[i].demand > 0.0).collect()
    }

    /// Zone index of each bus for residual aggregation: the bus's own zone, the sole
    /// zone of a one-zone case, or the zone of the bus's generators; `None` otherwise.
    pub fn bus_zone(&self, bus: usize) -> Option<usize> {
        if let Some(z) = self.buses[bus].zone {
            return self.zone_index(z);
        }
        if self.zones.len() == 1 {
            return Some(0);
        }
        let id = self.buses[bus].id;
        self.generators.iter().filter(|g| g.bus == id).find_map(|g| g.zone).and_then(|z| self.zone_index(z))
    }

    /// Replace both actual and planning penalties, requiring each to exceed every
    /// generator cost so that shedding or spilling is never cheaper than generating.
    pub fn with_penalties(&self, load_shed: f64, spill: f64) -> Result<Self, CaseError> {
        let mut c = self.clone();
        c.penalties = Penalties { load_shed, spill };
        c.tilde.penalties = c.penalties;
        let floor = c.max_cost().max(c.max_planning_cost());
        if !(load_shed > floor && spill > floor && load_shed.is_finite() && spill.is_finite()) {
            return Err(CaseError::Invariant(format!(
                "penalties ({load_shed}, {spill}) must exceed the largest generator cost {floor}"
            )));
        }
        Ok(c)
    }

    pub fn incidence(&self) -> IncidenceMaps {
        IncidenceMaps {
            gen_bus: self.generators.iter().map(|g| self.bus_index[&g.bus]).collect(),
            gen_zone: self.generators.iter().map(|g| g.zone.map(|z| self.zone_index[&z])).collect(),
            n_buses: self.buses.len(),
            n_zones: self.zones.len(),
        }
    }
}

fn check_penalty_order(p: &Penalties, max_cost: f64, which: &str) -> Result<(), CaseError> {
    if !(p.load_shed > p.spill && p.spill > max_cost && p.load_shed.is_finite()) {
        return Err(CaseError::Invariant(format!(
            "{which} penalties must satisfy load_shed > spill > max generator cost ({} > {} > {max_cost})",
            p.load_shed, p.spill
        )));
    }
    Ok(())
}

pub fn parse_case_str(text: &str) -> Result<SystemCase, CaseError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: CaseFile = serde_path_to_error::deserialize(de).map_err(|e| CaseError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    SystemCase::from_file_data(file)
}

pub fn parse_case(path: impl AsRef<Path>) -> Result<SystemCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CaseError::Io { path: path.display().to_string(), source })?;
    parse_case_str(&text)
}

/// Bus-generator (`M`) and zone-generator (`N`) incidence in index form.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMaps {
    pub gen_bus: Vec<usize>,
    pub gen_zone: Vec<Option<usize>>,
    pub n_buses: usize,
    pub n_zones: usize,
}

impl IncidenceMaps {
    /// Dense bus × generator 0/1 matrix.
    pub fn m_matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.gen_bus.len()]; self.n_buses];
        for (g, &b) in self.gen_bus.iter().enumerate() {
            m[b][g] = 1.0;
        }
        m
    }

    /// Dense zone × generator 0/1 matrix.
    pub fn n_matrix(&self) -> Vec<Vec<f64>> {
        let mut n = vec![vec![0.0; self.gen_zone.len()]; self.n_zones];
        for (g, z) in self.gen_zone.iter().enumerate() {
            if let Some(z) = z {
                n[*z][g] = 1.0;
            }
        }
        n
    }
}

/// Stress the case: scale flow limits, set reserve caps and reserve prices as
/// fractions of capacity and energy cost, and record the demand multiplier.
pub fn apply_stress_transforms(
    case: &SystemCase,
    flow_factor: f64,
    demand_factor: f64,
    reserve_cap_frac: f64,
    reserve_price_frac: f64,
) -> Result<SystemCase, CaseError> {
    for (what, v) in [
        ("flow_factor", flow_factor),
        ("demand_factor", demand_factor),
        ("reserve_cap_frac", reserve_cap_frac),
        ("reserve_price_frac", reserve_price_frac),
    ] {
        if !(v > 0.0 && v <= 10.0) {
            return Err(CaseError::Invariant(format!("{what} = {v} outside (0, 10]")));
        }
    }
    let mut c = case.clone();
    for l in &mut c.lines {
        l.limit = l.limit.map(|f| f * flow_factor);
    }
    for f in c.tilde.limit.iter_mut().flatten() {
        *f *= flow_factor;
    }
    for (i, g) in c.generators.iter_mut().enumerate() {
        g.rbar_up = reserve_cap_frac * g.capacity;
        g.rbar_dn = reserve_cap_frac * g.capacity;
        g.p_up = reserve_price_frac * g.cost;
        g.p_dn = reserve_price_frac * g.cost;
        c.tilde.p_up[i] = reserve_price_frac * c.tilde.cost[i];
        c.tilde.p_dn[i] = reserve_price_frac * c.tilde.cost[i];
    }
    c.demand_factor = demand_factor;
    Ok(c)
}

/// Line × bus DC sensitivity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    pub n_lines: usize,
    pub n_buses: usize,
    /// Row-major `n_lines × n_buses`.
    pub data: Vec<f64>,
    pub slack: u32,
}

impl PtdfMatrix {
    pub fn get(&self, line: usize, bus: usize) -> f64 {
        self.data[line * self.n_buses + bus]
    }

    pub fn row(&self, line: usize) -> &[f64] {
        &self.data[line * self.n_buses..(line + 1) * self.n_buses]
    }

    /// Line flows for a nodal injection vector (withdrawal at the slack implied).
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        (0..self.n_lines).map(|l| self.row(l).iter().zip(injections).map(|(a, p)| a * p).sum()).collect()
    }
}

/// Sensitivities `B = diag(1/x)·A·L_r⁻¹` from the reduced Laplacian, slack column zero.
/// `slack` defaults to the lowest bus id.
pub fn compute_ptdf(case: &SystemCase, slack: Option<u32>) -> Result<PtdfMatrix, CaseError> {
    let nb = case.n_buses();
    let nl = case.lines.len();
    let slack_id = match slack {
        Some(s) => s,
        None => case.buses.iter().map(|b| b.id).min().ok_or_else(|| CaseError::Network("case has no buses".into()))?,
    };
    let s = case.bus_index(slack_id).ok_or_else(|| CaseError::Network(format!("slack bus {slack_id} not found")))?;
    if nl == 0 {
        if nb > 1 {
            return Err(CaseError::Network(format!("{nb} buses but no lines: network is disconnected")));
        }
        return Ok(PtdfMatrix { n_lines: 0, n_buses: nb, data: Vec::new(), slack: slack_id });
    }
    let ends: Vec<(usize, usize)> =
        case.lines.iter().map(|l| (case.bus_index(l.from).unwrap(), case.bus_index(l.to).unwrap())).collect();
    let mut adj = vec![Vec::new(); nb];
    for &(a, b) in &ends {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; nb];
    let mut queue = VecDeque::from([s]);
    seen[s] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(b) = seen.iter().position(|x| !x) {
        return Err(CaseError::Network(format!("bus {} is not connected to slack bus {slack_id}", case.buses[b].id)));
    }
    // Reduced index: buses other than the slack.
    let red: Vec<Option<usize>> = {
        let mut k = 0;
        (0..nb)
            .map(|i| {
                if i == s {
                    None
                } else {
                    k += 1;
                    Some(k - 1)
                }
            })
            .collect()
    };
    let n = nb - 1;
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for (l, &(a, b)) in ends.iter().enumerate() {
        let y = 1.0 / case.lines[l].reactance;
        if let Some(i) = red[a] {
            lap[(i, i)] += y;
        }
        if let Some(j) = red[b] {
            lap[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (red[a], red[b]) {
            lap[(i, j)] -= y;
            lap[(j, i)] -= y;
        }
    }
    let inv = lap.clone().try_inverse().ok_or_else(|| CaseError::Network("reduced Laplacian is singular".into()))?;
    let mut data = vec![0.0; nl * nb];
    for (l, &(a, b)) in ends.iter().enumerate() {
        let y = 1.0 / case.lines[l].reactance;
        for bus in 0..nb {
            let Some(k) = red[bus] else { continue };
            let ta = red[a].map_or(0.0, |i| inv[(i, k)]);
            let tb = red[b].map_or(0.0, |j| inv[(j, k)]);
            data[l * nb + bus] = y * (ta - tb);
        }
    }
    Ok(PtdfMatrix { n_lines: nl, n_buses: nb, data, slack: slack_id })
}

/// Sum of mean loads per zone (diagnostic helper for case summaries).
pub fn zonal_load(case: &SystemCase) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    for (i, b) in case.buses.iter().enumerate() {
        if let Some(z) = case.bus_zone(i) {
            *out.entry(case.zones[z].id).or_insert(0.0) += b.demand;
        }
    }
    out
}
