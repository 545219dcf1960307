//! Synthetic load data: independent per-bus AR(1) processes, optionally with an
//! exogenous AR(1) driver that sets the innovation standard deviation.
//!
//! Observed demands are the latent process truncated at zero; the recurrence
//! itself runs on the untruncated values. Sample `t` pairs the observed demand
//! at `t` with features known one step earlier (`lag1_<bus>`) and, when the
//! exogenous driver is enabled, its concurrent value `E`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcase::SystemCase;

pub const DEFAULT_BURN_IN: usize = 200;
pub const FEATURE_E: &str = "E";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid process configuration: {0}")]
    Config(String),
    #[error("dataset length {0} is below the minimum of 2")]
    TooShort(usize),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset schema: {0}")]
    Schema(String),
    #[error("dataset invariant: {0}")]
    Invariant(String),
}

/// `D_t = φ0 + φ1·D_{t−1} + σ·ε_t` for one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusProcess {
    pub bus: u32,
    pub phi0: f64,
    pub phi1: f64,
    pub sigma: f64,
}

impl BusProcess {
    pub fn mean(&self) -> f64 {
        self.phi0 / (1.0 - self.phi1)
    }
}

/// `E_t = ψ0 + ψ1·E_{t−1} + σ_E·η_t`. When enabled, the innovation std of bus `b`
/// becomes `max(E_t, 0)·σ_b / E[E]`, so each bus keeps its average noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousVariance {
    pub psi0: f64,
    pub psi1: f64,
    pub sigma_e: f64,
}

impl Default for ExogenousVariance {
    /// `ψ1 = 0.9`, `σ_E = 0.1`, mean 1.0462.
    fn default() -> Self {
        Self { psi0: 0.10462, psi1: 0.9, sigma_e: 0.1 }
    }
}

impl ExogenousVariance {
    pub fn mean(&self) -> f64 {
        self.psi0 / (1.0 - self.psi1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArProcessConfig {
    pub buses: Vec<BusProcess>,
    pub seed: u64,
    pub burn_in: usize,
    pub exogenous: Option<ExogenousVariance>,
}

impl ArProcessConfig {
    /// One bus with the given coefficients.
    pub fn single(phi0: f64, phi1: f64, sigma: f64, seed: u64) -> Self {
        Self { buses: vec![BusProcess { bus: 1, phi0, phi1, sigma }], seed, burn_in: DEFAULT_BURN_IN, exogenous: None }
    }

    /// Innovation std giving a stationary coefficient of variation `cv` around `mean`.
    pub fn sigma_for_cv(mean: f64, phi1: f64, cv: f64) -> f64 {
        cv * mean * (1.0 - phi1 * phi1).sqrt()
    }

    /// One process per load bus with mean `demand_factor·demand` and stationary CV `cv`.
    pub fn for_case(case: &SystemCase, phi1: f64, cv: f64, seed: u64) -> Self {
        let buses = case
            .load_buses()
            .into_iter()
            .map(|i| {
                let mean = case.demand_factor * case.buses[i].demand;
                BusProcess {
                    bus: case.buses[i].id,
                    phi0: mean * (1.0 - phi1),
                    phi1,
                    sigma: Self::sigma_for_cv(mean, phi1, cv),
                }
            })
            .collect();
        Self { buses, seed, burn_in: DEFAULT_BURN_IN, exogenous: None }
    }

    pub fn with_exogenous(mut self, ex: ExogenousVariance) -> Self {
        self.exogenous = Some(ex);
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |s: String| Err(DataError::Config(s));
        if self.buses.is_empty() {
            return bad("no bus processes".into());
        }
        let mut ids: Vec<u32> = self.buses.iter().map(|b| b.bus).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate bus in process list".into());
        }
        for b in &self.buses {
            if !(b.phi1.abs() < 1.0) {
                return bad(format!("bus {}: |phi1| = {} must be below 1", b.bus, b.phi1.abs()));
            }
            if !(b.sigma >= 0.0) || !b.phi0.is_finite() || !b.sigma.is_finite() {
                return bad(format!("bus {}: phi0 = {}, sigma = {}", b.bus, b.phi0, b.sigma));
            }
        }
        if let Some(e) = &self.exogenous {
            if !(e.psi1.abs() < 1.0) || !(e.sigma_e >= 0.0) || !e.psi0.is_finite() || !e.sigma_e.is_finite() {
                return bad(format!("exogenous driver ({}, {}, {})", e.psi0, e.psi1, e.sigma_e));
            }
            if !(e.mean() > 0.0) {
                return bad(format!("exogenous driver mean {} must be positive", e.mean()));
            }
        }
        Ok(())
    }
}

/// Provenance recorded alongside generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: ArProcessConfig,
}

/// Time-indexed demands per bus and aligned feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bus_ids: Vec<u32>,
    feature_names: Vec<String>,
    /// Row-major `len × n_buses`.
    demand: Vec<f64>,
    /// Row-major `len × n_features`.
    features: Vec<f64>,
    /// Time stamps of the rows.
    times: Vec<u64>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(
        bus_ids: Vec<u32>,
        feature_names: Vec<String>,
        times: Vec<u64>,
        demand: Vec<f64>,
        features: Vec<f64>,
    ) -> Result<Self, DataError> {
        let t = times.len();
        if t < 2 {
            return Err(DataError::TooShort(t));
        }
        if demand.len() != t * bus_ids.len() || features.len() != t * feature_names.len() {
            return Err(DataError::Schema("row widths do not match the header".into()));
        }
        if let Some((k, v)) = demand.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            let nb = bus_ids.len();
            return Err(DataError::Invariant(format!(
                "demand {v} at t = {} for bus {}",
                times[k / nb],
                bus_ids[k % nb]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invariant("non-finite feature value".into()));
        }
        Ok(Self { bus_ids, feature_names, demand, features, times, provenance: None })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == id)
    }

    pub fn time(&self, t: usize) -> u64 {
        self.times[t]
    }

    /// Observed demands at row `t`, ordered like [`Dataset::bus_ids`].
    pub fn demand(&self, t: usize) -> &[f64] {
        let nb = self.bus_ids.len();
        &self.demand[t * nb..(t + 1) * nb]
    }

    pub fn features(&self, t: usize) -> &[f64] {
        let nf = self.feature_names.len();
        &self.features[t * nf..(t + 1) * nf]
    }

    /// Demand series of the bus at position `b`.
    pub fn series(&self, b: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.demand(t)[b]).collect()
    }

    /// Feature column by name.
    pub fn feature_column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.feature_index(name)?;
        Some((0..self.len()).map(|t| self.features(t)[k]).collect())
    }

    /// Rows `start..end`, keeping provenance.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, DataError> {
        if end > self.len() || start > end {
            return Err(DataError::Schema(format!("slice {start}..{end} of a dataset of length {}", self.len())));
        }
        let (nb, nf) = (self.bus_ids.len(), self.feature_names.len());
        let mut d = Self::new(
            self.bus_ids.clone(),
            self.feature_names.clone(),
            self.times[start..end].to_vec(),
            self.demand[start * nb..end * nb].to_vec(),
            self.features[start * nf..end * nf].to_vec(),
        )?;
        d.provenance = self.provenance.clone();
        Ok(d)
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Result<Self, DataError> {
        self.slice(0, n)
    }

    /// Write `<stem>.csv` and `<stem>.json` (manifest) next to each other.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<(), DataError> {
        let csv_path = csv_path.as_ref();
        let io = |source| DataError::Io { path: csv_path.display().to_string(), source };
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| csv_err(csv_path, e))?;
        let mut header = vec!["t".to_string()];
        header.extend(self.bus_ids.iter().map(|b| format!("bus_{b}")));
        header.extend(self.feature_names.iter().map(|f| format!("feat_{f}")));
        w.write_record(&header).map_err(|e| csv_err(csv_path, e))?;
        for t in 0..self.len() {
            let mut rec = vec![self.times[t].to_string()];
            rec.extend(self.demand(t).iter().map(|v| v.to_string()));
            rec.extend(self.features(t).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(csv_path, e))?;
        }
        w.flush().map_err(io)?;
        let manifest = Manifest {
            rows: self.len(),
            bus_ids: self.bus_ids.clone(),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance.clone(),
        };
        let mpath = manifest_path(csv_path);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&mpath, text + "\n")
            .map_err(|source| DataError::Io { path: mpath.display().to_string(), source })?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::save`]; the manifest is optional.
    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self, DataError> {
        let csv_path = csv_path.as_ref();
        let text = std::fs::read_to_string(csv_path)
            .map_err(|source| DataError::Io { path: csv_path.display().to_string(), source })?;
        if !text.ends_with('\n') {
            return Err(DataError::Schema(format!("{}: last record is not terminated", csv_path.display())));
        }
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| csv_err(csv_path, e))?.clone();
        if header.get(0) != Some("t") {
            return Err(DataError::Schema("first column must be `t`".into()));
        }
        let mut bus_ids = Vec::new();
        let mut feature_names = Vec::new();
        for h in header.iter().skip(1) {
            if let Some(id) = h.strip_prefix("bus_") {
                if !feature_names.is_empty() {
                    return Err(DataError::Schema(format!("bus column `{h}` after feature columns")));
                }
                bus_ids.push(id.parse().map_err(|_| DataError::Schema(format!("bad bus column `{h}`")))?);
            } else if let Some(f) = h.strip_prefix("feat_") {
                feature_names.push(f.to_string());
            } else {
                return Err(DataError::Schema(format!("unexpected column `{h}`")));
            }
        }
        let (mut times, mut demand, mut features) = (Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(csv_path, e))?;
            let num = |i: usize| -> Result<f64, DataError> {
                rec[i].trim().parse().map_err(|_| DataError::Schema(format!("row {}: bad number `{}`", k + 1, &rec[i])))
            };
            times.push(rec[0].trim().parse().map_err(|_| DataError::Schema(format!("row {}: bad time", k + 1)))?);
            for i in 0..bus_ids.len() {
                demand.push(num(1 + i)?);
            }
            for i in 0..feature_names.len() {
                features.push(num(1 + bus_ids.len() + i)?);
            }
        }
        let mpath = manifest_path(csv_path);
        let manifest = match std::fs::read_to_string(&mpath) {
            Ok(text) => Some(
                serde_json::from_str::<Manifest>(&text)
                    .map_err(|e| DataError::Schema(format!("{}: {e}", mpath.display())))?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(source) => return Err(DataError::Io { path: mpath.display().to_string(), source }),
        };
        if let Some(m) = &manifest {
            if m.rows != times.len() {
                return Err(DataError::Schema(format!("manifest lists {} rows, file has {}", m.rows, times.len())));
            }
            if m.bus_ids != bus_ids || m.feature_names != feature_names {
                return Err(DataError::Schema("manifest columns differ from the CSV header".into()));
            }
        }
        let mut ds = Self::new(bus_ids, feature_names, times, demand, features)?;
        ds.provenance = manifest.and_then(|m| m.provenance);
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    rows: usize,
    bus_ids: Vec<u32>,
    feature_names: Vec<String>,
    provenance: Option<Provenance>,
}

fn manifest_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io { path: path.display().to_string(), source },
            _ => unreachable!(),
        },
        _ => DataError::Schema(format!("{}: {e}", path.display())),
    }
}

/// Name of the lag-1 demand feature of bus `id`.
pub fn lag_feature(id: u32) -> String {
    format!("lag1_{id}")
}

/// Simulate `t` usable samples. Each process starts at its stationary mean and
/// runs `burn_in` unrecorded steps plus one step that only seeds the lag feature.
pub fn generate(config: &ArProcessConfig, t: usize) -> Result<Dataset, DataError> {
    config.validate()?;
    if t < 2 {
        return Err(DataError::TooShort(t));
    }
    let nb = config.buses.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut latent: Vec<f64> = config.buses.iter().map(BusProcess::mean).collect();
    let mut e_state = config.exogenous.map(|e| e.mean());
    let mut step = |latent: &mut [f64], e_state: &mut Option<f64>| {
        let scale = match (config.exogenous, e_state.as_mut()) {
            (Some(ex), Some(e)) => {
                let eta: f64 = StandardNormal.sample(&mut rng);
                *e = ex.psi0 + ex.psi1 * *e + ex.sigma_e * eta;
                Some(e.max(0.0) / ex.mean())
            }
            _ => None,
        };
        for (b, p) in config.buses.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let sd = p.sigma * scale.unwrap_or(1.0);
            latent[b] = p.phi0 + p.phi1 * latent[b] + sd * eps;
        }
    };
    for _ in 0..config.burn_in {
        step(&mut latent, &mut e_state);
    }
    step(&mut latent, &mut e_state);
    let mut prev: Vec<f64> = latent.iter().map(|v| v.max(0.0)).collect();

    let mut feature_names: Vec<String> = config.buses.iter().map(|b| lag_feature(b.bus)).collect();
    if config.exogenous.is_some() {
        feature_names.push(FEATURE_E.to_string());
    }
    let nf = feature_names.len();
    let mut demand = Vec::with_capacity(t * nb);
    let mut features = Vec::with_capacity(t * nf);
    for _ in 0..t {
        step(&mut latent, &mut e_state);
        features.extend_from_slice(&prev);
        if let Some(e) = e_state {
            features.push(e);
        }
        let obs: Vec<f64> = latent.iter().map(|v| v.max(0.0)).collect();
        demand.extend_from_slice(&obs);
        prev = obs;
    }
    let mut ds = Dataset::new(
        config.buses.iter().map(|b| b.bus).collect(),
        feature_names,
        (1..=t as u64).collect(),
        demand,
        features,
    )?;
    ds.provenance = Some(Provenance { seed: config.seed, config: config.clone() });
    Ok(ds)
}
