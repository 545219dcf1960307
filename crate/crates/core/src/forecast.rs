//! Affine forecast models for demands and reserve requirements, the stacked
//! parameter vector, least-squares fitting and the exogenous reserve rule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{lag_feature, Dataset};
use crate::netcase::SystemCase;

/// Implicit intercept feature.
pub const CONST: &str = "const";
/// Shorthand resolved to the lag-1 demand of the block's own bus.
pub const LAG1: &str = "lag1";
/// Default multiplier of the exogenous reserve rule.
pub const DEFAULT_Z: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("feature `{feature}` of block {block} is not in the dataset")]
    UnknownFeature { block: String, feature: String },
    #[error("invalid forecast spec: {0}")]
    Spec(String),
    #[error("parameter vector has length {got}, spec expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("block {0}: regressors are rank deficient")]
    Rank(String),
    #[error("block {block}: {rows} samples for {cols} coefficients")]
    TooFewSamples { block: String, rows: usize, cols: usize },
    #[error("unknown model variant `{0}` (expected ls-ex, ls-opt, opt-ex or opt-opt)")]
    Variant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Demand,
    ReserveUp,
    ReserveDn,
}

/// One affine model: a demand at a bus or a reserve requirement in a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub family: Family,
    /// Bus id for demand blocks, zone id for reserve blocks.
    pub target: u32,
    /// Feature names; [`CONST`] is the intercept, [`LAG1`] the own-bus lag.
    pub features: Vec<String>,
    pub trainable: bool,
}

impl Block {
    pub fn name(&self) -> String {
        match self.family {
            Family::Demand => format!("D_{}", self.target),
            Family::ReserveUp => format!("Rup_{}", self.target),
            Family::ReserveDn => format!("Rdn_{}", self.target),
        }
    }
}

/// Which blocks are trained and which come from least squares plus the exogenous rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    LsEx,
    LsOpt,
    OptEx,
    OptOpt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LsEx, Variant::LsOpt, Variant::OptEx, Variant::OptOpt];

    pub fn trains_demand(self) -> bool {
        matches!(self, Variant::OptEx | Variant::OptOpt)
    }

    pub fn trains_reserves(self) -> bool {
        matches!(self, Variant::LsOpt | Variant::OptOpt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::LsEx => "ls-ex",
            Variant::LsOpt => "ls-opt",
            Variant::OptEx => "opt-ex",
            Variant::OptOpt => "opt-opt",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ForecastError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| ForecastError::Variant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Resolved {
    /// Dataset feature index per coefficient; `None` is the intercept.
    columns: Vec<Option<usize>>,
    offset: usize,
    /// Bus position in the dataset (demand) or zone index in the case (reserves).
    slot: usize,
}

/// A validated set of blocks bound to a dataset layout and a case's zones.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSpec {
    blocks: Vec<Block>,
    resolved: Vec<Resolved>,
    dim: usize,
    bus_ids: Vec<u32>,
    feature_names: Vec<String>,
    /// Zone index of each dataset bus, for residual aggregation.
    bus_zone: Vec<Option<usize>>,
    n_zones: usize,
}

impl ForecastSpec {
    /// Every dataset bus needs exactly one demand block; each zone at most one
    /// reserve block per direction (a missing block means a zero requirement).
    pub fn new(blocks: Vec<Block>, case: &SystemCase, dataset: &Dataset) -> Result<Self, ForecastError> {
        let bus_ids = dataset.bus_ids().to_vec();
        let mut seen = BTreeMap::new();
        let mut resolved = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for b in &blocks {
            let name = b.name();
            if seen.insert(name.clone(), ()).is_some() {
                return Err(ForecastError::Spec(format!("duplicate block {name}")));
            }
            if b.features.is_empty() {
                return Err(ForecastError::Spec(format!("block {name} has no features")));
            }
            let slot = match b.family {
                Family::Demand => dataset
                    .bus_position(b.target)
                    .ok_or_else(|| ForecastError::Spec(format!("block {name}: bus {} has no data", b.target)))?,
                _ => case
                    .zone_index(b.target)
                    .ok_or_else(|| ForecastError::Spec(format!("block {name}: unknown zone {}", b.target)))?,
            };
            let mut columns = Vec::with_capacity(b.features.len());
            for f in &b.features {
                let col = if f == CONST {
                    None
                } else {
                    let lookup = if f == LAG1 && b.family == Family::Demand { lag_feature(b.target) } else { f.clone() };
                    Some(dataset.feature_index(&lookup).ok_or_else(|| ForecastError::UnknownFeature {
                        block: name.clone(),
                        feature: f.clone(),
                    })?)
                };
                if columns.contains(&col) {
                    return Err(ForecastError::Spec(format!("block {name} repeats feature {f}")));
                }
                columns.push(col);
            }
            resolved.push(Resolved { offset, slot, columns });
            offset += b.features.len();
        }
        for id in &bus_ids {
            if !blocks.iter().any(|b| b.family == Family::Demand && b.target == *id) {
                return Err(ForecastError::Spec(format!("bus {id} has no demand block")));
            }
        }
        let bus_zone = bus_ids.iter().map(|id| case.bus_index(*id).and_then(|i| case.bus_zone(i))).collect();
        Ok(Self {
            blocks,
            resolved,
            dim: offset,
            bus_ids,
            feature_names: dataset.feature_names().to_vec(),
            bus_zone,
            n_zones: case.n_zones(),
        })
    }

    /// AR(1) demand per dataset bus and reserve blocks `[const, extra...]` for each
    /// zone that holds at least one generator, with trainability set by `variant`.
    pub fn standard(
        case: &SystemCase,
        dataset: &Dataset,
        variant: Variant,
        reserve_features: &[&str],
    ) -> Result<Self, ForecastError> {
        let mut blocks: Vec<Block> = dataset
            .bus_ids()
            .iter()
            .map(|&id| Block {
                family: Family::Demand,
                target: id,
                features: vec![CONST.into(), LAG1.into()],
                trainable: variant.trains_demand(),
            })
            .collect();
        let mut rf = vec![CONST.to_string()];
        rf.extend(reserve_features.iter().map(|s| s.to_string()));
        for fam in [Family::ReserveUp, Family::ReserveDn] {
            for z in &case.zones {
                if case.generators.iter().any(|g| g.zone == Some(z.id)) {
                    blocks.push(Block {
                        family: fam,
                        target: z.id,
                        features: rf.clone(),
                        trainable: variant.trains_reserves(),
                    });
                }
            }
        }
        Self::new(blocks, case, dataset)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    /// Positions of trainable coefficients, in θ order.
    pub fn trainable_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (b, r) in self.blocks.iter().zip(&self.resolved) {
            if b.trainable {
                out.extend(r.offset..r.offset + b.features.len());
            }
        }
        out
    }

    /// Range of block `k` inside θ.
    pub fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        let r = &self.resolved[k];
        r.offset..r.offset + self.blocks[k].features.len()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name() == name)
    }

    /// Whether `dataset` has the feature layout this spec was built against.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<(), ForecastError> {
        if dataset.bus_ids() != self.bus_ids.as_slice() || dataset.feature_names() != self.feature_names.as_slice() {
            return Err(ForecastError::Spec("dataset layout differs from the one the spec was built for".into()));
        }
        Ok(())
    }

    /// Unclamped affine outputs: demand per dataset bus, reserves per case zone.
    pub fn predict_raw(&self, theta: &ThetaVector, x: &[f64]) -> Result<Prediction, ForecastError> {
        if theta.values.len() != self.dim {
            return Err(ForecastError::Dimension { expected: self.dim, got: theta.values.len() });
        }
        if x.len() != self.feature_names.len() {
            return Err(ForecastError::Dimension { expected: self.feature_names.len(), got: x.len() });
        }
        let mut p = Prediction {
            demand: vec![0.0; self.bus_ids.len()],
            r_up: vec![0.0; self.n_zones],
            r_dn: vec![0.0; self.n_zones],
        };
        for (b, r) in self.blocks.iter().zip(&self.resolved) {
            let coef = &theta.values[r.offset..r.offset + r.columns.len()];
            let v: f64 = coef.iter().zip(&r.columns).map(|(c, col)| c * col.map_or(1.0, |k| x[k])).sum();
            match b.family {
                Family::Demand => p.demand[r.slot] = v,
                Family::ReserveUp => p.r_up[r.slot] = v,
                Family::ReserveDn => p.r_dn[r.slot] = v,
            }
        }
        Ok(p)
    }

    /// Forecasts with reserve requirements clamped at zero; demands pass through.
    pub fn predict(&self, theta: &ThetaVector, x: &[f64]) -> Result<Prediction, ForecastError> {
        let mut p = self.predict_raw(theta, x)?;
        for r in p.r_up.iter_mut().chain(p.r_dn.iter_mut()) {
            *r = r.max(0.0);
        }
        Ok(p)
    }

    pub fn zeros(&self) -> ThetaVector {
        ThetaVector { values: vec![0.0; self.dim] }
    }

    pub fn from_values(&self, values: Vec<f64>) -> Result<ThetaVector, ForecastError> {
        if values.len() != self.dim {
            return Err(ForecastError::Dimension { expected: self.dim, got: values.len() });
        }
        Ok(ThetaVector { values })
    }

    /// Named blocks to a flat vector; every block must be present with the right width.
    pub fn pack(&self, named: &BTreeMap<String, Vec<f64>>) -> Result<ThetaVector, ForecastError> {
        if named.len() != self.blocks.len() {
            return Err(ForecastError::Spec(format!("{} blocks given, spec has {}", named.len(), self.blocks.len())));
        }
        let mut values = Vec::with_capacity(self.dim);
        for b in &self.blocks {
            let name = b.name();
            let v = named.get(&name).ok_or_else(|| ForecastError::Spec(format!("block {name} missing")))?;
            if v.len() != b.features.len() {
                return Err(ForecastError::Dimension { expected: b.features.len(), got: v.len() });
            }
            values.extend_from_slice(v);
        }
        Ok(ThetaVector { values })
    }

    pub fn unpack(&self, theta: &ThetaVector) -> Result<BTreeMap<String, Vec<f64>>, ForecastError> {
        if theta.values.len() != self.dim {
            return Err(ForecastError::Dimension { expected: self.dim, got: theta.values.len() });
        }
        Ok((0..self.blocks.len()).map(|k| (self.blocks[k].name(), theta.values[self.block_range(k)].to_vec())).collect())
    }

    pub fn theta_to_json(&self, theta: &ThetaVector) -> Result<String, ForecastError> {
        Ok(serde_json::to_string_pretty(&self.unpack(theta)?).expect("theta serializes"))
    }

    pub fn theta_from_json(&self, text: &str) -> Result<ThetaVector, ForecastError> {
        let named: BTreeMap<String, Vec<f64>> =
            serde_json::from_str(text).map_err(|e| ForecastError::Spec(format!("theta json: {e}")))?;
        self.pack(&named)
    }

    /// Per-bus OLS for demand blocks; reserve coefficients are left at zero.
    pub fn fit_least_squares(&self, dataset: &Dataset) -> Result<LsFit, ForecastError> {
        self.check_dataset(dataset)?;
        let mut theta = self.zeros();
        let mut residual_std = vec![0.0; self.bus_ids.len()];
        let t = dataset.len();
        for (k, (b, r)) in self.blocks.iter().zip(&self.resolved).enumerate() {
            if b.family != Family::Demand {
                continue;
            }
            let cols = r.columns.len();
            if t <= cols {
                return Err(ForecastError::TooFewSamples { block: b.name(), rows: t, cols });
            }
            let x = DMatrix::from_fn(t, cols, |i, j| r.columns[j].map_or(1.0, |c| dataset.features(i)[c]));
            let y = DVector::from_fn(t, |i, _| dataset.demand(i)[r.slot]);
            let beta = ols(&x, &y).ok_or_else(|| ForecastError::Rank(b.name()))?;
            let resid = &y - &x * &beta;
            residual_std[r.slot] = (resid.norm_squared() / (t - cols) as f64).sqrt();
            theta.values[self.block_range(k)].copy_from_slice(beta.as_slice());
        }
        Ok(LsFit { theta, residual_std })
    }

    /// Least-squares demand blocks plus constant reserve requirements from the
    /// exogenous rule; other reserve coefficients stay zero.
    pub fn ls_baseline(&self, dataset: &Dataset, z: f64) -> Result<LsFit, ForecastError> {
        let mut fit = self.fit_least_squares(dataset)?;
        let (up, dn) = exogenous_reserve_rule(&fit.residual_std, &self.bus_zone, self.n_zones, z);
        for (k, (b, r)) in self.blocks.iter().zip(&self.resolved).enumerate() {
            let req = match b.family {
                Family::Demand => continue,
                Family::ReserveUp => up[r.slot],
                Family::ReserveDn => dn[r.slot],
            };
            let Some(c) = r.columns.iter().position(Option::is_none) else {
                return Err(ForecastError::Spec(format!("reserve block {} needs a `const` feature", b.name())));
            };
            fit.theta.values[self.block_range(k).start + c] = req;
        }
        Ok(fit)
    }
}

/// Forecast outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per dataset bus.
    pub demand: Vec<f64>,
    /// Per case zone.
    pub r_up: Vec<f64>,
    pub r_dn: Vec<f64>,
}

/// Flat parameter vector laid out block after block in spec order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub values: Vec<f64>,
}

impl ThetaVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at `indices`.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.values[i]).collect()
    }

    /// Copy with `values[indices[k]] = sub[k]`.
    pub fn scatter(&self, indices: &[usize], sub: &[f64]) -> Self {
        let mut out = self.clone();
        for (&i, &v) in indices.iter().zip(sub) {
            out.values[i] = v;
        }
        out
    }
}

/// Least-squares estimates and per-bus residual standard deviations
/// (residual sum of squares over `T − k`).
#[derive(Debug, Clone, PartialEq)]
pub struct LsFit {
    pub theta: ThetaVector,
    /// Per dataset bus.
    pub residual_std: Vec<f64>,
}

/// QR least squares; `None` when a diagonal entry of `R` is negligible.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = x.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    for i in 0..r.ncols() {
        if r[(i, i)].abs() <= 1e-10 * scale.max(1.0) {
            return None;
        }
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// `R_up = R_dn = z·sqrt(Σ σ_b²)` over the buses of each zone.
pub fn exogenous_reserve_rule(
    residual_std: &[f64],
    bus_zone: &[Option<usize>],
    n_zones: usize,
    z: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut var = vec![0.0; n_zones];
    for (s, zone) in residual_std.iter().zip(bus_zone) {
        if let Some(k) = zone {
            var[*k] += s * s;
        }
    }
    let r: Vec<f64> = var.iter().map(|v| z * v.sqrt()).collect();
    (r.clone(), r)
}
