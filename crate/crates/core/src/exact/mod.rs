//! Exact estimation at desk scale.
//!
//! The planning problem of every sample is replaced by its KKT conditions. A
//! spatial branch-and-bound over a box of trainable θ bounds the mean assessed
//! cost from below with per-sample complementarity branch-and-bound; incumbents
//! are evaluated through the same forecast-plan-assess pipeline as the trainer.
//! The stacked model can also be exported as a big-M MILP in MPS format.

mod bigm;
mod region;
mod relax;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::dispatch::{DispatchError, DispatchModel};
use crate::forecast::{ForecastError, ForecastSpec, Prediction, ThetaVector};
use crate::lp::{self, LinearProgram, LpError, LpStatus, PerturbationPolicy, RowSense};
use crate::trainer::TrainError;

pub use bigm::{export_bigm_mps, BigMExport, BigMOptions, PairBigM};
pub use relax::{root_relaxation, sample_bound, SampleBound};
pub use search::{solve_bnb, BnbOptions, BnbResult, BnbStatus};

/// Largest accepted `samples × complementarity pairs`.
pub const MAX_PAIRS: usize = 5000;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("instance too large: {samples} samples x {pairs} pairs exceeds {limit}")]
    TooLarge { samples: usize, pairs: usize, limit: usize },
    #[error("no finite bound for the dual of planning row {row}; set a dual cap")]
    UnboundedDual { row: String },
    #[error("big-M for {pair} is unbounded; tighten variable bounds or set primal/dual caps")]
    UnboundedBigM { pair: String },
    #[error("KKT relaxation of sample {t} is {status:?}")]
    Relaxation { t: usize, status: LpStatus },
    #[error("invalid theta box: {0}")]
    Box(String),
    #[error("nothing to estimate: the forecast has no trainable coefficient")]
    NothingToTrain,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Which side of a complementarity pair is tied to the dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairKind {
    /// Inequality row `i` and its dual.
    Row(usize),
    /// Finite lower bound of column `j` and its multiplier.
    Lower(usize),
    /// Finite upper bound of column `j` and its multiplier.
    Upper(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub kind: PairKind,
    pub name: String,
}

/// KKT data of the planning LP shared by all samples: `A x (sense) b0 + S ŷ`,
/// `l ≤ x ≤ u`, reserve requirements as `≥` rows.
#[derive(Debug, Clone)]
pub struct PlanningKkt {
    pub lp: LinearProgram,
    pub sensitivity: Vec<Vec<(usize, f64)>>,
    pub pairs: Vec<Pair>,
    /// Per row: sign restriction intersected with bounds implied by singleton columns.
    pub dual_bounds: Vec<(f64, f64)>,
    pub g: Vec<usize>,
    pub r_up: Vec<usize>,
    pub r_dn: Vec<usize>,
    /// Actual reserve prices per generator.
    pub p_up: Vec<f64>,
    pub p_dn: Vec<f64>,
}

/// Per-sample data: `ŷ_t = offset + gain·θ` and the assessment skeleton.
#[derive(Debug, Clone)]
pub struct SampleKkt {
    pub offset: Vec<f64>,
    /// `gain[k][d]`: sensitivity of forecast component `k` to trainable coefficient `d`.
    pub gain: Vec<Vec<f64>>,
    pub assessment: LinearProgram,
    pub assessment_g: Vec<usize>,
}

/// Stacked single-level model over a dataset.
pub struct KktInstance<'a> {
    pub(crate) model: &'a DispatchModel,
    pub(crate) spec: &'a ForecastSpec,
    pub(crate) dataset: &'a Dataset,
    pub planning: PlanningKkt,
    pub samples: Vec<SampleKkt>,
    pub trainable: Vec<usize>,
    /// Full θ supplying the fixed blocks.
    pub base: ThetaVector,
}

/// A point satisfying the KKT system of one sample at a given forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    pub z: Vec<f64>,
    /// Assessed cost including reserve payments.
    pub cost: f64,
}

fn sign_bounds(sense: RowSense) -> (f64, f64) {
    match sense {
        RowSense::Ge => (0.0, f64::INFINITY),
        RowSense::Le => (f64::NEG_INFINITY, 0.0),
        RowSense::Eq => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Build the KKT model. `base` supplies the fixed blocks; `dual_cap` bounds the
/// duals of forecast-dependent rows that have no implied bound.
pub fn build_kkt<'a>(
    model: &'a DispatchModel,
    spec: &'a ForecastSpec,
    dataset: &'a Dataset,
    base: &ThetaVector,
    dual_cap: Option<f64>,
) -> Result<KktInstance<'a>, ExactError> {
    spec.check_dataset(dataset)?;
    if base.len() != spec.dim() {
        return Err(ForecastError::Dimension { expected: spec.dim(), got: base.len() }.into());
    }
    let trainable = spec.trainable_indices();
    if trainable.is_empty() {
        return Err(ExactError::NothingToTrain);
    }
    let planning = planning_kkt(model, dual_cap)?;
    let pairs = planning.pairs.len() * dataset.len();
    if pairs > MAX_PAIRS {
        return Err(ExactError::TooLarge { samples: dataset.len(), pairs, limit: MAX_PAIRS });
    }
    let to_y = |p: Prediction| -> Result<Vec<f64>, ExactError> {
        let mut y = model.expand_demand(dataset.bus_ids(), &p.demand)?;
        y.extend(p.r_up);
        y.extend(p.r_dn);
        Ok(y)
    };
    let mut zeroed = base.clone();
    for &i in &trainable {
        zeroed.values[i] = 0.0;
    }
    let mut samples = Vec::with_capacity(dataset.len());
    for t in 0..dataset.len() {
        let x = dataset.features(t);
        let offset = to_y(spec.predict_raw(&zeroed, x)?)?;
        let mut gain = vec![vec![0.0; trainable.len()]; offset.len()];
        for (d, &i) in trainable.iter().enumerate() {
            let mut e = spec.zeros();
            e.values[i] = 1.0;
            for (k, v) in to_y(spec.predict_raw(&e, x)?)?.into_iter().enumerate() {
                gain[k][d] = v;
            }
        }
        let realized = model.expand_demand(dataset.bus_ids(), dataset.demand(t))?;
        let (assessment, assessment_g) = model.assessment_skeleton(&realized)?;
        samples.push(SampleKkt { offset, gain, assessment, assessment_g });
    }
    Ok(KktInstance { model, spec, dataset, planning, samples, trainable, base: base.clone() })
}

fn planning_kkt(model: &DispatchModel, dual_cap: Option<f64>) -> Result<PlanningKkt, ExactError> {
    let tpl = model.planning_template();
    let mut lp = tpl.lp.clone();
    let (up, dn) = model.reserve_rows();
    // With positive reserve prices, `≥` realizes the clamp of negative requirements at zero.
    for &r in up.iter().chain(dn) {
        lp.senses[r] = RowSense::Ge;
    }
    let (m, n) = (lp.n_rows(), lp.n_cols());
    let a = lp.matrix();
    let mut pairs = Vec::new();
    for i in 0..m {
        if lp.senses[i] != RowSense::Eq {
            pairs.push(Pair { kind: PairKind::Row(i), name: format!("row {}", lp.row_name(i)) });
        }
    }
    for j in 0..n {
        if lp.lower[j].is_finite() {
            pairs.push(Pair { kind: PairKind::Lower(j), name: format!("lower {}", lp.col_name(j)) });
        }
        if lp.upper[j].is_finite() {
            pairs.push(Pair { kind: PairKind::Upper(j), name: format!("upper {}", lp.col_name(j)) });
        }
    }
    let mut dual_bounds: Vec<(f64, f64)> = lp.senses.iter().map(|&s| sign_bounds(s)).collect();
    for j in 0..n {
        let nz: Vec<usize> = (0..m).filter(|&i| a.get(i, j) != 0.0).collect();
        let [i] = nz[..] else { continue };
        let (aij, c) = (a.get(i, j), lp.objective[j]);
        // Reduced cost c − a·π must be ≥ 0 at a lower-only column, ≤ 0 at an upper-only one.
        let lower_only = lp.lower[j].is_finite() && !lp.upper[j].is_finite();
        let upper_only = !lp.lower[j].is_finite() && lp.upper[j].is_finite();
        let bound = c / aij;
        let caps_above = (lower_only && aij > 0.0) || (upper_only && aij < 0.0);
        let caps_below = (lower_only && aij < 0.0) || (upper_only && aij > 0.0);
        if caps_above {
            dual_bounds[i].1 = dual_bounds[i].1.min(bound);
        }
        if caps_below {
            dual_bounds[i].0 = dual_bounds[i].0.max(bound);
        }
    }
    for i in 0..m {
        if tpl.sensitivity[i].is_empty() {
            continue;
        }
        let (lo, hi) = &mut dual_bounds[i];
        if let Some(cap) = dual_cap {
            *lo = lo.max(-cap);
            *hi = hi.min(cap);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ExactError::UnboundedDual { row: lp.row_name(i).to_string() });
        }
    }
    let (g, r_up, r_dn) = model.plan_columns();
    let gens = &model.case().generators;
    Ok(PlanningKkt {
        sensitivity: tpl.sensitivity.clone(),
        pairs,
        dual_bounds,
        g: g.to_vec(),
        r_up: r_up.to_vec(),
        r_dn: r_dn.to_vec(),
        p_up: gens.iter().map(|g| g.p_up).collect(),
        p_dn: gens.iter().map(|g| g.p_dn).collect(),
        lp,
    })
}

impl<'a> KktInstance<'a> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of trainable coefficients.
    pub fn dim(&self) -> usize {
        self.trainable.len()
    }

    pub fn n_forecast(&self) -> usize {
        self.samples[0].offset.len()
    }

    /// Complementarity pairs per sample.
    pub fn n_pairs(&self) -> usize {
        self.planning.pairs.len()
    }

    /// Hull of the trainable parts of `anchors`, widened on each side by
    /// `pad·max(1, |anchor|)`.
    pub fn theta_box_around(&self, anchors: &[ThetaVector], pad: f64) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|k| {
                let vals: Vec<f64> = anchors.iter().map(|a| a.values[self.trainable[k]]).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w = pad * lo.abs().max(hi.abs()).max(1.0);
                (lo - w, hi + w)
            })
            .collect()
    }

    pub fn full_theta(&self, theta: &[f64]) -> ThetaVector {
        self.base.scatter(&self.trainable, theta)
    }

    pub fn forecast(&self, t: usize, theta: &[f64]) -> Vec<f64> {
        let s = &self.samples[t];
        s.offset.iter().zip(&s.gain).map(|(o, g)| o + g.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()).collect()
    }

    /// Interval image of the θ box under the forecast map of sample `t`.
    pub fn forecast_box(&self, t: usize, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = &self.samples[t];
        let mut ylo = s.offset.clone();
        let mut yhi = s.offset.clone();
        for (k, g) in s.gain.iter().enumerate() {
            for (d, &a) in g.iter().enumerate() {
                if a > 0.0 {
                    ylo[k] += a * lo[d];
                    yhi[k] += a * hi[d];
                } else if a < 0.0 {
                    ylo[k] += a * hi[d];
                    yhi[k] += a * lo[d];
                }
            }
        }
        (ylo, yhi)
    }

    /// Planning LP of the KKT model at forecast `y`.
    pub fn planning_lp(&self, y: &[f64]) -> LinearProgram {
        let p = &self.planning;
        let mut lp = p.lp.clone();
        for (i, row) in p.sensitivity.iter().enumerate() {
            lp.rhs[i] += row.iter().map(|&(k, a)| a * y[k]).sum::<f64>();
        }
        lp
    }

    /// Plan at `ŷ_t(θ)` by an unperturbed solve, with multipliers and assessment.
    pub fn kkt_point(&self, t: usize, theta: &[f64]) -> Result<KktPoint, ExactError> {
        let y = self.forecast(t, theta);
        let lp = self.planning_lp(&y);
        let sol = lp::solve(&lp, None, &PerturbationPolicy::none())?;
        if sol.status != LpStatus::Optimal {
            return Err(ExactError::Relaxation { t, status: sol.status });
        }
        let n = lp.n_cols();
        let mut mu_lower = vec![0.0; n];
        let mut mu_upper = vec![0.0; n];
        for j in 0..n {
            let rc = sol.reduced_costs[j];
            mu_lower[j] = rc.max(0.0);
            mu_upper[j] = (-rc).max(0.0);
        }
        let p = &self.planning;
        let s = &self.samples[t];
        let mut a = s.assessment.clone();
        for (i, &j) in s.assessment_g.iter().enumerate() {
            let (g, up, dn) = (sol.x[p.g[i]], sol.x[p.r_up[i]], sol.x[p.r_dn[i]]);
            a.lower[j] = (g - dn).max(0.0);
            a.upper[j] = (g + up).max(a.lower[j]);
        }
        let asol = lp::solve(&a, None, &PerturbationPolicy::none())?;
        if asol.status != LpStatus::Optimal {
            return Err(ExactError::Relaxation { t, status: asol.status });
        }
        let reserve: f64 = (0..p.g.len()).map(|i| p.p_up[i] * sol.x[p.r_up[i]] + p.p_dn[i] * sol.x[p.r_dn[i]]).sum();
        Ok(KktPoint {
            y,
            x: sol.x,
            duals: sol.duals,
            mu_lower,
            mu_upper,
            cost: asol.objective + reserve,
            z: asol.x,
        })
    }

    /// Largest complementarity product of a KKT point.
    pub fn complementarity_of(&self, point: &KktPoint) -> f64 {
        let lp = self.planning_lp(&point.y);
        let act = lp.activities(&point.x);
        self.planning
            .pairs
            .iter()
            .map(|pair| match pair.kind {
                PairKind::Row(i) => (act[i] - lp.rhs[i]).abs() * point.duals[i].abs(),
                PairKind::Lower(j) => (point.x[j] - lp.lower[j]).abs() * point.mu_lower[j].abs(),
                PairKind::Upper(j) => (lp.upper[j] - point.x[j]).abs() * point.mu_upper[j].abs(),
            })
            .fold(0.0, f64::max)
    }

    /// Largest complementarity product over all samples at `θ`.
    pub fn complementarity_violation(&self, theta: &[f64]) -> Result<f64, ExactError> {
        let mut worst = 0.0f64;
        for t in 0..self.len() {
            worst = worst.max(self.complementarity_of(&self.kkt_point(t, theta)?));
        }
        Ok(worst)
    }
}
