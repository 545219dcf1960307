//! Closed-loop training: Nelder-Mead over the trainable coefficients of θ,
//! minimizing the mean assessed cost of forecast-plan-assess over a dataset.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::dispatch::{DispatchError, DispatchModel, SampleCache};
use crate::forecast::{ForecastError, ForecastSpec, ThetaVector, DEFAULT_Z};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Stop when the best value fell by less than this over one iteration...
    pub min_decrease: f64,
    /// ...and the simplex diameter (max vertex distance to the best) is below this.
    pub min_diameter: f64,
    pub max_iters: usize,
    pub max_evals: usize,
    #[serde(with = "opt_secs")]
    pub time_limit: Option<Duration>,
    /// Box `|θ_i| ≤ bound` enforced by projection.
    pub bound: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            min_decrease: 1e-7,
            min_diameter: 1e-6,
            max_iters: 5_000,
            max_evals: 20_000,
            time_limit: None,
            bound: 1e3,
        }
    }
}

pub(crate) mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    IterationLimit,
    EvaluationLimit,
    TimeLimit,
    /// No trainable coefficient; θ is the initial point.
    NothingToTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    /// Best value after each iteration, starting with the initial best.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Vertex 0 is `theta0`; vertex `i` moves coordinate `i − 1` by `max(0.05·|θ|, 0.01)`.
pub fn simplex_init(theta0: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![theta0.to_vec()];
    for i in 0..theta0.len() {
        let mut v = theta0.to_vec();
        v[i] += (0.05 * theta0[i].abs()).max(0.01);
        out.push(v);
    }
    out
}

/// Minimize `f` from `x0`. `f0`, when given, is taken as `f(x0)` without evaluating.
pub fn nelder_mead<E>(
    mut f: impl FnMut(&[f64]) -> Result<f64, E>,
    x0: &[f64],
    f0: Option<f64>,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult, E> {
    let start = Instant::now();
    let n = x0.len();
    let project = |x: &mut Vec<f64>| {
        for v in x.iter_mut() {
            *v = v.clamp(-opts.bound, opts.bound);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let mut x0p = x0.to_vec();
    project(&mut x0p);
    let f_start = match f0 {
        Some(v) if x0p == x0 => v,
        _ => eval(&x0p, &mut evals)?,
    };
    if n == 0 {
        return Ok(NelderMeadResult {
            x: x0p,
            fx: f_start,
            trajectory: vec![f_start],
            iterations: 0,
            evaluations: evals,
            termination: Termination::NothingToTrain,
        });
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    for (k, mut v) in simplex_init(&x0p).into_iter().enumerate() {
        if k == 0 {
            simplex.push((v, f_start));
            continue;
        }
        project(&mut v);
        let fv = eval(&v, &mut evals)?;
        simplex.push((v, fv));
    }
    // Stable: ties keep the earlier vertex first, so the initial point stays best on ties.
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut trajectory = vec![simplex[0].1];
    let mut iterations = 0;
    let termination = loop {
        if iterations >= opts.max_iters {
            break Termination::IterationLimit;
        }
        if evals >= opts.max_evals {
            break Termination::EvaluationLimit;
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() >= t) {
            break Termination::TimeLimit;
        }
        iterations += 1;
        let best_before = simplex[0].1;
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p);
            p
        };
        let xr = along(opts.reflection, &worst.0);
        let fr = eval(&xr, &mut evals)?;
        let mut shrink = false;
        if fr < simplex[0].1 {
            let xe = along(opts.reflection * opts.expansion, &worst.0);
            let fe = eval(&xe, &mut evals)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else if fr < worst.1 {
            let xc = along(opts.reflection * opts.contraction, &worst.0);
            let fc = eval(&xc, &mut evals)?;
            if fc <= fr {
                simplex[n] = (xc, fc);
            } else {
                shrink = true;
            }
        } else {
            let xcc = along(-opts.contraction, &worst.0);
            let fcc = eval(&xcc, &mut evals)?;
            if fcc < worst.1 {
                simplex[n] = (xcc, fcc);
            } else {
                shrink = true;
            }
        }
        if shrink {
            let best = simplex[0].0.clone();
            for k in 1..=n {
                let mut p: Vec<f64> =
                    best.iter().zip(&simplex[k].0).map(|(b, x)| b + opts.shrink * (x - b)).collect();
                project(&mut p);
                let fp = eval(&p, &mut evals)?;
                simplex[k] = (p, fp);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trajectory.push(simplex[0].1);
        let decrease = best_before - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if decrease < opts.min_decrease && diameter < opts.min_diameter {
            break Termination::Converged;
        }
    };
    let (x, fx) = simplex.swap_remove(0);
    Ok(NelderMeadResult { x, fx, trajectory, iterations, evaluations: evals, termination })
}

/// Mean assessed cost over a dataset with per-sample warm starts and a private
/// worker pool. Sample costs are summed in index order.
pub struct CostEvaluator<'a> {
    model: &'a DispatchModel,
    spec: &'a ForecastSpec,
    dataset: &'a Dataset,
    caches: Vec<Mutex<SampleCache>>,
    pool: rayon::ThreadPool,
    evaluations: usize,
}

impl<'a> CostEvaluator<'a> {
    /// `jobs = 0` uses all available cores.
    pub fn new(
        model: &'a DispatchModel,
        spec: &'a ForecastSpec,
        dataset: &'a Dataset,
        jobs: usize,
    ) -> Result<Self, TrainError> {
        spec.check_dataset(dataset)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            model,
            spec,
            dataset,
            caches: (0..dataset.len()).map(|_| Mutex::new(SampleCache::new())).collect(),
            pool,
            evaluations: 0,
        })
    }

    pub fn sample_costs(&mut self, theta: &ThetaVector) -> Result<Vec<f64>, TrainError> {
        self.evaluations += 1;
        let (model, spec, dataset, caches) = (self.model, self.spec, self.dataset, &self.caches);
        let out: Result<Vec<f64>, DispatchError> = self.pool.install(|| {
            (0..dataset.len())
                .into_par_iter()
                .map(|t| {
                    let mut cache = caches[t].lock().expect("sample cache lock");
                    model.evaluate_sample(spec, theta, dataset, t, Some(&mut cache)).map(|o| o.cost)
                })
                .collect()
        });
        Ok(out?)
    }

    pub fn cost(&mut self, theta: &ThetaVector) -> Result<f64, TrainError> {
        let costs = self.sample_costs(theta)?;
        Ok(costs.iter().sum::<f64>() / costs.len() as f64)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Mean assessed cost of `theta` on `dataset` (cold start, all cores).
pub fn cost(
    theta: &ThetaVector,
    model: &DispatchModel,
    spec: &ForecastSpec,
    dataset: &Dataset,
) -> Result<f64, TrainError> {
    CostEvaluator::new(model, spec, dataset, 0)?.cost(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Init {
    LeastSquares,
    Given(Vec<f64>),
    /// Trainable coefficients start at zero; fixed blocks take least-squares values.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub init: Init,
    /// Multiplier of the exogenous reserve rule for the least-squares baseline.
    pub z: f64,
    pub nelder_mead: NelderMeadOptions,
    /// Worker threads for per-sample solves; 0 = all cores.
    pub jobs: usize,
    /// Recorded for provenance; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { init: Init::LeastSquares, z: DEFAULT_Z, nelder_mead: NelderMeadOptions::default(), jobs: 0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let nm = &self.nelder_mead;
        let positive = [nm.reflection, nm.expansion, nm.contraction, nm.shrink, nm.bound, self.z];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(TrainError::Config("coefficients, bound and z must be positive".into()));
        }
        if nm.contraction >= 1.0 || nm.shrink >= 1.0 || nm.expansion <= 1.0 {
            return Err(TrainError::Config("need contraction, shrink < 1 < expansion".into()));
        }
        if nm.max_iters == 0 || nm.max_evals == 0 || !(nm.min_decrease >= 0.0) || !(nm.min_diameter >= 0.0) {
            return Err(TrainError::Config("limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub theta: ThetaVector,
    /// In-sample mean cost of `theta`.
    pub cost: f64,
    pub initial_cost: f64,
    /// Best in-sample cost after each iteration.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub lp_solves: usize,
    pub termination: Termination,
    pub ls_theta: ThetaVector,
    /// In-sample cost of the least-squares baseline (demand OLS, exogenous reserves).
    pub ls_cost: f64,
}

impl TrainResult {
    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("iter,cost\n");
        for (i, c) in self.trajectory.iter().enumerate() {
            s.push_str(&format!("{i},{c}\n"));
        }
        s
    }
}

/// Train the trainable blocks of `spec` on `dataset`. Fixed blocks keep their
/// initial values (least squares unless `Init::Given`).
pub fn train(
    config: &TrainConfig,
    spec: &ForecastSpec,
    model: &DispatchModel,
    dataset: &Dataset,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    let ls = spec.ls_baseline(dataset, config.z)?;
    let idx = spec.trainable_indices();
    let start = match &config.init {
        Init::LeastSquares => ls.theta.clone(),
        Init::Given(v) => spec.from_values(v.clone())?,
        Init::Zeros => ls.theta.scatter(&idx, &vec![0.0; idx.len()]),
    };
    let mut ev = CostEvaluator::new(model, spec, dataset, config.jobs)?;
    let ls_cost = ev.cost(&ls.theta)?;
    let initial_cost = if start == ls.theta { ls_cost } else { ev.cost(&start)? };
    let x0 = start.gather(&idx);
    let nm = nelder_mead(|x| ev.cost(&start.scatter(&idx, x)), &x0, Some(initial_cost), &config.nelder_mead)?;
    let theta = start.scatter(&idx, &nm.x);
    let evaluations = ev.evaluations();
    Ok(TrainResult {
        theta,
        cost: nm.fx,
        initial_cost,
        trajectory: nm.trajectory,
        iterations: nm.iterations,
        evaluations,
        lp_solves: 2 * evaluations * dataset.len(),
        termination: nm.termination,
        ls_theta: ls.theta,
        ls_cost,
    })
}
