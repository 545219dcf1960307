//! Experiment configuration: one TOML or JSON file plus flag overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::datagen::{ArProcessConfig, ExogenousVariance};
use crate::forecast::{Variant, DEFAULT_Z};
use crate::netcase::{parse_case, SystemCase};
use crate::trainer::{NelderMeadOptions, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Case file, relative to the config file.
    pub case: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Model variants by name: `ls-ex`, `ls-opt`, `opt-ex`, `opt-opt`.
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    /// Worker threads for per-sample solves; 0 = all cores.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub exact: ExactSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training dataset lengths.
    pub t: Vec<usize>,
    pub phi1: f64,
    pub cv: f64,
    pub eval_t: usize,
    pub eval_seed: u64,
    /// Innovation scale driven by the exogenous feature `E`.
    pub heteroscedastic: bool,
    pub exogenous: ExogenousVariance,
    /// Extra regressors of the reserve models, e.g. `["E"]`.
    pub reserve_features: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            t: vec![200],
            phi1: 0.9,
            cv: 0.4,
            eval_t: 10_000,
            eval_seed: 1_000_000,
            heteroscedastic: false,
            exogenous: ExogenousVariance::default(),
            reserve_features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub z: f64,
    pub max_iters: usize,
    pub max_evals: usize,
    pub min_decrease: f64,
    pub min_diameter: f64,
    pub time_limit_secs: Option<f64>,
    pub bound: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let nm = NelderMeadOptions::default();
        Self {
            z: DEFAULT_Z,
            max_iters: nm.max_iters,
            max_evals: nm.max_evals,
            min_decrease: nm.min_decrease,
            min_diameter: nm.min_diameter,
            time_limit_secs: None,
            bound: nm.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub deficit_costs: Vec<f64>,
    /// Spillage price during the sweep; `None` keeps the case value.
    pub spill: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { deficit_costs: vec![15.0, 40.0, 70.0, 100.0], spill: None }
    }
}

/// One axis of a grid evaluation: coefficient `block:feature`, e.g. `Rup_1:const`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub coef: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + self.step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x: GridAxis,
    pub y: GridAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactSection {
    pub gap_tol: f64,
    pub time_limit_secs: Option<f64>,
    /// Box pad around the least-squares and trained θ, relative to `max(1, |θ|)`.
    pub pad: f64,
    /// Explicit box of the trainable coefficients; overrides `pad`.
    pub theta_box: Option<Vec<(f64, f64)>>,
    pub dual_cap: Option<f64>,
    pub primal_cap: Option<f64>,
    pub export_mps: Option<PathBuf>,
}

impl Default for ExactSection {
    fn default() -> Self {
        Self {
            gap_tol: 1e-3,
            time_limit_secs: Some(600.0),
            pad: 0.5,
            theta_box: None,
            dual_cap: None,
            primal_cap: None,
            export_mps: None,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_variants() -> Vec<String> {
    vec!["opt-opt".into()]
}

/// Flag values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub variant: Option<String>,
    pub jobs: Option<usize>,
    pub export_mps: Option<PathBuf>,
}

fn secs(v: Option<f64>, what: &str) -> Result<Option<Duration>, CliError> {
    match v {
        None => Ok(None),
        Some(s) if s.is_finite() && s > 0.0 => Ok(Some(Duration::from_secs_f64(s))),
        Some(s) => Err(CliError::Config(format!("{what} = {s} must be positive"))),
    }
}

impl ExperimentConfig {
    /// Parse by extension (`.json` or TOML otherwise); relative paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path, over: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if cfg.case.is_relative() {
            cfg.case = dir.join(&cfg.case);
        }
        cfg.apply(over);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    pub fn apply(&mut self, over: &Overrides) {
        if let Some(o) = &over.out {
            self.out = o.clone();
        }
        if let Some(s) = &over.seeds {
            self.seeds = s.clone();
        }
        if let Some(v) = &over.variant {
            self.variants = vec![v.clone()];
        }
        if let Some(j) = over.jobs {
            self.jobs = j;
        }
        if let Some(p) = &over.export_mps {
            self.exact.export_mps = Some(p.clone());
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |s: String| Err(CliError::Config(s));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        self.variants()?;
        let d = &self.data;
        if d.t.is_empty() || d.t.iter().any(|&t| t < 2) {
            return bad(format!("data.t = {:?}: every length must be at least 2", d.t));
        }
        if d.eval_t < 2 {
            return bad(format!("data.eval_t = {} must be at least 2", d.eval_t));
        }
        if !(d.phi1.abs() < 1.0) || !(d.cv >= 0.0) || !d.cv.is_finite() {
            return bad(format!("data.phi1 = {}, data.cv = {}", d.phi1, d.cv));
        }
        if self.sweep.deficit_costs.is_empty() || self.sweep.deficit_costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad(format!("sweep.deficit_costs = {:?}", self.sweep.deficit_costs));
        }
        if let Some(g) = &self.grid {
            for (name, a) in [("x", &g.x), ("y", &g.y)] {
                if !(a.lo.is_finite() && a.hi.is_finite() && a.lo <= a.hi && a.step > 0.0) {
                    return bad(format!("grid.{name}: lo = {}, hi = {}, step = {}", a.lo, a.hi, a.step));
                }
                if a.points().len() > 1_000_000 {
                    return bad(format!("grid.{name}: too many points"));
                }
            }
        }
        let e = &self.exact;
        if !(e.gap_tol >= 0.0) || !(e.pad >= 0.0) {
            return bad(format!("exact.gap_tol = {}, exact.pad = {}", e.gap_tol, e.pad));
        }
        secs(e.time_limit_secs, "exact.time_limit_secs")?;
        secs(self.train.time_limit_secs, "train.time_limit_secs")?;
        self.train_config(0)?.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn variants(&self) -> Result<Vec<Variant>, CliError> {
        if self.variants.is_empty() {
            return Err(CliError::Config("variants must be nonempty".into()));
        }
        self.variants.iter().map(|v| v.parse().map_err(|e: crate::forecast::ForecastError| CliError::Config(e.to_string()))).collect()
    }

    pub fn case(&self) -> Result<SystemCase, CliError> {
        parse_case(&self.case).map_err(|e| CliError::Config(format!("case {}: {e}", self.case.display())))
    }

    pub fn process(&self, case: &SystemCase, seed: u64) -> ArProcessConfig {
        let p = ArProcessConfig::for_case(case, self.data.phi1, self.data.cv, seed);
        if self.data.heteroscedastic {
            p.with_exogenous(self.data.exogenous)
        } else {
            p
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let nelder_mead = NelderMeadOptions {
            max_iters: t.max_iters,
            max_evals: t.max_evals,
            min_decrease: t.min_decrease,
            min_diameter: t.min_diameter,
            time_limit: secs(t.time_limit_secs, "train.time_limit_secs")?,
            bound: t.bound,
            ..NelderMeadOptions::default()
        };
        Ok(TrainConfig { z: t.z, nelder_mead, jobs: self.jobs, seed, ..TrainConfig::default() })
    }

    pub fn exact_time_limit(&self) -> Option<Duration> {
        secs(self.exact.time_limit_secs, "exact.time_limit_secs").ok().flatten()
    }

    pub fn reserve_features(&self) -> Vec<&str> {
        self.data.reserve_features.iter().map(String::as_str).collect()
    }
}
