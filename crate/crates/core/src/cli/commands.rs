//! Subcommands. Datasets are regenerated from the config on every run, so each
//! command is reproducible on its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifact::{io_err, write_json, write_table};
use super::{CliError, ExperimentConfig, Outcome};
use crate::datagen::{generate, Dataset};
use crate::dispatch::{DispatchModel, DispatchOptions};
use crate::exact::{build_kkt, export_bigm_mps, solve_bnb, BigMOptions, BnbOptions, BnbStatus};
use crate::forecast::{Family, ForecastSpec, ThetaVector, Variant, CONST, LAG1};
use crate::lp::write_mps;
use crate::netcase::{compute_ptdf, SystemCase};
use crate::trainer::{train, CostEvaluator, TrainResult};

fn num(v: f64) -> String {
    format!("{v}")
}

/// Trained coefficients of one `(variant, T, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFile {
    pub variant: String,
    pub t: usize,
    pub seed: u64,
    pub coefficients: BTreeMap<String, Vec<f64>>,
    pub in_sample_cost: f64,
    pub ls_cost: f64,
}

pub fn theta_path(out: &Path, variant: Variant, t: usize, seed: u64) -> PathBuf {
    out.join(format!("theta_{variant}_T{t}_s{seed}.json"))
}

fn model(case: &SystemCase) -> Result<DispatchModel, CliError> {
    let ptdf = compute_ptdf(case, None).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(DispatchModel::new(case, &ptdf, DispatchOptions::default())?)
}

fn training_data(cfg: &ExperimentConfig, case: &SystemCase, seed: u64, t: usize) -> Result<Dataset, CliError> {
    Ok(generate(&cfg.process(case, seed), t)?)
}

fn eval_data(cfg: &ExperimentConfig, case: &SystemCase) -> Result<Dataset, CliError> {
    Ok(generate(&cfg.process(case, cfg.data.eval_seed), cfg.data.eval_t)?)
}

fn spec_for(cfg: &ExperimentConfig, case: &SystemCase, ds: &Dataset, v: Variant) -> Result<ForecastSpec, CliError> {
    ForecastSpec::standard(case, ds, v, &cfg.reserve_features()).map_err(|e| CliError::Config(e.to_string()))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn total(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = total(v) / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let case = cfg.case()?;
    let out = out_dir(cfg)?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut emit = |kind: &str, seed: u64, ds: &Dataset, name: String| -> Result<(), CliError> {
        let path = out.join(&name);
        ds.save(&path)?;
        let series: Vec<f64> = (0..ds.len()).map(|t| total(ds.demand(t))).collect();
        let (m, s) = mean_std(&series);
        rows.push(vec![kind.into(), ds.len().to_string(), seed.to_string(), name, num(m), num(s)]);
        files.push(path);
        Ok(())
    };
    for &seed in &cfg.seeds {
        for &t in &cfg.data.t {
            emit("train", seed, &training_data(cfg, &case, seed, t)?, format!("data_T{t}_s{seed}.csv"))?;
        }
    }
    emit("eval", cfg.data.eval_seed, &eval_data(cfg, &case)?, "eval.csv".into())?;
    let path = out.join("generate.csv");
    write_table(cfg, "generate", &path, &["kind", "t", "seed", "file", "mean_total_demand", "std_total_demand"], &rows)?;
    files.push(path);
    Ok(Outcome { files, timeouts: 0 })
}

fn train_one(
    cfg: &ExperimentConfig,
    case: &SystemCase,
    model: &DispatchModel,
    v: Variant,
    ds: &Dataset,
    seed: u64,
) -> Result<(ForecastSpec, TrainResult), CliError> {
    let spec = spec_for(cfg, case, ds, v)?;
    let r = train(&cfg.train_config(seed)?, &spec, model, ds)?;
    Ok((spec, r))
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let case = cfg.case()?;
    let model = model(&case)?;
    let out = out_dir(cfg)?;
    let mut rows = Vec::new();
    let mut coef_rows = Vec::new();
    let mut files = Vec::new();
    for v in cfg.variants()? {
        for &t in &cfg.data.t {
            for &seed in &cfg.seeds {
                let ds = training_data(cfg, &case, seed, t)?;
                let (spec, r) = train_one(cfg, &case, &model, v, &ds, seed)?;
                let coefficients = spec.unpack(&r.theta)?;
                for (name, vals) in &coefficients {
                    let block = &spec.blocks()[spec.block_index(name).expect("unpacked block")];
                    for (f, val) in block.features.iter().zip(vals) {
                        coef_rows.push(vec![v.to_string(), t.to_string(), seed.to_string(), format!("{name}:{f}"), num(*val)]);
                    }
                }
                rows.push(vec![
                    v.to_string(),
                    t.to_string(),
                    seed.to_string(),
                    num(r.ls_cost),
                    num(r.initial_cost),
                    num(r.cost),
                    r.iterations.to_string(),
                    r.evaluations.to_string(),
                    format!("{:?}", r.termination),
                ]);
                let path = theta_path(out, v, t, seed);
                let file = ThetaFile {
                    variant: v.to_string(),
                    t,
                    seed,
                    coefficients,
                    in_sample_cost: r.cost,
                    ls_cost: r.ls_cost,
                };
                write_json(&path, &file)?;
                files.push(path);
            }
        }
    }
    let header = ["variant", "t", "seed", "ls_cost", "initial_cost", "cost", "iterations", "evaluations", "termination"];
    let path = out.join("train.csv");
    write_table(cfg, "train", &path, &header, &rows)?;
    files.push(path);
    let path = out.join("theta.csv");
    write_table(cfg, "train", &path, &["variant", "t", "seed", "coef", "value"], &coef_rows)?;
    files.push(path);
    Ok(Outcome { files, timeouts: 0 })
}

pub fn read_theta(path: &Path, spec: &ForecastSpec) -> Result<ThetaVector, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e} (run `train` first)", path.display())))?;
    let file: ThetaFile = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    spec.pack(&file.coefficients).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let case = cfg.case()?;
    let model = model(&case)?;
    let out = out_dir(cfg)?;
    let eval = eval_data(cfg, &case)?;
    let realized: Vec<f64> = (0..eval.len()).map(|t| total(eval.demand(t))).collect();
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for v in cfg.variants()? {
        let spec = spec_for(cfg, &case, &eval, v)?;
        let mut evaluator = CostEvaluator::new(&model, &spec, &eval, cfg.jobs)?;
        for &t in &cfg.data.t {
            for &seed in &cfg.seeds {
                let theta = read_theta(&theta_path(out, v, t, seed), &spec)?;
                let costs = evaluator.sample_costs(&theta)?;
                let mut err_rows = Vec::with_capacity(eval.len());
                let mut errors = Vec::with_capacity(eval.len());
                for (k, d) in realized.iter().enumerate() {
                    let f = total(&spec.predict(&theta, eval.features(k))?.demand);
                    errors.push(d - f);
                    err_rows.push(vec![k.to_string(), num(*d), num(f), num(d - f), num(costs[k])]);
                }
                let (me, se) = mean_std(&errors);
                let (mc, _) = mean_std(&costs);
                rows.push(vec![
                    v.to_string(),
                    t.to_string(),
                    seed.to_string(),
                    num(mc),
                    num(me),
                    num(se / (errors.len() as f64).sqrt()),
                    eval.len().to_string(),
                ]);
                let path = out.join(format!("errors_{v}_T{t}_s{seed}.csv"));
                write_table(cfg, "evaluate", &path, &["sample", "realized", "forecast", "error", "cost"], &err_rows)?;
                files.push(path);
            }
        }
    }
    let path = out.join("evaluate.csv");
    let header = ["variant", "t", "seed", "mean_cost", "mean_error", "error_se", "samples"];
    write_table(cfg, "evaluate", &path, &header, &rows)?;
    files.push(path);
    Ok(Outcome { files, timeouts: 0 })
}

/// Sum over demand blocks of `θ_const / (1 − θ_lag1)`.
pub fn steady_state(spec: &ForecastSpec, theta: &ThetaVector) -> f64 {
    let mut s = 0.0;
    for (k, b) in spec.blocks().iter().enumerate() {
        if b.family != Family::Demand {
            continue;
        }
        let r = spec.block_range(k);
        let at = |name: &str| b.features.iter().position(|f| f == name).map_or(0.0, |i| theta.values[r.start + i]);
        s += at(CONST) / (1.0 - at(LAG1));
    }
    s
}

/// Mean system-wide up and down requirement over the dataset.
fn mean_reserves(spec: &ForecastSpec, theta: &ThetaVector, ds: &Dataset) -> Result<(f64, f64), CliError> {
    let (mut up, mut dn) = (0.0, 0.0);
    for t in 0..ds.len() {
        let p = spec.predict(theta, ds.features(t))?;
        up += total(&p.r_up);
        dn += total(&p.r_dn);
    }
    let n = ds.len() as f64;
    Ok((up / n, dn / n))
}

pub fn cmd_sweep_deficit(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let base = cfg.case()?;
    let out = out_dir(cfg)?;
    let (seed, t) = (cfg.seeds[0], cfg.data.t[0]);
    let ds = training_data(cfg, &base, seed, t)?;
    let spill = cfg.sweep.spill.unwrap_or(base.penalties.spill);
    let mut rows = Vec::new();
    for v in cfg.variants()? {
        for &lambda in &cfg.sweep.deficit_costs {
            let case = base.with_penalties(lambda, spill).map_err(|e| CliError::Config(format!("sweep: {e}")))?;
            let model = model(&case)?;
            let (spec, r) = train_one(cfg, &case, &model, v, &ds, seed)?;
            let (up, dn) = mean_reserves(&spec, &r.theta, &ds)?;
            let (ls_up, ls_dn) = mean_reserves(&spec, &r.ls_theta, &ds)?;
            rows.push(vec![
                v.to_string(),
                num(lambda),
                num(steady_state(&spec, &r.theta)),
                num(up),
                num(dn),
                num(steady_state(&spec, &r.ls_theta)),
                num(ls_up),
                num(ls_dn),
                num(r.cost),
                num(r.ls_cost),
            ]);
        }
    }
    let header = [
        "variant",
        "deficit_cost",
        "steady_state_forecast",
        "r_up",
        "r_dn",
        "ls_steady_state_forecast",
        "ls_r_up",
        "ls_r_dn",
        "cost",
        "ls_cost",
    ];
    let path = out.join("sweep_deficit.csv");
    write_table(cfg, "sweep-deficit", &path, &header, &rows)?;
    Ok(Outcome { files: vec![path], timeouts: 0 })
}

/// Flat index of coefficient `block:feature`.
pub fn coef_index(spec: &ForecastSpec, coef: &str) -> Result<usize, CliError> {
    let bad = || CliError::Config(format!("grid coefficient `{coef}` is not `block:feature` of this forecast"));
    let (block, feature) = coef.split_once(':').ok_or_else(bad)?;
    let k = spec.block_index(block).ok_or_else(bad)?;
    let i = spec.blocks()[k].features.iter().position(|f| f == feature).ok_or_else(bad)?;
    Ok(spec.block_range(k).start + i)
}

pub fn cmd_grid_eval(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let grid = cfg.grid.as_ref().ok_or_else(|| CliError::Config("grid-eval needs a [grid] section".into()))?;
    let case = cfg.case()?;
    let model = model(&case)?;
    let out = out_dir(cfg)?;
    let ds = training_data(cfg, &case, cfg.seeds[0], cfg.data.t[0])?;
    let spec = spec_for(cfg, &case, &ds, cfg.variants()?[0])?;
    let (ix, iy) = (coef_index(&spec, &grid.x.coef)?, coef_index(&spec, &grid.y.coef)?);
    if ix == iy {
        return Err(CliError::Config("grid axes must be different coefficients".into()));
    }
    let base = spec.ls_baseline(&ds, cfg.train.z)?.theta;
    let mut evaluator = CostEvaluator::new(&model, &spec, &ds, cfg.jobs)?;
    let mut rows = Vec::new();
    for &x in &grid.x.points() {
        for &y in &grid.y.points() {
            let mut theta = base.clone();
            theta.values[ix] = x;
            theta.values[iy] = y;
            rows.push(vec![num(x), num(y), num(evaluator.cost(&theta)?)]);
        }
    }
    let path = out.join("grid_eval.csv");
    write_table(cfg, "grid-eval", &path, &[&grid.x.coef, &grid.y.coef, "cost"], &rows)?;
    Ok(Outcome { files: vec![path], timeouts: 0 })
}

fn mps_path(base: &Path, many: bool, v: Variant, t: usize, seed: u64) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    base.with_file_name(format!("{stem}_{v}_T{t}_s{seed}.mps"))
}

pub fn cmd_exact(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let case = cfg.case()?;
    let model = model(&case)?;
    let out = out_dir(cfg)?;
    let e = &cfg.exact;
    let variants = cfg.variants()?;
    let many = variants.len() * cfg.data.t.len() * cfg.seeds.len() > 1;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut timeouts = 0;
    for &v in &variants {
        for &t in &cfg.data.t {
            for &seed in &cfg.seeds {
                let ds = training_data(cfg, &case, seed, t)?;
                let (spec, heur) = train_one(cfg, &case, &model, v, &ds, seed)?;
                let inst = build_kkt(&model, &spec, &ds, &heur.ls_theta, e.dual_cap)?;
                let anchors = [heur.ls_theta.clone(), heur.theta.clone()];
                let theta_box = e.theta_box.clone().unwrap_or_else(|| inst.theta_box_around(&anchors, e.pad));
                if let Some(base) = &e.export_mps {
                    let opts = BigMOptions {
                        theta_box: Some(theta_box.clone()),
                        primal_cap: e.primal_cap,
                        dual_cap: e.dual_cap,
                        ..Default::default()
                    };
                    let path = mps_path(base, many, v, t, seed);
                    let text = write_mps(&export_bigm_mps(&inst, &opts)?.model)?;
                    std::fs::write(&path, text).map_err(|err| io_err(&path, err))?;
                    files.push(path);
                }
                let opts = BnbOptions {
                    gap_tol: e.gap_tol,
                    time_limit: cfg.exact_time_limit(),
                    theta_box: Some(theta_box),
                    jobs: cfg.jobs,
                    ..Default::default()
                };
                let r = solve_bnb(&inst, &opts, &anchors)?;
                if r.status != BnbStatus::Optimal {
                    timeouts += 1;
                }
                rows.push(vec![
                    v.to_string(),
                    t.to_string(),
                    seed.to_string(),
                    num(heur.ls_cost),
                    num(heur.cost),
                    num(r.objective),
                    num(r.lower_bound),
                    num(r.gap),
                    num(heur.cost / r.objective),
                    format!("{:?}", r.status),
                    r.nodes.to_string(),
                    num(r.complementarity),
                ]);
                let path = out.join(format!("exact_{v}_T{t}_s{seed}.json"));
                let file = ThetaFile {
                    variant: v.to_string(),
                    t,
                    seed,
                    coefficients: spec.unpack(&r.theta)?,
                    in_sample_cost: r.objective,
                    ls_cost: heur.ls_cost,
                };
                write_json(&path, &file)?;
                files.push(path);
            }
        }
    }
    let header = [
        "variant",
        "t",
        "seed",
        "ls_cost",
        "heuristic_cost",
        "exact_objective",
        "lower_bound",
        "gap",
        "ratio",
        "status",
        "nodes",
        "complementarity",
    ];
    let path = out.join("exact.csv");
    write_table(cfg, "exact", &path, &header, &rows)?;
    files.push(path);
    Ok(Outcome { files, timeouts })
}
