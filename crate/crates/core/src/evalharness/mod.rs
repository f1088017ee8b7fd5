//! Monte Carlo comparison of design strategies.
//!
//! Four methods are compared on finite ground-truth populations:
//!
//! | method           | estimator   | allocation                       |
//! |------------------|-------------|----------------------------------|
//! | `sm_uniform`     | sample mean | equal seats                      |
//! | `ppi_uniform`    | PPI++       | equal seats                      |
//! | `ppi_opt_pred`   | PPI++       | square-root rule on predicted Ã  |
//! | `ppi_opt_oracle` | PPI++       | square-root rule on population Â |
//!
//! Every (replication, budget, run, question) cell draws from its own RNG
//! stream, seeded by [`derive_seed`](crate::stats::derive_seed) from the
//! master seed and those four indices. Methods share the stream (common
//! random numbers): each draws a prefix of the same random ordering of the
//! population. Results therefore do not depend on thread count or
//! scheduling.

mod report;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate_with_floor, round_allocation, Allocation, AllocationProblem, QuestionSpec};
use crate::error::{Error, Result};
use crate::estimator::{diagnostics, lambda_hat, ppi_pp_estimate};
use crate::sampledata::{PairedSample, Population, SyntheticSummary};
use crate::stats::{self, derive_seed};

pub use report::{
    budget_invariance_report, BudgetInvariance, BudgetReport, InvarianceEntry, MethodReport,
    MethodSummary, Stat,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SmUniform,
    PpiUniform,
    PpiOptPred,
    PpiOptOracle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SmUniform,
        Method::PpiUniform,
        Method::PpiOptPred,
        Method::PpiOptOracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SmUniform => "sm_uniform",
            Method::PpiUniform => "ppi_uniform",
            Method::PpiOptPred => "ppi_opt_pred",
            Method::PpiOptOracle => "ppi_opt_oracle",
        }
    }

    fn uses_ppi(self) -> bool {
        self != Method::SmUniform
    }
}

/// How λ is chosen inside each simulated survey.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Re-estimated on every drawn sample.
    #[default]
    Refit,
    /// Fixed at the full-population value (ablation).
    Frozen,
}

/// What PPI methods do about questions that would get fewer than two seats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallSamplePolicy {
    /// Allocate at least two seats per question.
    #[default]
    Floor,
    /// Allow one seat and fall back to λ = 0 there.
    LambdaZero,
}

/// Predicted difficulties, shared by every replication or one map each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictedDifficulties {
    Single(BTreeMap<String, f64>),
    PerReplication(Vec<BTreeMap<String, f64>>),
}

impl PredictedDifficulties {
    fn for_replication(&self, rep: usize) -> &BTreeMap<String, f64> {
        match self {
            PredictedDifficulties::Single(m) => m,
            PredictedDifficulties::PerReplication(v) => &v[rep],
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub budgets: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Importance weights by question id; missing entries default to 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    /// Unit costs by question id; missing entries default to 1.
    #[serde(default)]
    pub costs: BTreeMap<String, f64>,
    #[serde(default)]
    pub predicted: Option<PredictedDifficulties>,
    pub mc_runs: usize,
    pub replications: usize,
    pub master_seed: u64,
    /// Log-scale spread multiplier applied to the populations' difficulties.
    #[serde(default = "one")]
    pub alpha_amplify: f64,
    #[serde(default)]
    pub lambda: LambdaMode,
    #[serde(default)]
    pub small_sample: SmallSamplePolicy,
    #[serde(default)]
    pub with_replacement: bool,
}

impl ExperimentConfig {
    pub fn new(budgets: Vec<f64>, mc_runs: usize, replications: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            budgets,
            methods: default_methods(),
            weights: BTreeMap::new(),
            costs: BTreeMap::new(),
            predicted: None,
            mc_runs,
            replications,
            master_seed,
            alpha_amplify: 1.0,
            lambda: LambdaMode::default(),
            small_sample: SmallSamplePolicy::default(),
            with_replacement: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub populations: Vec<Population>,
    pub config: ExperimentConfig,
}

/// Mean-preserving spread on the log scale:
/// `log A' = μ + α (log A − μ)` with `μ` the mean of `log A`.
pub fn amplify_heterogeneity(a: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if let Some(bad) = a.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("difficulty {bad} must be positive")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha = {alpha} must be positive")));
    }
    let logs: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let mu = stats::mean(&logs);
    Ok(logs.iter().map(|l| (mu + alpha * (l - mu)).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// Weighted mean squared and absolute error: `Σ w e² / Σ w`, `Σ w |e| / Σ w`.
pub fn metrics(errors: &[f64], weights: &[f64]) -> Result<ErrorMetrics> {
    if errors.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: errors.len(),
            got: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("weights must have a positive sum"));
    }
    let mse = errors.iter().zip(weights).map(|(e, w)| w * e * e).sum::<f64>() / total;
    let mae = errors.iter().zip(weights).map(|(e, w)| w * e.abs()).sum::<f64>() / total;
    Ok(ErrorMetrics {
        mse,
        rmse: mse.sqrt(),
        mae,
    })
}

/// Populations after amplification, with their full-population statistics.
struct World {
    pops: Vec<Population>,
    ids: Vec<String>,
    w: Vec<f64>,
    c: Vec<f64>,
    oracle_a: Vec<f64>,
    var_y: Vec<f64>,
    lambda: Vec<f64>,
    pool: Vec<SyntheticSummary>,
}

fn prepare(exp: &Experiment) -> Result<World> {
    let cfg = &exp.config;
    if exp.populations.is_empty() {
        return Err(Error::invalid("no populations"));
    }
    if cfg.budgets.is_empty() || cfg.budgets.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::invalid("budgets must be a nonempty list of positive numbers"));
    }
    if cfg.methods.is_empty() {
        return Err(Error::invalid("no methods selected"));
    }
    if cfg.mc_runs == 0 || cfg.replications == 0 {
        return Err(Error::invalid("mc_runs and replications must be positive"));
    }
    let ids: Vec<String> = exp.populations.iter().map(|p| p.question_id.clone()).collect();
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::invalid(format!("duplicate population `{dup}`")));
    }
    for key in cfg.weights.keys().chain(cfg.costs.keys()) {
        if !seen.contains(key.as_str()) {
            return Err(Error::invalid(format!("weight/cost given for unknown question `{key}`")));
        }
    }
    if cfg.methods.contains(&Method::PpiOptPred) {
        let pred = cfg
            .predicted
            .as_ref()
            .ok_or_else(|| Error::invalid("ppi_opt_pred requires predicted difficulties"))?;
        if let PredictedDifficulties::PerReplication(v) = pred {
            if v.len() != cfg.replications {
                return Err(Error::invalid(format!(
                    "{} predicted maps for {} replications",
                    v.len(),
                    cfg.replications
                )));
            }
        }
        for rep in 0..cfg.replications {
            let m = pred.for_replication(rep);
            for id in &ids {
                match m.get(id) {
                    Some(a) if *a > 0.0 && a.is_finite() => {}
                    Some(a) => return Err(Error::invalid(format!("predicted difficulty {a} for `{id}`"))),
                    None => return Err(Error::invalid(format!("no predicted difficulty for `{id}`"))),
                }
            }
        }
    }

    let mut pops = exp.populations.clone();
    if cfg.alpha_amplify != 1.0 {
        let base: Vec<f64> = pops
            .iter()
            .map(|p| diagnostics(&p.as_sample()).map(|d| d.a_hat))
            .collect::<Result<_>>()?;
        let target = amplify_heterogeneity(&base, cfg.alpha_amplify)?;
        pops = pops
            .iter()
            .zip(base.iter().zip(&target))
            .map(|(p, (a, t))| p.rescale_spread((t / a).sqrt()))
            .collect();
    }
    let diags = pops
        .iter()
        .map(|p| diagnostics(&p.as_sample()))
        .collect::<Result<Vec<_>>>()?;
    let w: Vec<f64> = ids.iter().map(|id| cfg.weights.get(id).copied().unwrap_or(1.0)).collect();
    let c: Vec<f64> = ids.iter().map(|id| cfg.costs.get(id).copied().unwrap_or(1.0)).collect();
    Ok(World {
        ids,
        w,
        c,
        oracle_a: diags.iter().map(|d| d.a_hat.max(1e-300)).collect(),
        var_y: diags.iter().map(|d| d.var_y).collect(),
        lambda: diags.iter().map(|d| d.lambda_hat).collect(),
        pool: pops.iter().map(|p| p.surrogate_pool(true)).collect(),
        pops,
    })
}

impl World {
    fn specs(&self, a: &[f64]) -> Vec<QuestionSpec> {
        (0..self.ids.len())
            .map(|q| QuestionSpec::new(self.ids[q].clone(), a[q], self.w[q], self.c[q]))
            .collect()
    }

    fn difficulties(&self, method: Method, cfg: &ExperimentConfig, rep: usize) -> Vec<f64> {
        match method {
            Method::PpiOptOracle => self.oracle_a.clone(),
            Method::PpiOptPred => {
                let m = cfg.predicted.as_ref().expect("validated").for_replication(rep);
                self.ids.iter().map(|id| m[id]).collect()
            }
            _ => vec![1.0; self.ids.len()],
        }
    }

    /// Continuous allocation of a method at one budget.
    fn continuous(&self, method: Method, cfg: &ExperimentConfig, rep: usize, budget: f64) -> Result<Allocation> {
        let specs = self.specs(&self.difficulties(method, cfg, rep));
        match method {
            Method::SmUniform | Method::PpiUniform => {
                let per = budget / self.c.iter().sum::<f64>();
                Allocation::from_sizes(&specs, budget, vec![per; specs.len()])
            }
            _ => {
                let floor = if cfg.small_sample == SmallSamplePolicy::Floor { 2.0 } else { 0.0 };
                allocate_with_floor(&AllocationProblem::new(specs, budget), floor)
            }
        }
    }

    fn seats(&self, method: Method, cfg: &ExperimentConfig, rep: usize, budget: f64) -> Result<Vec<u64>> {
        let mut alloc = self.continuous(method, cfg, rep, budget)?;
        let specs = self.specs(&self.difficulties(method, cfg, rep));
        round_allocation(&mut alloc, &specs)?;
        let seats = alloc.seats().expect("rounded");
        let need = if method.uses_ppi() && cfg.small_sample == SmallSamplePolicy::Floor { 2 } else { 1 };
        for (q, &n) in seats.iter().enumerate() {
            if self.w[q] == 0.0 {
                continue;
            }
            if n < need {
                return Err(Error::invalid(format!(
                    "{} at budget {budget}: question `{}` gets {n} seats, needs {need}",
                    method.as_str(),
                    self.ids[q]
                )));
            }
            if !cfg.with_replacement && n as usize > self.pops[q].len() {
                return Err(Error::invalid(format!(
                    "{} at budget {budget}: {n} seats exceed population `{}` of {}",
                    method.as_str(),
                    self.ids[q],
                    self.pops[q].len()
                )));
            }
        }
        Ok(seats)
    }

    fn estimate(&self, q: usize, method: Method, idx: &[usize], cfg: &ExperimentConfig) -> Result<f64> {
        let pop = &self.pops[q];
        let sample = PairedSample {
            question_id: pop.question_id.clone(),
            y_human: idx.iter().map(|&i| pop.y_human[i]).collect(),
            y_surrogate: idx.iter().map(|&i| pop.y_surrogate[i]).collect(),
            synthetic_pool: Some(self.pool[q]),
        };
        if !method.uses_ppi() {
            return ppi_pp_estimate(&sample, 0.0);
        }
        let lambda = match cfg.lambda {
            LambdaMode::Frozen => self.lambda[q],
            LambdaMode::Refit if sample.len() < 2 => 0.0,
            LambdaMode::Refit => lambda_hat(&sample)?,
        };
        ppi_pp_estimate(&sample, lambda)
    }
}

/// Per-run (mse, mae) for every method, in method order.
fn one_run(
    world: &World,
    cfg: &ExperimentConfig,
    seats: &[Vec<u64>],
    rep: usize,
    b: usize,
    run: usize,
) -> Result<Vec<(f64, f64)>> {
    let nm = cfg.methods.len();
    let mut errs = vec![Vec::with_capacity(world.ids.len()); nm];
    let mut weights = Vec::with_capacity(world.ids.len());
    for q in 0..world.ids.len() {
        if world.w[q] == 0.0 {
            continue;
        }
        weights.push(world.w[q]);
        let seed = derive_seed(cfg.master_seed, &[rep as u64, b as u64, run as u64, q as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_max = seats.iter().map(|s| s[q]).max().unwrap_or(0) as usize;
        let size = world.pops[q].len();
        // A uniformly random ordering's prefix is a simple random sample of
        // any length, so one draw serves every method.
        let order: Vec<usize> = if cfg.with_replacement {
            (0..n_max).map(|_| rng.random_range(0..size)).collect()
        } else {
            index::sample(&mut rng, size, n_max).into_vec()
        };
        for (m, &method) in cfg.methods.iter().enumerate() {
            let n = seats[m][q] as usize;
            let theta = world.estimate(q, method, &order[..n], cfg)?;
            errs[m].push(theta - world.pops[q].theta_star);
        }
    }
    errs.iter()
        .map(|e| metrics(e, &weights).map(|m| (m.mse, m.mae)))
        .collect()
}

/// Runs the Monte Carlo experiment on the current rayon pool.
pub fn run(exp: &Experiment) -> Result<MethodReport> {
    let world = prepare(exp)?;
    let cfg = &exp.config;
    let (nr, nruns, nm) = (cfg.replications, cfg.mc_runs, cfg.methods.len());
    let mut budgets = Vec::with_capacity(cfg.budgets.len());
    for (b, &budget) in cfg.budgets.iter().enumerate() {
        let seats: Vec<Vec<Vec<u64>>> = (0..nr)
            .map(|rep| {
                cfg.methods
                    .iter()
                    .map(|&m| world.seats(m, cfg, rep, budget))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        let runs: Vec<Vec<(f64, f64)>> = (0..nr * nruns)
            .into_par_iter()
            .map(|t| one_run(&world, cfg, &seats[t / nruns], t / nruns, b, t % nruns))
            .collect::<Result<_>>()?;
        // runs[rep * nruns + run][method]
        let cell = |m: usize, f: &dyn Fn(&(f64, f64)) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r[m])).collect() };
        let mse_runs: Vec<Vec<f64>> = (0..nm).map(|m| cell(m, &|x| x.0)).collect();
        let mae_runs: Vec<Vec<f64>> = (0..nm).map(|m| cell(m, &|x| x.1)).collect();
        let rmse_runs: Vec<Vec<f64>> = mse_runs.iter().map(|v| v.iter().map(|x| x.sqrt()).collect()).collect();
        budgets.push(BudgetReport {
            budget,
            methods: summarize(&cfg.methods, &mse_runs, &rmse_runs, &mae_runs, nruns),
        });
    }
    Ok(MethodReport {
        replications: nr,
        mc_runs: nruns,
        common_random_numbers: true,
        analytical: false,
        budgets,
    })
}

/// Runs on a dedicated pool of `threads` workers.
pub fn run_with_threads(exp: &Experiment, threads: usize) -> Result<MethodReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run(exp))
}

/// Expected errors from the variance formula alone: per question
/// `A / n_q` (with `A = Var(Y)` for the sample mean), on continuous
/// allocations. Free of Monte Carlo noise.
pub fn run_analytical(exp: &Experiment) -> Result<MethodReport> {
    let world = prepare(exp)?;
    let cfg = &exp.config;
    let nr = cfg.replications;
    let total_w: f64 = world.w.iter().sum();
    let mut budgets = Vec::new();
    for &budget in &cfg.budgets {
        let mut mse = vec![Vec::with_capacity(nr); cfg.methods.len()];
        for rep in 0..nr {
            for (m, &method) in cfg.methods.iter().enumerate() {
                let sizes = world.continuous(method, cfg, rep, budget)?.sizes();
                let a = if method.uses_ppi() { &world.oracle_a } else { &world.var_y };
                let j: f64 = (0..sizes.len())
                    .filter(|&q| world.w[q] > 0.0)
                    .map(|q| world.w[q] * a[q] / sizes[q])
                    .sum();
                mse[m].push(j / total_w);
            }
        }
        let rmse: Vec<Vec<f64>> = mse.iter().map(|v| v.iter().map(|x| x.sqrt()).collect()).collect();
        // MAE of a centered normal error is sqrt(2/π)·sd.
        let mae: Vec<Vec<f64>> = (0..cfg.methods.len())
            .map(|m| {
                (0..nr)
                    .map(|rep| {
                        let sizes = world
                            .continuous(cfg.methods[m], cfg, rep, budget)
                            .expect("computed above")
                            .sizes();
                        let a = if cfg.methods[m].uses_ppi() { &world.oracle_a } else { &world.var_y };
                        (0..sizes.len())
                            .filter(|&q| world.w[q] > 0.0)
                            .map(|q| world.w[q] * (2.0 * a[q] / (std::f64::consts::PI * sizes[q])).sqrt())
                            .sum::<f64>()
                            / total_w
                    })
                    .collect()
            })
            .collect();
        budgets.push(BudgetReport {
            budget,
            methods: summarize(&cfg.methods, &mse, &rmse, &mae, 1),
        });
    }
    Ok(MethodReport {
        replications: nr,
        mc_runs: 0,
        common_random_numbers: true,
        analytical: true,
        budgets,
    })
}

/// Replication means of run-level values laid out `[rep * runs + run]`.
fn rep_means(v: &[f64], runs: usize) -> Vec<f64> {
    v.chunks(runs).map(stats::mean).collect()
}

fn se_of_mean(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (stats::sample_var(v) / v.len() as f64).sqrt()
}

/// Percent reduction `1 − X̄/Ȳ` with a delta-method standard error from
/// paired run-level values.
fn reduction(x: &[f64], y: &[f64], runs: usize) -> Stat {
    let per_rep: Vec<f64> = rep_means(x, runs)
        .iter()
        .zip(rep_means(y, runs))
        .map(|(a, b)| 100.0 * (1.0 - a / b))
        .collect();
    let ratio = stats::mean(x) / stats::mean(y);
    let lin: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - ratio * b).collect();
    let mut s = Stat::from_replications(&per_rep, 100.0 * se_of_mean(&lin) / stats::mean(y));
    s.mean = 100.0 * (1.0 - ratio);
    s
}

fn summarize(
    methods: &[Method],
    mse: &[Vec<f64>],
    rmse: &[Vec<f64>],
    mae: &[Vec<f64>],
    runs: usize,
) -> Vec<MethodSummary> {
    let base = methods.iter().position(|&m| m == Method::SmUniform);
    let oracle = methods.iter().position(|&m| m == Method::PpiOptOracle);
    let stat = |v: &[f64]| Stat::from_replications(&rep_means(v, runs), se_of_mean(v));
    methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let red = |metric: &[Vec<f64>]| base.map(|b| reduction(&metric[m], &metric[b], runs));
            let gain_coverage = match (base, oracle) {
                (Some(b), Some(o)) => {
                    let y = &mse[b];
                    let ro = |rep: &[f64], base: &[f64]| 1.0 - stats::mean(rep) / stats::mean(base);
                    let per_rep: Vec<f64> = mse[m]
                        .chunks(runs)
                        .zip(mse[o].chunks(runs))
                        .zip(y.chunks(runs))
                        .map(|((xm, xo), yb)| 100.0 * ro(xm, yb) / ro(xo, yb))
                        .collect();
                    let (ym, xm, xo) = (stats::mean(y), stats::mean(&mse[m]), stats::mean(&mse[o]));
                    let cov = (ym - xm) / (ym - xo);
                    let lin: Vec<f64> = (0..y.len())
                        .map(|i| (y[i] - mse[m][i]) - cov * (y[i] - mse[o][i]))
                        .collect();
                    let mut s = Stat::from_replications(&per_rep, 100.0 * se_of_mean(&lin) / (ym - xo).abs());
                    s.mean = 100.0 * cov;
                    Some(s)
                }
                _ => None,
            };
            MethodSummary {
                method,
                mse: stat(&mse[m]),
                rmse: stat(&rmse[m]),
                rmse_of_mean_mse: stats::mean(&mse[m]).sqrt(),
                mae: stat(&mae[m]),
                mse_reduction: red(mse),
                rmse_reduction: red(rmse),
                mae_reduction: red(mae),
                gain_coverage,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampledata::{synth_population, PopulationSpec};

    #[test]
    fn metric_examples() {
        let m = metrics(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((m.mse, m.rmse, m.mae), (0.0, 0.0, 0.0));
        let m = metrics(&[0.1, 0.3], &[1.0, 1.0]).unwrap();
        assert!((m.mse - 0.05).abs() < 1e-15);
        assert!((m.rmse - 0.05f64.sqrt()).abs() < 1e-15);
        assert!((m.mae - 0.2).abs() < 1e-15);
        let m = metrics(&[0.1, 0.3], &[1.0, 0.0]).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-15 && (m.mae - 0.1).abs() < 1e-15);
        assert!(metrics(&[0.1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn amplification() {
        let a = [0.3, 0.05, 0.12];
        assert_eq!(amplify_heterogeneity(&a, 1.0).unwrap().len(), 3);
        for (x, y) in amplify_heterogeneity(&a, 1.0).unwrap().iter().zip(a) {
            assert!((x - y).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let out = amplify_heterogeneity(&[1.0 / e, e], 2.0).unwrap();
        assert!((out[0] - (-2f64).exp()).abs() < 1e-15 && (out[1] - 2f64.exp()).abs() < 1e-14);
        let amp = amplify_heterogeneity(&a, 3.0).unwrap();
        let ml = |v: &[f64]| v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64;
        assert!((ml(&amp) - ml(&a)).abs() < 1e-14);
        assert!(amplify_heterogeneity(&[0.0], 2.0).is_err());
    }

    fn world(rhos: &[f64], n_pop: usize) -> Vec<Population> {
        rhos.iter()
            .enumerate()
            .map(|(i, &rho)| {
                let spec = PopulationSpec {
                    var_y: 0.1,
                    rho,
                    mean_y: 0.5,
                    mean_s: 0.4,
                    var_s: 0.1,
                    n_pop,
                    bounded: false,
                };
                synth_population(format!("q{i}"), &spec, 100 + i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn equal_difficulties_make_optimal_uniform() {
        let pops = world(&[0.6, 0.6, 0.6, 0.6], 500);
        let mut cfg = ExperimentConfig::new(vec![40.0], 20, 2, 9);
        cfg.methods = vec![Method::SmUniform, Method::PpiUniform, Method::PpiOptOracle];
        let exp = Experiment { populations: pops, config: cfg };
        let world = prepare(&exp).unwrap();
        assert_eq!(
            world.seats(Method::PpiOptOracle, &exp.config, 0, 40.0).unwrap(),
            world.seats(Method::PpiUniform, &exp.config, 0, 40.0).unwrap()
        );
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let pops = world(&[0.2, 0.5, 0.8, 0.9], 400);
        let mut cfg = ExperimentConfig::new(vec![40.0, 80.0], 15, 3, 77);
        cfg.methods = vec![Method::SmUniform, Method::PpiUniform, Method::PpiOptOracle];
        let exp = Experiment { populations: pops, config: cfg };
        let a = run_with_threads(&exp, 1).unwrap();
        let b = run_with_threads(&exp, 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let oracle = a.budgets[0].method(Method::PpiOptOracle).unwrap();
        assert!((oracle.gain_coverage.unwrap().mean - 100.0).abs() < 1e-9);
        assert!(a.budgets[0].method(Method::SmUniform).unwrap().mse_reduction.unwrap().mean == 0.0);
    }

    #[test]
    fn analytical_report_is_budget_invariant() {
        let pops = world(&[0.1, 0.5, 0.9, 0.95], 300);
        let mut cfg = ExperimentConfig::new(vec![40.0, 100.0, 200.0], 1, 1, 0);
        cfg.methods = vec![Method::SmUniform, Method::PpiUniform, Method::PpiOptOracle];
        cfg.small_sample = SmallSamplePolicy::LambdaZero;
        let rep = run_analytical(&Experiment { populations: pops, config: cfg }).unwrap();
        let inv = budget_invariance_report(&rep).unwrap();
        for m in &inv.methods {
            assert!(m.spread < 1e-9, "{m:?}");
            assert!(!m.exceeds_ci);
        }
        let single = MethodReport {
            budgets: rep.budgets[..1].to_vec(),
            ..rep.clone()
        };
        assert!(budget_invariance_report(&single).is_err());
    }

    #[test]
    fn predicted_difficulties_required() {
        let pops = world(&[0.5, 0.5], 100);
        let cfg = ExperimentConfig::new(vec![20.0], 2, 1, 0);
        assert!(run(&Experiment { populations: pops, config: cfg }).is_err());
    }

    #[test]
    fn too_few_seats_for_ppi() {
        let pops = world(&[0.5, 0.5, 0.5], 100);
        let mut cfg = ExperimentConfig::new(vec![4.0], 2, 1, 0);
        cfg.methods = vec![Method::SmUniform, Method::PpiUniform];
        assert!(run(&Experiment { populations: pops.clone(), config: cfg.clone() }).is_err());
        cfg.small_sample = SmallSamplePolicy::LambdaZero;
        assert!(run(&Experiment { populations: pops, config: cfg }).is_ok());
    }
}
