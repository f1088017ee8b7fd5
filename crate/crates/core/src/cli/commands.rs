use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::allocator::{
    allocate, allocate_dual, allocate_mae, allocate_with_floor, ordered_map, power_design_multi,
    power_sample_size, round_allocation, Allocation, AllocationProblem, PowerTest, QuestionSpec,
};
use crate::error::Error;
use crate::estimator::{diagnostics, estimate_with_ci, EstimateResult, QuestionDiagnostics};
use crate::evalharness::{
    self, budget_invariance_report, BudgetInvariance, Experiment, ExperimentConfig, MethodReport,
};
use crate::mestimation::{
    load_pool_csv, load_records_csv, sandwich, scalarize, solve, tune_lambda, Criterion,
    LossFamily, MEstimationProblem, SolverOptions, SyntheticPool,
};
use crate::metalearn::{self, MetaConfig, MetaFitReport, MetaModel};
use crate::sampledata::{
    load_features, load_paired_samples, synth_population, PairedSample, Population,
    PopulationSpec, QuestionFeatures, SampleFormat, SyntheticSummary,
};
use crate::stats::{self, derive_seed};

use super::manifest::Ctx;
use super::*;

pub(crate) fn dispatch(command: &Command, ctx: &mut Ctx) -> CliResult {
    match command {
        Command::Diagnose(a) => diagnose(a, ctx),
        Command::Allocate(a) => allocate_cmd(a, ctx),
        Command::Power(a) => power(a, ctx),
        Command::Meta(MetaCommand::Fit(a)) => meta_fit(a, ctx),
        Command::Meta(MetaCommand::Predict(a)) => meta_predict(a, ctx),
        Command::Design(a) => design(a, ctx),
        Command::Estimate(a) => estimate(a, ctx),
        Command::Mest(a) => mest(a, ctx),
        Command::Simulate(a) => simulate(a, ctx),
        Command::Pipeline(a) => pipeline(a, ctx),
        Command::Rerun(_) => Err(CliError::input("invalid_argument", "nested rerun")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(ctx: &mut Ctx, path: &Path) -> CliResult<T> {
    let text = ctx.read(path)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::input("json", format!("{}: {e}", path.display()))
    })
}

/// Resolves `p` against the directory of the file that named it.
fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn scale_pair(scale: &Option<Vec<f64>>) -> Option<(f64, f64)> {
    scale.as_ref().map(|v| (v[0], v[1]))
}

fn load_paired(
    ctx: &mut Ctx,
    path: &Path,
    scale: Option<(f64, f64)>,
) -> CliResult<BTreeMap<String, PairedSample>> {
    ctx.track(path)?;
    Ok(load_paired_samples(path, SampleFormat::from_path(path), scale)?)
}

fn load_feats(ctx: &mut Ctx, path: &Path) -> CliResult<Vec<QuestionFeatures>> {
    ctx.track(path)?;
    Ok(load_features(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuestionError {
    question_id: String,
    kind: String,
    message: String,
}

impl QuestionError {
    fn new(question_id: &str, e: &Error) -> Self {
        QuestionError {
            question_id: question_id.to_string(),
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn question_failures(errors: &[QuestionError]) -> CliResult {
    if errors.is_empty() {
        return Ok(());
    }
    let mut e = CliError::input(
        "question_errors",
        format!("{} question(s) failed", errors.len()),
    );
    e.details = Some(serde_json::to_value(errors)?);
    Err(e)
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Serialize, Deserialize)]
struct DiagnoseSummary {
    questions: usize,
    failed: usize,
    mean_lambda_hat: Option<f64>,
    #[serde(rename = "mean_A_hat")]
    mean_a_hat: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DiagnoseOutput {
    questions: Vec<QuestionDiagnostics>,
    errors: Vec<QuestionError>,
    summary: DiagnoseSummary,
}

fn diagnose_samples(samples: &BTreeMap<String, PairedSample>) -> DiagnoseOutput {
    let mut questions = Vec::new();
    let mut errors = Vec::new();
    for (id, s) in samples {
        match diagnostics(s) {
            Ok(d) => questions.push(d),
            Err(e) => errors.push(QuestionError::new(id, &e)),
        }
    }
    let avg = |f: fn(&QuestionDiagnostics) -> f64| {
        (!questions.is_empty()).then(|| {
            stats::mean(&questions.iter().map(f).collect::<Vec<_>>())
        })
    };
    let summary = DiagnoseSummary {
        questions: questions.len(),
        failed: errors.len(),
        mean_lambda_hat: avg(|d| d.lambda_hat),
        mean_a_hat: avg(|d| d.a_hat),
    };
    DiagnoseOutput {
        questions,
        errors,
        summary,
    }
}

fn diagnose(a: &DiagnoseArgs, ctx: &mut Ctx) -> CliResult {
    let scale = scale_pair(&a.scale);
    ctx.config = json!({ "input": a.input, "scale": scale });
    let samples = load_paired(ctx, &a.input, scale)?;
    let out = diagnose_samples(&samples);
    ctx.write_json(a.out.as_deref(), &out)?;
    question_failures(&out.errors)
}

// ---------------------------------------------------------------- allocate

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Mse,
    Mae,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Minimum seats per question (MSE objective only).
    #[serde(default)]
    pub floor: f64,
}

fn yes() -> bool {
    true
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            enabled: true,
            floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocateConfig {
    pub questions: Vec<QuestionSpec>,
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub round: RoundConfig,
    /// Target objective for the dual problem.
    #[serde(default)]
    pub j_target: Option<f64>,
}

fn solve_allocation(
    questions: Vec<QuestionSpec>,
    budget: f64,
    objective: Objective,
    round: RoundConfig,
) -> crate::Result<Allocation> {
    let problem = AllocationProblem::new(questions, budget);
    let mut alloc = match objective {
        Objective::Mse if round.floor > 0.0 => allocate_with_floor(&problem, round.floor)?,
        Objective::Mse => allocate(&problem)?,
        Objective::Mae if round.floor > 0.0 => {
            return Err(Error::invalid("seat floors are only supported for the mse objective"))
        }
        Objective::Mae => allocate_mae(&problem)?,
    };
    if round.enabled {
        round_allocation(&mut alloc, &problem.questions)?;
    }
    Ok(alloc)
}

fn allocate_cmd(a: &AllocateArgs, ctx: &mut Ctx) -> CliResult {
    let mut cfg: AllocateConfig = read_json(ctx, &a.config)?;
    if a.dual {
        cfg.j_target = a.j_target.or(cfg.j_target);
        cfg.budget = None;
        ctx.config = serde_json::to_value(&cfg)?;
        let j = cfg
            .j_target
            .ok_or_else(|| CliError::input("invalid_argument", "--dual needs --j-target or j_target"))?;
        if cfg.objective != Objective::Mse {
            return Err(CliError::input("invalid_argument", "--dual supports the mse objective only"));
        }
        let mut dual = allocate_dual(&cfg.questions, j)?;
        if cfg.round.enabled {
            round_allocation(&mut dual.allocation, &cfg.questions)?;
        }
        return ctx.write_json(a.out.as_deref(), &dual);
    }
    cfg.budget = a.budget.or(cfg.budget);
    ctx.config = serde_json::to_value(&cfg)?;
    let budget = cfg
        .budget
        .ok_or_else(|| CliError::input("invalid_argument", "no budget: set `budget` or pass --budget"))?;
    let alloc = solve_allocation(cfg.questions, budget, cfg.objective, cfg.round)?;
    ctx.write_json(a.out.as_deref(), &alloc)
}

// ---------------------------------------------------------------- power

#[derive(Debug, Serialize)]
struct SinglePower {
    #[serde(rename = "A")]
    a: f64,
    delta: f64,
    alpha: f64,
    power: f64,
    n: u64,
}

fn power(a: &PowerArgs, ctx: &mut Ctx) -> CliResult {
    if let Some(path) = &a.tests {
        let tests: Vec<PowerTest> = read_json(ctx, path)?;
        ctx.config = json!({
            "tests": tests, "alpha": a.alpha, "power": a.power,
            "correction": a.correction, "budget": a.budget,
        });
        let design = power_design_multi(&tests, a.alpha, a.power, a.correction, a.budget)?;
        return ctx.write_json(a.out.as_deref(), &design);
    }
    let (Some(difficulty), Some(delta)) = (a.a, a.delta) else {
        return Err(CliError::input("usage", "power needs --A and --delta, or --tests"));
    };
    ctx.config = json!({ "A": difficulty, "delta": delta, "alpha": a.alpha, "power": a.power });
    let n = power_sample_size(difficulty, delta, a.alpha, a.power)?;
    ctx.write_json(
        a.out.as_deref(),
        &SinglePower {
            a: difficulty,
            delta,
            alpha: a.alpha,
            power: a.power,
            n,
        },
    )
}

// ---------------------------------------------------------------- meta

/// A plain map of difficulties, or a `diagnose` output.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Targets {
    Diagnostics { questions: Vec<QuestionDiagnostics> },
    Map(BTreeMap<String, f64>),
}

impl Targets {
    fn into_map(self) -> BTreeMap<String, f64> {
        match self {
            Targets::Map(m) => m,
            Targets::Diagnostics { questions } => {
                questions.into_iter().map(|d| (d.question_id, d.a_hat)).collect()
            }
        }
    }
}

fn meta_config(ctx: &mut Ctx, path: Option<&Path>, seed: Option<u64>) -> CliResult<MetaConfig> {
    let mut cfg = match path {
        Some(p) => read_json(ctx, p)?,
        None => MetaConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn report_path(model: &Path) -> PathBuf {
    model.with_extension("report.json")
}

fn meta_fit(a: &MetaFitArgs, ctx: &mut Ctx) -> CliResult {
    let cfg = meta_config(ctx, a.config.as_deref(), a.seed)?;
    ctx.config = serde_json::to_value(&cfg)?;
    ctx.seed = Some(cfg.seed);
    let features = load_feats(ctx, &a.features)?;
    let targets = read_json::<Targets>(ctx, &a.targets)?.into_map();
    let (model, report) = metalearn::fit(&features, &targets, &cfg)?;
    ctx.write_json(Some(&a.out), &model)?;
    let rp = a.report.clone().unwrap_or_else(|| report_path(&a.out));
    ctx.write_json(Some(&rp), &report)
}

#[derive(Debug, Serialize)]
struct Predictions {
    /// Predicted difficulty `Ã` by question.
    #[serde(with = "ordered_map")]
    predictions: Vec<(String, f64)>,
}

fn meta_predict(a: &MetaPredictArgs, ctx: &mut Ctx) -> CliResult {
    ctx.config = json!({ "model": a.model, "features": a.features });
    let model: MetaModel = read_json(ctx, &a.model)?;
    let features = load_feats(ctx, &a.features)?;
    let predictions = model.predict(&features)?;
    ctx.write_json(a.out.as_deref(), &Predictions { predictions })
}

// ---------------------------------------------------------------- design

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub round: RoundConfig,
    /// Importance weights by question id; missing entries default to 1.
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
    /// Unit costs by question id; missing entries default to 1.
    #[serde(default)]
    pub costs: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct DesignOutput {
    #[serde(rename = "predicted_A", with = "ordered_map")]
    predicted: Vec<(String, f64)>,
    allocation: Allocation,
}

fn design_from_predictions(
    predicted: Vec<(String, f64)>,
    cfg: &DesignConfig,
) -> crate::Result<DesignOutput> {
    for id in cfg.weights.keys().chain(cfg.costs.keys()) {
        if !predicted.iter().any(|(q, _)| q == id) {
            return Err(Error::invalid(format!("weight or cost for unknown question `{id}`")));
        }
    }
    let budget = cfg
        .budget
        .ok_or_else(|| Error::invalid("no budget: set `budget` or pass --budget"))?;
    let questions = predicted
        .iter()
        .map(|(id, a)| {
            QuestionSpec::new(
                id.clone(),
                *a,
                cfg.weights.get(id).copied().unwrap_or(1.0),
                cfg.costs.get(id).copied().unwrap_or(1.0),
            )
        })
        .collect();
    let allocation = solve_allocation(questions, budget, cfg.objective, cfg.round)?;
    Ok(DesignOutput {
        predicted,
        allocation,
    })
}

fn design(a: &DesignArgs, ctx: &mut Ctx) -> CliResult {
    let mut cfg: DesignConfig = read_json(ctx, &a.config)?;
    cfg.budget = a.budget.or(cfg.budget);
    ctx.config = serde_json::to_value(&cfg)?;
    let model: MetaModel = read_json(ctx, &a.model)?;
    let features = load_feats(ctx, &a.features)?;
    let predicted = model.predict(&features)?;
    let out = design_from_predictions(predicted, &cfg)?;
    ctx.write_json(a.out.as_deref(), &out)
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Serialize)]
struct EstimateOutput {
    level: f64,
    results: Vec<EstimateResult>,
    errors: Vec<QuestionError>,
}

fn estimate(a: &EstimateArgs, ctx: &mut Ctx) -> CliResult {
    let scale = scale_pair(&a.scale);
    ctx.config = json!({ "input": a.input, "pools": a.pools, "level": a.level, "scale": scale });
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::input("invalid_argument", format!("level = {} outside (0, 1)", a.level)));
    }
    let mut samples = load_paired(ctx, &a.input, scale)?;
    if let Some(path) = &a.pools {
        let pools: BTreeMap<String, SyntheticSummary> = read_json(ctx, path)?;
        for (id, pool) in pools {
            let s = samples.get_mut(&id).ok_or_else(|| {
                CliError::input("invalid_argument", format!("pool for unknown question `{id}`"))
            })?;
            s.synthetic_pool = Some(pool);
        }
    }
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (id, s) in &samples {
        match estimate_with_ci(s, a.level) {
            Ok(r) => results.push(r),
            Err(e) => errors.push(QuestionError::new(id, &e)),
        }
    }
    let out = EstimateOutput {
        level: a.level,
        results,
        errors,
    };
    ctx.write_json(a.out.as_deref(), &out)?;
    question_failures(&out.errors)
}

// ---------------------------------------------------------------- mest

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Tune {
    Tune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaSpec {
    Fixed(f64),
    Tune(Tune),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Tune(Tune::Tune)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CriterionSpec {
    /// `tr(Ω Σ)`, with `Ω = I` when omitted.
    Trace {
        #[serde(default)]
        omega: Option<Vec<Vec<f64>>>,
    },
    DetRoot,
}

impl Default for CriterionSpec {
    fn default() -> Self {
        CriterionSpec::Trace { omega: None }
    }
}

impl CriterionSpec {
    fn build(&self) -> crate::Result<Criterion> {
        Ok(match self {
            CriterionSpec::DetRoot => Criterion::DetRoot,
            CriterionSpec::Trace { omega: None } => Criterion::Trace(None),
            CriterionSpec::Trace { omega: Some(rows) } => {
                let d = rows.len();
                if let Some(bad) = rows.iter().find(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: bad.len(),
                    });
                }
                Criterion::Trace(Some(DMatrix::from_fn(d, d, |i, j| rows[i][j])))
            }
        })
    }
}

fn default_grid() -> usize {
    21
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MestProblemFile {
    loss: LossFamily,
    /// Labeled records CSV, relative to the problem file.
    data: PathBuf,
    /// Synthetic pool CSV, relative to the problem file.
    #[serde(default)]
    pool: Option<PathBuf>,
    #[serde(default)]
    lambda: LambdaSpec,
    #[serde(default)]
    criterion: CriterionSpec,
    /// Number of evenly spaced λ values in [0, 1] when tuning.
    #[serde(default = "default_grid")]
    grid: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Debug, Serialize)]
struct MestOutput {
    loss: LossFamily,
    n: usize,
    lambda: f64,
    theta: Vec<f64>,
    /// Asymptotic sandwich covariance of `√n (θ̂ − θ)`.
    sigma: Vec<Vec<f64>>,
    /// `sigma / n`, the covariance of `θ̂` itself.
    covariance: Vec<Vec<f64>>,
    /// Scalarized `sigma` under the chosen criterion.
    #[serde(rename = "A")]
    a: f64,
    singular: bool,
    iterations: usize,
    score_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve: Option<Vec<(f64, f64)>>,
}

fn mest(a: &MestArgs, ctx: &mut Ctx) -> CliResult {
    let mut spec: MestProblemFile = read_json(ctx, &a.problem)?;
    spec.data = relative_to(&a.problem, &spec.data);
    spec.pool = spec.pool.as_ref().map(|p| relative_to(&a.problem, p));
    ctx.config = serde_json::to_value(&spec)?;

    ctx.track(&spec.data)?;
    let records = load_records_csv(&spec.data)?;
    let mut problem = MEstimationProblem::new(spec.loss.clone(), records);
    if let Some(p) = &spec.pool {
        ctx.track(p)?;
        problem = problem.with_pool(SyntheticPool::Records(load_pool_csv(p)?));
    }
    let opts = SolverOptions {
        tol: spec.tol,
        max_iter: spec.max_iter,
    };
    let criterion = spec.criterion.build()?;
    let (lambda, curve) = match spec.lambda {
        LambdaSpec::Fixed(l) => (l, None),
        LambdaSpec::Tune(_) => {
            let t = tune_lambda(&problem, &criterion, spec.grid, opts)?;
            (t.lambda_star, Some(t.curve))
        }
    };
    let problem = problem.with_lambda(lambda);
    let est = solve(&problem, opts)?;
    let sw = sandwich(&problem, &est.theta_vector())?;
    let s = scalarize(&sw.sigma, &criterion)?;
    let out = MestOutput {
        loss: spec.loss,
        n: sw.n,
        lambda,
        theta: est.theta,
        sigma: rows(&sw.sigma),
        covariance: rows(&sw.estimate_covariance()),
        a: s.value,
        singular: s.singular,
        iterations: est.iterations,
        score_norm: est.score_norm,
        curve,
    };
    ctx.write_json(a.out.as_deref(), &out)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPopulationSpec {
    pub question_id: String,
    pub spec: PopulationSpec,
    /// Defaults to a seed derived from the master seed and the position.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    /// Each question in a paired-sample file is a full population.
    PairedCsv(PathBuf),
    Synthetic(Vec<SyntheticPopulationSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub populations: PopulationSource,
    pub experiment: ExperimentConfig,
    /// Replace Monte Carlo draws by the closed-form errors.
    #[serde(default)]
    pub analytical: bool,
    /// Add a budget-invariance summary (needs three or more budgets).
    #[serde(default)]
    pub invariance: bool,
}

/// Stream tag for population generation, kept apart from the draw streams.
const POPULATION_STREAM: u64 = 0x706f_70;

fn build_populations(
    ctx: &mut Ctx,
    source: &PopulationSource,
    master_seed: u64,
) -> CliResult<Vec<Population>> {
    match source {
        PopulationSource::PairedCsv(path) => {
            let samples = load_paired(ctx, path, None)?;
            Ok(samples
                .values()
                .map(Population::from_sample)
                .collect::<crate::Result<_>>()?)
        }
        PopulationSource::Synthetic(specs) => Ok(specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let seed = s
                    .seed
                    .unwrap_or_else(|| derive_seed(master_seed, &[POPULATION_STREAM, i as u64]));
                synth_population(s.question_id.clone(), &s.spec, seed)
            })
            .collect::<crate::Result<_>>()?),
    }
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    #[serde(flatten)]
    report: MethodReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget_invariance: Option<BudgetInvariance>,
}

fn simulate(a: &SimulateArgs, ctx: &mut Ctx) -> CliResult {
    let mut cfg: SimulateConfig = read_json(ctx, &a.config)?;
    if let PopulationSource::PairedCsv(p) = &mut cfg.populations {
        *p = relative_to(&a.config, p);
    }
    if let Some(s) = a.seed {
        cfg.experiment.master_seed = s;
    }
    ctx.config = serde_json::to_value(&cfg)?;
    ctx.seed = Some(cfg.experiment.master_seed);
    if a.threads == Some(0) {
        return Err(CliError::input("invalid_argument", "--threads must be at least 1"));
    }

    let populations = build_populations(ctx, &cfg.populations, cfg.experiment.master_seed)?;
    let exp = Experiment {
        populations,
        config: cfg.experiment.clone(),
    };
    let report = if cfg.analytical {
        evalharness::run_analytical(&exp)?
    } else {
        match a.threads {
            Some(t) => evalharness::run_with_threads(&exp, t)?,
            None => evalharness::run(&exp)?,
        }
    };
    let budget_invariance = if cfg.invariance {
        Some(budget_invariance_report(&report)?)
    } else {
        None
    };
    if let Some(path) = &a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        ctx.write_bytes(path, &buf)?;
    }
    ctx.write_json(
        a.out.as_deref(),
        &SimulateOutput {
            report,
            budget_invariance,
        },
    )
}

// ---------------------------------------------------------------- pipeline

fn staged<T>(stage: &str, r: impl Into<CliResult<T>>) -> CliResult<T> {
    r.into().map_err(|e| e.at_stage(stage))
}

fn pipeline(a: &PipelineArgs, ctx: &mut Ctx) -> CliResult {
    let mut design_cfg: DesignConfig = staged("config", read_json(ctx, &a.config))?;
    design_cfg.budget = a.budget.or(design_cfg.budget);
    let meta_cfg = staged("config", meta_config(ctx, a.meta_config.as_deref(), a.seed))?;
    ctx.config = json!({ "design": design_cfg, "meta": meta_cfg });
    ctx.seed = Some(meta_cfg.seed);
    let dir = &a.out_dir;

    // Phase A: difficulties of the historical questions, then the meta-learner.
    let samples = staged("diagnose", load_paired(ctx, &a.historical, None))?;
    let diag = diagnose_samples(&samples);
    ctx.write_json(Some(&dir.join("diagnostics.json")), &diag)?;
    staged("diagnose", question_failures(&diag.errors))?;
    let targets: BTreeMap<String, f64> = diag
        .questions
        .iter()
        .map(|d| (d.question_id.clone(), d.a_hat))
        .collect();

    let hist = staged("meta_fit", load_feats(ctx, &a.historical_features))?;
    let (model, report): (MetaModel, MetaFitReport) =
        staged("meta_fit", metalearn::fit(&hist, &targets, &meta_cfg).map_err(CliError::from))?;
    ctx.write_json(Some(&dir.join("meta_model.json")), &model)?;
    ctx.write_json(Some(&dir.join("meta_fit_report.json")), &report)?;

    // Phase B: predicted difficulties for the new questions, then allocation.
    let target = staged("predict", load_feats(ctx, &a.target_features))?;
    let predictions = staged("predict", model.predict(&target).map_err(CliError::from))?;
    ctx.write_json(
        Some(&dir.join("predictions.json")),
        &Predictions {
            predictions: predictions.clone(),
        },
    )?;

    let design = staged(
        "allocate",
        design_from_predictions(predictions, &design_cfg).map_err(CliError::from),
    )?;
    ctx.write_json(Some(&dir.join("allocation.json")), &design)
}
