//! Command-line front end.
//!
//! Every subcommand reads explicit files plus a few flags, writes JSON with
//! a `schema_version` field, and — when it writes to a file — leaves a
//! [`RunManifest`] next to its output so the run can be replayed with
//! `rerun`. Exit codes: 0 success, 1 input or validation error, 2 numerical
//! failure. Errors are reported as a JSON object on stderr.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::allocator::Correction;
use crate::error::Error;

pub use commands::{
    AllocateConfig, DesignConfig, Objective, PopulationSource, RoundConfig, SimulateConfig,
    SyntheticPopulationSpec,
};
pub use manifest::{FileDigest, RunManifest};

/// Version tag carried by every JSON artifact.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Parser)]
#[command(name = "hybrid-survey", version, about = "Hybrid human-surrogate survey design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Per-question λ̂ and rectification difficulty from paired samples.
    Diagnose(DiagnoseArgs),
    /// Optimal allocation of human labels across questions.
    Allocate(AllocateArgs),
    /// Sample size for a target power.
    Power(PowerArgs),
    /// Difficulty meta-learner.
    #[command(subcommand)]
    Meta(MetaCommand),
    /// Predict difficulties for new questions and allocate.
    Design(DesignArgs),
    /// PPI++ point estimates and intervals.
    Estimate(EstimateArgs),
    /// General M-estimation with a synthetic pool.
    Mest(MestArgs),
    /// Monte Carlo comparison of design strategies.
    Simulate(SimulateArgs),
    /// Historical corpus to allocation for new questions, end to end.
    Pipeline(PipelineArgs),
    /// Replay a run from its manifest and check the outputs match.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaCommand {
    Fit(MetaFitArgs),
    Predict(MetaPredictArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    /// Paired samples (CSV, or JSON by extension).
    #[arg(long)]
    pub input: PathBuf,
    /// Declared response scale; outcomes are rescaled to [0, 1].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub scale: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AllocateArgs {
    /// JSON: {questions: [{id, A, w, c}], budget, objective, round: {enabled, floor}}.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured budget.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Find the cheapest allocation reaching a target objective instead.
    #[arg(long)]
    pub dual: bool,
    /// Target objective for `--dual`; overrides `j_target` in the config.
    #[arg(long)]
    pub j_target: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PowerArgs {
    /// Rectification difficulty.
    #[arg(long = "A")]
    pub a: Option<f64>,
    /// Detectable effect size.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Two-sided level (family-wise with --tests).
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    pub power: f64,
    /// JSON list of tests [{id, A, delta, c}] sharing the error budget.
    #[arg(long)]
    pub tests: Option<PathBuf>,
    #[arg(long, value_parser = parse_correction, default_value = "bonferroni")]
    pub correction: Correction,
    /// Labeling budget to check the multi-test design against.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MetaFitArgs {
    /// question_id,group_id,z1..zK
    #[arg(long)]
    pub features: PathBuf,
    /// JSON map question_id → Â, or the output of `diagnose`.
    #[arg(long)]
    pub targets: PathBuf,
    /// MetaConfig JSON; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the fold-assignment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the fitted model.
    #[arg(long)]
    pub out: PathBuf,
    /// Cross-validation report; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MetaPredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DesignArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// JSON: {budget, objective, round, weights, costs}.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// JSON map question_id → {m, mean, variance, infinite_pool}.
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub scale: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MestArgs {
    /// JSON: {loss, data, pool, lambda | "tune", criterion, grid}.
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// JSON: {populations, experiment, analytical, invariance}.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `experiment.master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; the report does not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write the report flattened to CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    /// Paired samples for the historical questions.
    #[arg(long)]
    pub historical: PathBuf,
    #[arg(long)]
    pub historical_features: PathBuf,
    #[arg(long)]
    pub target_features: PathBuf,
    /// Allocation settings, as for `design`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub meta_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_correction(s: &str) -> Result<Correction, String> {
    match s.to_ascii_lowercase().as_str() {
        "bonferroni" => Ok(Correction::Bonferroni),
        "sidak" | "šidák" => Ok(Correction::Sidak),
        other => Err(format!("unknown correction `{other}` (bonferroni, sidak)")),
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Diagnose(_) => "diagnose",
            Command::Allocate(a) if a.dual => "allocate --dual",
            Command::Allocate(_) => "allocate",
            Command::Power(_) => "power",
            Command::Meta(MetaCommand::Fit(_)) => "meta fit",
            Command::Meta(MetaCommand::Predict(_)) => "meta predict",
            Command::Design(_) => "design",
            Command::Estimate(_) => "estimate",
            Command::Mest(_) => "mest",
            Command::Simulate(_) => "simulate",
            Command::Pipeline(_) => "pipeline",
            Command::Rerun(_) => "rerun",
        }
    }

    /// Makes every path absolute so a manifest can be replayed from any
    /// working directory.
    fn absolutize(&mut self) -> std::io::Result<()> {
        fn abs(p: &mut PathBuf) -> std::io::Result<()> {
            *p = std::path::absolute(&*p)?;
            Ok(())
        }
        fn opt(p: &mut Option<PathBuf>) -> std::io::Result<()> {
            p.as_mut().map_or(Ok(()), abs)
        }
        match self {
            Command::Diagnose(a) => {
                abs(&mut a.input)?;
                opt(&mut a.out)
            }
            Command::Allocate(a) => {
                abs(&mut a.config)?;
                opt(&mut a.out)
            }
            Command::Power(a) => {
                opt(&mut a.tests)?;
                opt(&mut a.out)
            }
            Command::Meta(MetaCommand::Fit(a)) => {
                abs(&mut a.features)?;
                abs(&mut a.targets)?;
                opt(&mut a.config)?;
                abs(&mut a.out)?;
                opt(&mut a.report)
            }
            Command::Meta(MetaCommand::Predict(a)) => {
                abs(&mut a.model)?;
                abs(&mut a.features)?;
                opt(&mut a.out)
            }
            Command::Design(a) => {
                abs(&mut a.features)?;
                abs(&mut a.model)?;
                abs(&mut a.config)?;
                opt(&mut a.out)
            }
            Command::Estimate(a) => {
                abs(&mut a.input)?;
                opt(&mut a.pools)?;
                opt(&mut a.out)
            }
            Command::Mest(a) => {
                abs(&mut a.problem)?;
                opt(&mut a.out)
            }
            Command::Simulate(a) => {
                abs(&mut a.config)?;
                opt(&mut a.csv)?;
                opt(&mut a.out)
            }
            Command::Pipeline(a) => {
                abs(&mut a.historical)?;
                abs(&mut a.historical_features)?;
                abs(&mut a.target_features)?;
                abs(&mut a.config)?;
                opt(&mut a.meta_config)?;
                abs(&mut a.out_dir)
            }
            Command::Rerun(a) => {
                abs(&mut a.manifest)?;
                opt(&mut a.out)
            }
        }
    }

    /// Where the run's manifest goes, if the run writes files at all.
    fn manifest_path(&self) -> Option<PathBuf> {
        let beside = |p: &Path| p.with_extension("manifest.json");
        match self {
            Command::Pipeline(a) => Some(a.out_dir.join("manifest.json")),
            Command::Meta(MetaCommand::Fit(a)) => Some(beside(&a.out)),
            Command::Rerun(_) => None,
            Command::Diagnose(DiagnoseArgs { out, .. })
            | Command::Allocate(AllocateArgs { out, .. })
            | Command::Power(PowerArgs { out, .. })
            | Command::Meta(MetaCommand::Predict(MetaPredictArgs { out, .. }))
            | Command::Design(DesignArgs { out, .. })
            | Command::Estimate(EstimateArgs { out, .. })
            | Command::Mest(MestArgs { out, .. })
            | Command::Simulate(SimulateArgs { out, .. }) => out.as_deref().map(beside),
        }
    }
}

/// A failed run: exit code plus the JSON written to stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
    /// Pipeline stage that failed.
    pub stage: Option<String>,
    pub details: Option<Value>,
}

impl CliError {
    pub(crate) fn input(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            kind: kind.to_string(),
            message: message.into(),
            stage: None,
            details: None,
        }
    }

    pub(crate) fn at_stage(mut self, stage: &str) -> Self {
        self.stage = Some(stage.to_string());
        self
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({
            "code": self.code,
            "kind": self.kind,
            "message": self.message,
        });
        if let Some(s) = &self.stage {
            err["stage"] = json!(s);
        }
        if let Some(d) = &self.details {
            err["details"] = d.clone();
        }
        json!({ "error": err })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_numerical() { 2 } else { 1 },
            kind: e.kind().to_string(),
            message: e.to_string(),
            stage: None,
            details: None,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::input("usage", e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return err.code;
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|s| s.to_string_lossy().into_owned())
        .collect();
    match execute(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

/// Runs an already-parsed command. `argv` is recorded in the manifest.
pub fn execute(mut command: Command, argv: Vec<String>) -> CliResult {
    command
        .absolutize()
        .map_err(|e| CliError::input("io", format!("cannot resolve paths: {e}")))?;
    if let Command::Rerun(a) = &command {
        return manifest::rerun(a);
    }
    manifest::run_recorded(command, argv)
}
