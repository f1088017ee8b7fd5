use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

use super::Method;

/// A replication-averaged quantity with its spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// 2.5th percentile of the replication-level values.
    pub ci_lo: f64,
    /// 97.5th percentile of the replication-level values.
    pub ci_hi: f64,
    /// Monte Carlo standard error of `mean`.
    pub mcse: f64,
}

impl Stat {
    pub(crate) fn from_replications(per_rep: &[f64], mcse: f64) -> Self {
        Stat {
            mean: stats::mean(per_rep),
            ci_lo: stats::percentile(per_rep, 0.025),
            ci_hi: stats::percentile(per_rep, 0.975),
            mcse,
        }
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mse: Stat,
    /// Per-run RMSE, averaged.
    pub rmse: Stat,
    /// `sqrt` of the averaged MSE, the alternative RMSE convention.
    pub rmse_of_mean_mse: f64,
    pub mae: Stat,
    /// Percent reduction in MSE relative to `sm_uniform`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_reduction: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_reduction: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_reduction: Option<Stat>,
    /// MSE reduction as a percentage of the oracle method's. The point value
    /// is the ratio of mean reductions; the interval comes from per-replication
    /// ratios.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_coverage: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub budget: f64,
    pub methods: Vec<MethodSummary>,
}

impl BudgetReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub replications: usize,
    pub mc_runs: usize,
    /// All methods see the same respondents within a run.
    pub common_random_numbers: bool,
    pub analytical: bool,
    pub budgets: Vec<BudgetReport>,
}

impl MethodReport {
    pub fn at_budget(&self, budget: f64) -> Option<&BudgetReport> {
        self.budgets.iter().find(|b| b.budget == budget)
    }

    /// One row per method × budget × metric.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::invalid(format!("csv output: {e}"));
        out.write_record(["method", "budget", "metric", "mean", "ci_lo", "ci_hi", "mcse"])
            .map_err(err)?;
        for b in &self.budgets {
            for m in &b.methods {
                let rows = [
                    ("mse", Some(m.mse)),
                    ("rmse", Some(m.rmse)),
                    ("mae", Some(m.mae)),
                    ("mse_reduction_pct", m.mse_reduction),
                    ("rmse_reduction_pct", m.rmse_reduction),
                    ("mae_reduction_pct", m.mae_reduction),
                    ("gain_coverage_pct", m.gain_coverage),
                ];
                for (name, stat) in rows {
                    if let Some(s) = stat {
                        out.write_record([
                            m.method.as_str().to_string(),
                            format!("{:?}", b.budget),
                            name.to_string(),
                            format!("{:?}", s.mean),
                            format!("{:?}", s.ci_lo),
                            format!("{:?}", s.ci_hi),
                            format!("{:?}", s.mcse),
                        ])
                        .map_err(err)?;
                    }
                }
                out.write_record([
                    m.method.as_str().to_string(),
                    format!("{:?}", b.budget),
                    "rmse_of_mean_mse".to_string(),
                    format!("{:?}", m.rmse_of_mean_mse),
                    String::new(),
                    String::new(),
                    String::new(),
                ])
                .map_err(err)?;
            }
        }
        out.flush().map_err(|e| Error::invalid(format!("csv output: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEntry {
    pub method: Method,
    /// Max minus min MSE reduction across budgets, in percentage points.
    pub spread: f64,
    /// Average width of the per-budget replication intervals.
    pub ci_width: f64,
    pub exceeds_ci: bool,
    pub reductions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetInvariance {
    pub budgets: Vec<f64>,
    pub methods: Vec<InvarianceEntry>,
}

/// How much each method's MSE reduction moves across the budget grid.
pub fn budget_invariance_report(report: &MethodReport) -> Result<BudgetInvariance> {
    if report.budgets.len() < 3 {
        return Err(Error::invalid("≥ 3 budgets required"));
    }
    let first = &report.budgets[0];
    let mut methods = Vec::new();
    for m in first.methods.iter().filter(|m| m.mse_reduction.is_some()) {
        let stats: Vec<Stat> = report
            .budgets
            .iter()
            .map(|b| b.method(m.method).and_then(|s| s.mse_reduction))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid(format!("method {} missing at some budget", m.method.as_str())))?;
        let reductions: Vec<f64> = stats.iter().map(|s| s.mean).collect();
        let max = reductions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = reductions.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = max - min;
        let ci_width = stats.iter().map(Stat::ci_width).sum::<f64>() / stats.len() as f64;
        methods.push(InvarianceEntry {
            method: m.method,
            spread,
            ci_width,
            exceeds_ci: spread > ci_width + 1e-9,
            reductions,
        });
    }
    Ok(BudgetInvariance {
        budgets: report.budgets.iter().map(|b| b.budget).collect(),
        methods,
    })
}
