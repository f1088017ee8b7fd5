//! Scalar-mean PPI++ estimation.
//!
//! For a question with paired outcomes `(Y_i, L_i)`, `i = 1..n`, and a
//! synthetic pool of surrogate predictions with mean `μ_pool`, the estimator
//! at tuning `λ ∈ [0, 1]` is
//!
//! ```text
//! θ̂(λ) = mean(Y - λ·L) + λ·μ_pool
//! ```
//!
//! Its variance is `A(λ)/n + λ²·Var_pool/m` where `A(λ) = Var(Y - λ·L)` is the
//! rectification difficulty. The variance-minimizing tuning is the regression
//! slope of `Y` on `L`, clipped to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampledata::{PairedSample, SyntheticSummary};
use crate::stats;

/// Per-question plug-in statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDiagnostics {
    pub question_id: String,
    pub n: usize,
    pub lambda_hat: f64,
    /// Rectification difficulty at `lambda_hat`.
    #[serde(rename = "A_hat")]
    pub a_hat: f64,
    pub var_y: f64,
    pub var_s: f64,
    pub cov_ys: f64,
    /// `1 - mean |y - y_llm|`, meaningful on the `[0, 1]` response scale.
    pub accuracy: f64,
}

impl QuestionDiagnostics {
    /// `A(λ) = var_y - 2λ·cov_ys + λ²·var_s`, floored at zero.
    pub fn difficulty_at(&self, lambda: f64) -> f64 {
        (self.var_y - 2.0 * lambda * self.cov_ys + lambda * lambda * self.var_s).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub question_id: String,
    pub theta_hat: f64,
    pub lambda_used: f64,
    pub std_error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
}

fn require_pairs(sample: &PairedSample) -> Result<()> {
    if sample.len() < 2 {
        return Err(Error::InsufficientPairs {
            needed: 2,
            got: sample.len(),
        });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
    }
    Ok(())
}

fn clipped_slope(cov: f64, var_s: f64) -> f64 {
    if var_s > 0.0 {
        (cov / var_s).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Plug-in tuning parameter `clip(Cov(Y, L) / Var(L), 0, 1)`, or 0 when the
/// surrogate has no variance.
pub fn lambda_hat(sample: &PairedSample) -> Result<f64> {
    require_pairs(sample)?;
    let var_s = stats::sample_var(&sample.y_surrogate);
    let cov = stats::sample_cov(&sample.y_human, &sample.y_surrogate);
    Ok(clipped_slope(cov, var_s))
}

/// Sample variance of the rectified outcome `Y - λ·L`.
pub fn rect_difficulty(sample: &PairedSample, lambda: f64) -> Result<f64> {
    require_pairs(sample)?;
    let resid: Vec<f64> = sample
        .y_human
        .iter()
        .zip(&sample.y_surrogate)
        .map(|(y, l)| y - lambda * l)
        .collect();
    Ok(stats::sample_var(&resid))
}

/// PPI++ point estimate at a fixed `lambda`. The synthetic pool is only
/// required when `lambda > 0`; at `lambda = 0` this is the sample mean.
pub fn ppi_pp_estimate(sample: &PairedSample, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if sample.is_empty() {
        return Err(Error::InsufficientPairs { needed: 1, got: 0 });
    }
    if lambda == 0.0 {
        return Ok(stats::mean(&sample.y_human));
    }
    let pool = sample.synthetic_pool.as_ref().ok_or_else(|| {
        Error::invalid(format!(
            "question {}: synthetic pool required for lambda = {lambda}",
            sample.question_id
        ))
    })?;
    let rectified: f64 = sample
        .y_human
        .iter()
        .zip(&sample.y_surrogate)
        .map(|(y, l)| y - lambda * l)
        .sum::<f64>()
        / sample.len() as f64;
    Ok(rectified + lambda * pool.mean)
}

/// Variance of the PPI++ estimator: `A(λ)/n + λ²·pool.variance/pool.m`.
pub fn ppi_pp_variance(
    diag: &QuestionDiagnostics,
    lambda: f64,
    n: usize,
    pool: &SyntheticSummary,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    Ok(diag.difficulty_at(lambda) / n as f64 + lambda * lambda * pool.mean_variance())
}

pub fn diagnostics(sample: &PairedSample) -> Result<QuestionDiagnostics> {
    require_pairs(sample)?;
    let var_y = stats::sample_var(&sample.y_human);
    let var_s = stats::sample_var(&sample.y_surrogate);
    let cov_ys = stats::sample_cov(&sample.y_human, &sample.y_surrogate);
    let lambda_hat = clipped_slope(cov_ys, var_s);
    let a_hat = rect_difficulty(sample, lambda_hat)?;
    let mad = sample
        .y_human
        .iter()
        .zip(&sample.y_surrogate)
        .map(|(y, l)| (y - l).abs())
        .sum::<f64>()
        / sample.len() as f64;
    Ok(QuestionDiagnostics {
        question_id: sample.question_id.clone(),
        n: sample.len(),
        lambda_hat,
        a_hat,
        var_y,
        var_s,
        cov_ys,
        accuracy: 1.0 - mad,
    })
}

/// Plug-in PPI++ estimate with a symmetric normal interval.
pub fn estimate_with_ci(sample: &PairedSample, level: f64) -> Result<EstimateResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level = {level} outside (0, 1)")));
    }
    let diag = diagnostics(sample)?;
    let lambda = diag.lambda_hat;
    let theta_hat = ppi_pp_estimate(sample, lambda)?;
    let pool = sample
        .synthetic_pool
        .unwrap_or_else(|| SyntheticSummary::infinite(0.0));
    let std_error = ppi_pp_variance(&diag, lambda, sample.len(), &pool)?.sqrt();
    let z = stats::normal_quantile((1.0 + level) / 2.0);
    Ok(EstimateResult {
        question_id: sample.question_id.clone(),
        theta_hat,
        lambda_used: lambda,
        std_error,
        ci_lo: theta_hat - z * std_error,
        ci_hi: theta_hat + z * std_error,
        level,
    })
}
