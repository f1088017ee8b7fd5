//! Cost of allocating with misspecified difficulties.
//!
//! Allocating by `Ã` when the truth is `A` inflates the weighted MSE by
//! `J(A, n*(Ã)) / J*(A) = (Σ π √r)(Σ π / √r)` with `π_q = s_q / S`,
//! `s_q = sqrt(w_q A_q c_q)` and `r_q = Ã_q / A_q`. The ratio is at least 1,
//! equal to 1 exactly when `Ã ∝ A`, and at most `e^ε` when every log-ratio
//! is bounded by `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::weighted_mse;
use super::QuestionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRatio {
    /// `J(A, n*(Ã)) / J*(A)` computed from the allocation itself.
    pub ratio: f64,
    /// The same ratio through the `π`/`r` representation.
    pub ratio_representation: f64,
    /// `max_q |log Ã_q − log A_q|` over questions with positive weight.
    pub epsilon: f64,
    /// `e^ε`.
    pub bound: f64,
}

/// Efficiency loss from allocating by `used_a` when `true_a` holds.
pub fn efficiency_ratio(true_a: &[f64], used_a: &[f64], w: &[f64], c: &[f64]) -> Result<EfficiencyRatio> {
    let q = true_a.len();
    for len in [used_a.len(), w.len(), c.len()] {
        if len != q {
            return Err(Error::DimensionMismatch { expected: q, got: len });
        }
    }
    let truth: Vec<QuestionSpec> = (0..q)
        .map(|i| QuestionSpec::new(format!("q{i}"), true_a[i], w[i], c[i]))
        .collect();
    super::validate_questions(&truth)?;
    if let Some(bad) = used_a.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::invalid(format!("used difficulty {bad} must be positive")));
    }

    let active: Vec<usize> = (0..q).filter(|&i| w[i] > 0.0).collect();
    let s_true = super::root_sum(&truth);
    let s_used: f64 = active.iter().map(|&i| (w[i] * used_a[i] * c[i]).sqrt()).sum();
    // Unit budget; the ratio is budget-free.
    let sizes: Vec<f64> = (0..q)
        .map(|i| if w[i] > 0.0 { (w[i] * used_a[i] / c[i]).sqrt() / s_used } else { 0.0 })
        .collect();
    let ratio = weighted_mse(&truth, &sizes) / (s_true * s_true);

    let (mut up, mut down, mut epsilon) = (0.0, 0.0, 0.0f64);
    for &i in &active {
        let pi = (w[i] * true_a[i] * c[i]).sqrt() / s_true;
        let r = used_a[i] / true_a[i];
        up += pi * r.sqrt();
        down += pi / r.sqrt();
        epsilon = epsilon.max(r.ln().abs());
    }
    Ok(EfficiencyRatio {
        ratio,
        ratio_representation: up * down,
        epsilon,
        bound: epsilon.exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageCaseLoss {
    /// `1 + σ²/4`.
    pub second_order: f64,
    /// `e^{σ²/4}`, exact for i.i.d. Gaussian log-errors as `Q → ∞`.
    pub gaussian_limit: f64,
}

/// Expected efficiency loss when log-difficulty errors have spread `sigma_eta`.
pub fn average_case_loss(sigma_eta: f64) -> Result<AverageCaseLoss> {
    if !(sigma_eta >= 0.0 && sigma_eta.is_finite()) {
        return Err(Error::invalid(format!("sigma_eta = {sigma_eta} must be nonnegative")));
    }
    let v = sigma_eta * sigma_eta / 4.0;
    Ok(AverageCaseLoss {
        second_order: 1.0 + v,
        gaussian_limit: v.exp(),
    })
}
