use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_quantile;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(format!("{name} = {v} outside (0, 1)")));
    }
    Ok(())
}

/// Human labels needed for a two-sided Wald test of a shift `delta` at level
/// `alpha` with the given power: `ceil(A (z_{1-α/2} + z_power)² / δ²)`.
pub fn power_sample_size(a: f64, delta: f64, alpha: f64, power: f64) -> Result<u64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("A = {a} must be positive")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta = {delta} must be positive")));
    }
    check_unit("alpha", alpha)?;
    check_unit("power", power)?;
    let z = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power);
    let n = a * z * z / (delta * delta);
    // Guard against 196.00000000001-style float noise pushing up a whole unit.
    Ok((n - 1e-9 * n).ceil().max(1.0) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    Bonferroni,
    Sidak,
}

impl Correction {
    /// Per-test level under an equal split of the family-wise `alpha`.
    pub fn per_test_alpha(self, alpha: f64, tests: usize) -> f64 {
        let q = tests as f64;
        match self {
            Correction::Bonferroni => alpha / q,
            Correction::Sidak => -((-alpha).ln_1p() / q).exp_m1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(rename = "A")]
    pub a: f64,
    pub delta: f64,
    #[serde(default = "unit_cost")]
    pub c: f64,
}

fn unit_cost() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTestResult {
    pub id: String,
    pub alpha: f64,
    pub n: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDesign {
    pub correction: Correction,
    pub alpha_global: f64,
    pub power: f64,
    pub per_test_alpha: f64,
    pub tests: Vec<PowerTestResult>,
    pub total_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    /// Whether the total cost fits the budget; absent without a budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasible: Option<bool>,
}

/// Sample sizes for a family of tests with family-wise error control.
pub fn power_design_multi(
    tests: &[PowerTest],
    alpha_global: f64,
    power: f64,
    correction: Correction,
    budget: Option<f64>,
) -> Result<PowerDesign> {
    if tests.is_empty() {
        return Err(Error::invalid("no tests given"));
    }
    check_unit("alpha", alpha_global)?;
    let alpha = correction.per_test_alpha(alpha_global, tests.len());
    let mut results = Vec::with_capacity(tests.len());
    for (i, t) in tests.iter().enumerate() {
        if !(t.c > 0.0 && t.c.is_finite()) {
            return Err(Error::invalid(format!("test {i}: cost {} must be positive", t.c)));
        }
        let n = power_sample_size(t.a, t.delta, alpha, power)?;
        results.push(PowerTestResult {
            id: t.id.clone().unwrap_or_else(|| format!("t{i}")),
            alpha,
            n,
            cost: n as f64 * t.c,
        });
    }
    let total_cost = results.iter().map(|r| r.cost).sum();
    Ok(PowerDesign {
        correction,
        alpha_global,
        power,
        per_test_alpha: alpha,
        tests: results,
        total_cost,
        budget,
        feasible: budget.map(|b| total_cost <= b),
    })
}
