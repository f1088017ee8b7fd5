use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convex losses with closed-form score and Jacobian.
///
/// Categorical and multinomial-logit outcomes are labels `1..=K`. For the
/// logit model the covariates of one record are the `K × d` alternative
/// features flattened row by row (alternative-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossFamily {
    /// `½(θ − y)²`, estimating the mean.
    Mean,
    /// `½‖θ − e_y‖²`, estimating response shares.
    Categorical { k: usize },
    /// `½(xᵀθ − y)²`.
    Ols { d: usize },
    /// Negative log-likelihood of a conditional logit over `k` alternatives.
    Mnl { k: usize, d: usize },
}

impl LossFamily {
    pub fn dim(&self) -> usize {
        match *self {
            LossFamily::Mean => 1,
            LossFamily::Categorical { k } => k,
            LossFamily::Ols { d } => d,
            LossFamily::Mnl { d, .. } => d,
        }
    }

    /// Number of covariates each record must carry.
    pub fn covariate_len(&self) -> usize {
        match *self {
            LossFamily::Mean | LossFamily::Categorical { .. } => 0,
            LossFamily::Ols { d } => d,
            LossFamily::Mnl { k, d } => k * d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossFamily::Mean => true,
            LossFamily::Categorical { k } => k >= 2,
            LossFamily::Ols { d } => d >= 1,
            LossFamily::Mnl { k, d } => k >= 2 && d >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate loss family {self:?}")))
        }
    }

    /// Checks that `x` and `y` have the shape this family expects.
    pub fn check_record(&self, x: &[f64], y: f64) -> Result<()> {
        let need = self.covariate_len();
        if need > 0 && x.len() != need {
            return Err(Error::DimensionMismatch {
                expected: need,
                got: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in record"));
        }
        if let LossFamily::Categorical { k } | LossFamily::Mnl { k, .. } = *self {
            label(y, k)?;
        }
        Ok(())
    }

    pub fn loss(&self, x: &[f64], y: f64, theta: &DVector<f64>) -> f64 {
        match *self {
            LossFamily::Mean => 0.5 * (theta[0] - y).powi(2),
            LossFamily::Categorical { k } => {
                let c = label(y, k).expect("validated label");
                (0..k)
                    .map(|j| {
                        let e = theta[j] - if j == c { 1.0 } else { 0.0 };
                        0.5 * e * e
                    })
                    .sum()
            }
            LossFamily::Ols { d } => {
                let r = dot(&x[..d], theta) - y;
                0.5 * r * r
            }
            LossFamily::Mnl { k, d } => {
                let c = label(y, k).expect("validated label");
                let u: Vec<f64> = (0..k).map(|j| dot(&x[j * d..(j + 1) * d], theta)).collect();
                log_sum_exp(&u) - u[c]
            }
        }
    }

    /// Score `ψ(x, y; θ)`, the gradient of the loss in `θ`.
    pub fn score(&self, x: &[f64], y: f64, theta: &DVector<f64>) -> DVector<f64> {
        match *self {
            LossFamily::Mean => DVector::from_element(1, theta[0] - y),
            LossFamily::Categorical { k } => {
                let mut s = theta.clone();
                s[label(y, k).expect("validated label")] -= 1.0;
                s
            }
            LossFamily::Ols { d } => {
                let xv = DVector::from_column_slice(&x[..d]);
                let r = xv.dot(theta) - y;
                xv * r
            }
            LossFamily::Mnl { k, d } => {
                let c = label(y, k).expect("validated label");
                let p = choice_probs(x, k, d, theta);
                let mut s = DVector::zeros(d);
                for j in 0..k {
                    let wgt = p[j] - if j == c { 1.0 } else { 0.0 };
                    for (si, xi) in s.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                        *si += wgt * xi;
                    }
                }
                s
            }
        }
    }

    /// Jacobian `∇θψ`. None of the built-in families depends on `y` here.
    pub fn jacobian(&self, x: &[f64], _y: f64, theta: &DVector<f64>) -> DMatrix<f64> {
        match *self {
            LossFamily::Mean => DMatrix::identity(1, 1),
            LossFamily::Categorical { k } => DMatrix::identity(k, k),
            LossFamily::Ols { d } => {
                let xv = DVector::from_column_slice(&x[..d]);
                &xv * xv.transpose()
            }
            LossFamily::Mnl { k, d } => {
                let p = choice_probs(x, k, d, theta);
                let mut xbar = DVector::zeros(d);
                let mut m = DMatrix::zeros(d, d);
                for j in 0..k {
                    let xj = DVector::from_column_slice(&x[j * d..(j + 1) * d]);
                    m += (&xj * xj.transpose()) * p[j];
                    xbar += xj * p[j];
                }
                m - &xbar * xbar.transpose()
            }
        }
    }

    /// Choice probabilities of the logit model for one record.
    pub fn probabilities(&self, x: &[f64], theta: &DVector<f64>) -> Option<Vec<f64>> {
        match *self {
            LossFamily::Mnl { k, d } => Some(choice_probs(x, k, d, theta)),
            _ => None,
        }
    }
}

fn label(y: f64, k: usize) -> Result<usize> {
    if y.fract() != 0.0 || y < 1.0 || y > k as f64 {
        return Err(Error::invalid(format!("label {y} is not an integer in 1..={k}")));
    }
    Ok(y as usize - 1)
}

fn dot(x: &[f64], theta: &DVector<f64>) -> f64 {
    x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum()
}

fn log_sum_exp(u: &[f64]) -> f64 {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn choice_probs(x: &[f64], k: usize, d: usize, theta: &DVector<f64>) -> Vec<f64> {
    let u: Vec<f64> = (0..k).map(|j| dot(&x[j * d..(j + 1) * d], theta)).collect();
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
