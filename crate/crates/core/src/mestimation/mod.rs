//! Prediction-powered M-estimation.
//!
//! For a convex loss with score `ψ`, the rectified estimating equation is
//!
//! ```text
//! mean_i ψ(x_i, y_i; θ) + λ · ( mean_pool ψ(x, ŷ; θ) − mean_i ψ(x_i, ŷ_i; θ) ) = 0
//! ```
//!
//! where `ŷ` is the surrogate outcome. Its root is found by damped Newton;
//! [`sandwich`] gives the asymptotic covariance `H⁻¹ V H⁻ᵀ / n`, and
//! [`scalarize`] collapses it into a scalar difficulty usable by the
//! allocator.

mod loss;
mod sandwich;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::LossFamily;
pub use sandwich::{
    sandwich, scalarize, stack_waves, tune_lambda, Criterion, SandwichCovariance, Scalarized,
    TunedLambda,
};

/// One labeled observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respondent: Option<String>,
    #[serde(default)]
    pub x: Vec<f64>,
    pub y_human: f64,
    pub y_surrogate: f64,
}

impl Record {
    pub fn new(x: Vec<f64>, y_human: f64, y_surrogate: f64) -> Self {
        Record {
            respondent: None,
            x,
            y_human,
            y_surrogate,
        }
    }
}

/// One unlabeled unit of the synthetic pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    #[serde(default)]
    pub x: Vec<f64>,
    pub y_surrogate: f64,
}

/// Pool-average surrogate score and its Jacobian at `θ`.
pub type PoolCallback = dyn Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync;

/// The synthetic side of the rectified equation.
#[derive(Clone)]
pub enum SyntheticPool {
    Records(Vec<PoolRecord>),
    /// For pools too large (or infinite) to enumerate.
    Callback(Arc<PoolCallback>),
}

impl fmt::Debug for SyntheticPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticPool::Records(r) => write!(f, "Records({} units)", r.len()),
            SyntheticPool::Callback(_) => f.write_str("Callback"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MEstimationProblem {
    pub loss: LossFamily,
    pub labeled: Vec<Record>,
    pub synthetic: Option<SyntheticPool>,
    pub lambda: f64,
}

impl MEstimationProblem {
    pub fn new(loss: LossFamily, labeled: Vec<Record>) -> Self {
        MEstimationProblem {
            loss,
            labeled,
            synthetic: None,
            lambda: 0.0,
        }
    }

    pub fn with_pool(mut self, pool: SyntheticPool) -> Self {
        self.synthetic = Some(pool);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn dim(&self) -> usize {
        self.loss.dim()
    }

    pub fn n(&self) -> usize {
        self.labeled.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.labeled.is_empty() {
            return Err(Error::NoRecords);
        }
        if self.labeled.len() < self.dim() {
            return Err(Error::InsufficientPairs {
                needed: self.dim(),
                got: self.labeled.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda = {} outside [0, 1]", self.lambda)));
        }
        for (i, r) in self.labeled.iter().enumerate() {
            self.loss
                .check_record(&r.x, r.y_human)
                .and_then(|_| self.loss.check_record(&r.x, r.y_surrogate))
                .map_err(|e| Error::Row {
                    row: i + 1,
                    message: e.to_string(),
                })?;
        }
        match &self.synthetic {
            None if self.lambda > 0.0 => {
                return Err(Error::invalid("lambda > 0 requires a synthetic pool"));
            }
            Some(SyntheticPool::Records(pool)) => {
                if pool.is_empty() {
                    return Err(Error::invalid("synthetic pool is empty"));
                }
                for (i, r) in pool.iter().enumerate() {
                    self.loss.check_record(&r.x, r.y_surrogate).map_err(|e| Error::Row {
                        row: i + 1,
                        message: format!("synthetic pool: {e}"),
                    })?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Rectified score and its Jacobian at `θ`.
    pub fn rectified(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let n = self.n() as f64;
        let lam = self.lambda;
        let mut g = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        for r in &self.labeled {
            g += self.loss.score(&r.x, r.y_human, theta);
            jac += self.loss.jacobian(&r.x, r.y_human, theta);
            if lam > 0.0 {
                g -= self.loss.score(&r.x, r.y_surrogate, theta) * lam;
                jac -= self.loss.jacobian(&r.x, r.y_surrogate, theta) * lam;
            }
        }
        g /= n;
        jac /= n;
        if lam > 0.0 {
            let (pg, pj) = self.pool_score(theta);
            g += pg * lam;
            jac += pj * lam;
        }
        (g, jac)
    }

    fn pool_score(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        match self.synthetic.as_ref().expect("validated: pool present") {
            SyntheticPool::Callback(f) => f(theta),
            SyntheticPool::Records(pool) => {
                let d = self.dim();
                let mut g = DVector::zeros(d);
                let mut jac = DMatrix::zeros(d, d);
                for r in pool {
                    g += self.loss.score(&r.x, r.y_surrogate, theta);
                    jac += self.loss.jacobian(&r.x, r.y_surrogate, theta);
                }
                let m = pool.len() as f64;
                (g / m, jac / m)
            }
        }
    }

    /// Starting point: empirical frequencies for mean/categorical, the
    /// labeled normal equations for OLS, zero for the logit model.
    fn initial(&self) -> Result<DVector<f64>> {
        let n = self.n() as f64;
        Ok(match self.loss {
            LossFamily::Mean => {
                DVector::from_element(1, self.labeled.iter().map(|r| r.y_human).sum::<f64>() / n)
            }
            LossFamily::Categorical { k } => {
                let mut f = DVector::zeros(k);
                for r in &self.labeled {
                    f[r.y_human as usize - 1] += 1.0;
                }
                f / n
            }
            LossFamily::Ols { d } => {
                let mut xtx = DMatrix::zeros(d, d);
                let mut xty = DVector::zeros(d);
                for r in &self.labeled {
                    let x = DVector::from_column_slice(&r.x);
                    xtx += &x * x.transpose();
                    xty += x * r.y_human;
                }
                solve_linear(&xtx, &xty, "normal equations")?
            }
            LossFamily::Mnl { d, .. } => DVector::zeros(d),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Stop once the sup-norm of the rectified score is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MEstimate {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub score_norm: f64,
}

impl MEstimate {
    pub fn theta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta)
    }
}

/// 2-norm condition number from the singular values.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular {
            context: context.to_string(),
            condition: cond,
        });
    }
    a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        context: context.to_string(),
        condition: cond,
    })
}

/// Solves the rectified estimating equation by damped Newton.
///
/// Each step is halved (up to 30 times) until the score norm decreases.
pub fn solve(problem: &MEstimationProblem, opts: SolverOptions) -> Result<MEstimate> {
    problem.validate()?;
    let mut theta = problem.initial()?;
    let (mut g, mut jac) = problem.rectified(&theta);
    for it in 0..=opts.max_iter {
        let norm = g.amax();
        if norm <= opts.tol {
            return Ok(MEstimate {
                theta: theta.iter().copied().collect(),
                iterations: it,
                score_norm: norm,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let step = solve_linear(&jac, &(-&g), "Newton system")?;
        let current = g.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let cand = &theta + &step * t;
            let (cg, cj) = problem.rectified(&cand);
            if cg.norm() < current {
                theta = cand;
                g = cg;
                jac = cj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: it + 1,
                score_norm: norm,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        score_norm: g.amax(),
    })
}

/// Reads labeled records from CSV.
///
/// Required columns are `y_human` and `y_llm`; an optional `respondent_id`
/// column keys rows for wave stacking; every other column is a covariate,
/// taken in header order.
pub fn load_records_csv(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, rows) = read_table(&text, path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let yh = col("y_human").ok_or_else(|| missing(path, "y_human"))?;
    let ys = col("y_llm").ok_or_else(|| missing(path, "y_llm"))?;
    let rid = col("respondent_id");
    let xcols: Vec<usize> = (0..header.len())
        .filter(|&i| i != yh && i != ys && Some(i) != rid)
        .collect();
    rows.into_iter()
        .map(|(line, fields)| {
            let num = |i: usize| parse_field(&fields[i], &header[i], line);
            Ok(Record {
                respondent: rid.map(|i| fields[i].clone()),
                x: xcols.iter().map(|&i| num(i)).collect::<Result<_>>()?,
                y_human: num(yh)?,
                y_surrogate: num(ys)?,
            })
        })
        .collect()
}

/// Reads a synthetic pool from CSV: a `y_llm` column plus covariates.
/// `y_human` and `respondent_id` columns, if present, are ignored.
pub fn load_pool_csv(path: &Path) -> Result<Vec<PoolRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, rows) = read_table(&text, path)?;
    let ys = header
        .iter()
        .position(|h| h == "y_llm")
        .ok_or_else(|| missing(path, "y_llm"))?;
    let xcols: Vec<usize> = (0..header.len())
        .filter(|&i| i != ys && header[i] != "y_human" && header[i] != "respondent_id")
        .collect();
    rows.into_iter()
        .map(|(line, fields)| {
            let num = |i: usize| parse_field(&fields[i], &header[i], line);
            Ok(PoolRecord {
                x: xcols.iter().map(|&i| num(i)).collect::<Result<_>>()?,
                y_surrogate: num(ys)?,
            })
        })
        .collect()
}

fn missing(path: &Path, col: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: format!("missing column `{col}`"),
    }
}

fn parse_field(raw: &str, column: &str, line: usize) -> Result<f64> {
    crate::sampledata::parse_decimal(raw).ok_or_else(|| Error::Row {
        row: line,
        message: format!("column `{column}`: `{raw}` is not a number"),
    })
}

type Table = (Vec<String>, Vec<(usize, Vec<String>)>);

fn read_table(text: &str, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok((header, rows))
}
