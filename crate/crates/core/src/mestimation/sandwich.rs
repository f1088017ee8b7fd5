use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{condition_number, solve, MEstimationProblem, SolverOptions};

/// Asymptotic covariance `Σ = H⁻¹ V H⁻ᵀ` of a rectified M-estimator; the
/// covariance of the estimate itself is `Σ / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichCovariance {
    pub n: usize,
    /// Mean Jacobian of the human-label score at the estimate.
    #[serde(with = "rows")]
    pub h: DMatrix<f64>,
    /// Covariance of the rectified residual `ψ − λ ψ^LLM`.
    #[serde(with = "rows")]
    pub v_delta: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma: DMatrix<f64>,
}

impl SandwichCovariance {
    pub fn estimate_covariance(&self) -> DMatrix<f64> {
        &self.sigma / self.n as f64
    }
}

fn assemble(n: usize, h: DMatrix<f64>, v_delta: DMatrix<f64>) -> Result<SandwichCovariance> {
    let cond = condition_number(&h);
    let h_inv = match h.clone().try_inverse() {
        Some(inv) if cond.is_finite() && cond <= 1e14 => inv,
        _ => {
            return Err(Error::Singular {
                context: "mean Jacobian H".into(),
                condition: cond,
            })
        }
    };
    let s = &h_inv * &v_delta * h_inv.transpose();
    let sigma = (&s + s.transpose()) * 0.5;
    check_psd(&sigma)?;
    Ok(SandwichCovariance { n, h, v_delta, sigma })
}

/// Sample covariance (`n − 1`) of the rows of `m`.
fn row_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n < 2 {
        return DMatrix::zeros(m.ncols(), m.ncols());
    }
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c.transpose() * &c / (n - 1) as f64
}

fn residuals(problem: &MEstimationProblem, theta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = problem.dim();
    let n = problem.n();
    let lam = problem.lambda;
    let mut delta = DMatrix::zeros(n, d);
    let mut h = DMatrix::zeros(d, d);
    for (i, r) in problem.labeled.iter().enumerate() {
        let mut s = problem.loss.score(&r.x, r.y_human, theta);
        if lam > 0.0 {
            s -= problem.loss.score(&r.x, r.y_surrogate, theta) * lam;
        }
        delta.set_row(i, &s.transpose());
        h += problem.loss.jacobian(&r.x, r.y_human, theta);
    }
    (delta, h / n as f64)
}

/// Sandwich covariance of the estimator at `theta`.
pub fn sandwich(problem: &MEstimationProblem, theta: &DVector<f64>) -> Result<SandwichCovariance> {
    problem.validate()?;
    if theta.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: theta.len(),
        });
    }
    let (delta, h) = residuals(problem, theta);
    assemble(problem.n(), h, row_covariance(&delta))
}

fn check_psd(sigma: &DMatrix<f64>) -> Result<()> {
    let trace = sigma.trace();
    let min = sigma.clone().symmetric_eigen().eigenvalues.min();
    if min < -1e-10 * trace.abs() - f64::MIN_POSITIVE {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(())
}

/// How a covariance matrix is reduced to a scalar difficulty.
#[derive(Debug, Clone, PartialEq)]
pub enum Criterion {
    /// `tr(Ω Σ)`; `None` means `Ω = I`.
    Trace(Option<DMatrix<f64>>),
    /// `det(Σ)^{1/d}`.
    DetRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalarized {
    pub value: f64,
    /// Set when `Σ` is singular under the determinant criterion (value 0).
    pub singular: bool,
}

pub fn scalarize(sigma: &DMatrix<f64>, criterion: &Criterion) -> Result<Scalarized> {
    let d = sigma.nrows();
    if d == 0 || sigma.ncols() != d {
        return Err(Error::invalid("covariance must be a nonempty square matrix"));
    }
    check_psd(sigma)?;
    match criterion {
        Criterion::Trace(None) => Ok(Scalarized {
            value: sigma.trace(),
            singular: false,
        }),
        Criterion::Trace(Some(omega)) => {
            if omega.nrows() != d || omega.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: omega.nrows(),
                });
            }
            check_psd(omega)?;
            Ok(Scalarized {
                value: (omega * sigma).trace(),
                singular: false,
            })
        }
        Criterion::DetRoot => {
            let trace = sigma.trace();
            let min = sigma.clone().symmetric_eigen().eigenvalues.min();
            if trace <= 0.0 || min <= 1e-12 * trace {
                return Ok(Scalarized {
                    value: 0.0,
                    singular: true,
                });
            }
            match sigma.clone().cholesky() {
                Some(ch) => {
                    let log_det: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                    Ok(Scalarized {
                        value: (log_det / d as f64).exp(),
                        singular: false,
                    })
                }
                None => Ok(Scalarized {
                    value: 0.0,
                    singular: true,
                }),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedLambda {
    pub lambda_star: f64,
    /// Scalarized difficulty at `lambda_star`.
    #[serde(rename = "A")]
    pub a: f64,
    pub theta: Vec<f64>,
    /// `(λ, A(λ))` over the grid.
    pub curve: Vec<(f64, f64)>,
}

/// Grid search for the λ minimizing the scalarized sandwich covariance.
///
/// Grid points are evaluated in parallel; ties go to the smallest λ, so
/// the result does not depend on scheduling.
pub fn tune_lambda(
    problem: &MEstimationProblem,
    criterion: &Criterion,
    grid: usize,
    opts: SolverOptions,
) -> Result<TunedLambda> {
    if grid < 2 {
        return Err(Error::invalid(format!("grid = {grid} must be at least 2")));
    }
    let points: Vec<Result<(f64, f64, Vec<f64>)>> = (0..grid)
        .into_par_iter()
        .map(|j| {
            let lambda = j as f64 / (grid - 1) as f64;
            let p = problem.clone().with_lambda(lambda);
            let est = solve(&p, opts)?;
            let sw = sandwich(&p, &est.theta_vector())?;
            Ok((lambda, scalarize(&sw.sigma, criterion)?.value, est.theta))
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let best = points
        .iter()
        .enumerate()
        .fold(0, |b, (i, p)| if p.1 < points[b].1 { i } else { b });
    Ok(TunedLambda {
        lambda_star: points[best].0,
        a: points[best].1,
        theta: points[best].2.clone(),
        curve: points.iter().map(|p| (p.0, p.1)).collect(),
    })
}

/// Joint sandwich covariance of several questions answered by the same
/// respondents.
///
/// Each question is solved at its own λ. `H` is block diagonal, while `V`
/// is the full covariance of the stacked residuals, so correlation between
/// a respondent's answers is kept. Rows are matched by respondent id when
/// every record carries one, and by position otherwise.
pub fn stack_waves(questions: &[MEstimationProblem], opts: SolverOptions) -> Result<SandwichCovariance> {
    let first = questions
        .first()
        .ok_or_else(|| Error::invalid("a wave needs at least one question"))?;
    let n = first.n();
    let keyed = questions
        .iter()
        .all(|q| q.labeled.iter().all(|r| r.respondent.is_some()));
    let unkeyed = questions
        .iter()
        .all(|q| q.labeled.iter().all(|r| r.respondent.is_none()));
    if !keyed && !unkeyed {
        return Err(Error::invalid("respondent ids present on some records only"));
    }

    // Row order of every question, expressed as indices into its records.
    let order: Vec<Vec<usize>> = if keyed {
        let ids: Vec<&str> = first
            .labeled
            .iter()
            .map(|r| r.respondent.as_deref().unwrap())
            .collect();
        questions
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let mut pos = HashMap::with_capacity(q.n());
                for (i, r) in q.labeled.iter().enumerate() {
                    if pos.insert(r.respondent.as_deref().unwrap(), i).is_some() {
                        return Err(Error::invalid(format!(
                            "question {qi}: duplicate respondent `{}`",
                            r.respondent.as_deref().unwrap()
                        )));
                    }
                }
                if q.n() != n {
                    return Err(Error::invalid(format!(
                        "question {qi}: {} respondents, expected {n}",
                        q.n()
                    )));
                }
                ids.iter()
                    .map(|id| {
                        pos.get(id).copied().ok_or_else(|| {
                            Error::invalid(format!("question {qi}: respondent `{id}` missing"))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?
    } else {
        if let Some(q) = questions.iter().find(|q| q.n() != n) {
            return Err(Error::invalid(format!(
                "respondent sets differ: {} vs {n} records",
                q.n()
            )));
        }
        vec![(0..n).collect(); questions.len()]
    };

    let dims: Vec<usize> = questions.iter().map(|q| q.dim()).collect();
    let total: usize = dims.iter().sum();
    let mut h = DMatrix::zeros(total, total);
    let mut stacked = DMatrix::zeros(n, total);
    let mut offset = 0;
    for ((q, d), ord) in questions.iter().zip(&dims).zip(&order) {
        let est = solve(q, opts)?;
        let (delta, hq) = residuals(q, &est.theta_vector());
        h.view_mut((offset, offset), (*d, *d)).copy_from(&hq);
        for (row, &src) in ord.iter().enumerate() {
            for c in 0..*d {
                stacked[(row, offset + c)] = delta[(src, c)];
            }
        }
        offset += d;
    }
    assemble(n, h, row_covariance(&stacked))
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::rect_difficulty;
    use crate::mestimation::{LossFamily, PoolRecord, Record, SyntheticPool};
    use crate::sampledata::PairedSample;

    fn mean_problem(y: &[f64], l: &[f64], lambda: f64) -> MEstimationProblem {
        let recs = y.iter().zip(l).map(|(&a, &b)| Record::new(vec![], a, b)).collect();
        let pool = l.iter().map(|&v| PoolRecord { x: vec![], y_surrogate: v }).collect();
        MEstimationProblem::new(LossFamily::Mean, recs)
            .with_pool(SyntheticPool::Records(pool))
            .with_lambda(lambda)
    }

    #[test]
    fn mean_sandwich_is_rectification_difficulty() {
        let y = [0.0, 1.0, 1.0, 0.0, 0.4];
        let l = [0.0, 1.0, 0.0, 0.0, 0.5];
        let sample = PairedSample::new("q", y.to_vec(), l.to_vec()).unwrap();
        for lambda in [0.0, 0.5, 2.0 / 3.0, 1.0] {
            let p = mean_problem(&y, &l, lambda);
            let est = solve(&p, SolverOptions::default()).unwrap();
            let sw = sandwich(&p, &est.theta_vector()).unwrap();
            let a = rect_difficulty(&sample, lambda).unwrap();
            assert!((sw.sigma[(0, 0)] - a).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_sandwich_matches_robust_formula() {
        let xs = [[1.0, 0.2], [1.0, -0.7], [1.0, 1.5], [1.0, 0.4], [1.0, -1.1]];
        let ys = [0.9, -0.4, 2.8, 1.1, -1.0];
        let recs: Vec<Record> = xs.iter().zip(ys).map(|(x, y)| Record::new(x.to_vec(), y, 0.0)).collect();
        let p = MEstimationProblem::new(LossFamily::Ols { d: 2 }, recs);
        let est = solve(&p, SolverOptions::default()).unwrap();
        let sw = sandwich(&p, &est.theta_vector()).unwrap();

        // (XᵀX)⁻¹ (Σ e² x xᵀ) (XᵀX)⁻¹, rescaled by n/(n−1) for the unbiased V.
        let x = DMatrix::from_fn(5, 2, |i, j| xs[i][j]);
        let b = est.theta_vector();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..5 {
            let xi = x.row(i).transpose();
            let e = ys[i] - xi.dot(&b);
            meat += &xi * xi.transpose() * (e * e);
        }
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let hc0 = &bread * meat * &bread;
        let ours = sw.estimate_covariance();
        for (a, b) in ours.iter().zip(hc0.iter()) {
            assert!((a - b * 5.0 / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalarize_examples() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        assert_eq!(scalarize(&s, &Criterion::Trace(None)).unwrap().value, 5.0);
        assert!((scalarize(&s, &Criterion::DetRoot).unwrap().value - 2.0).abs() < 1e-12);
        let one = DMatrix::from_element(1, 1, 0.37);
        assert!((scalarize(&one, &Criterion::DetRoot).unwrap().value - 0.37).abs() < 1e-15);
        assert_eq!(scalarize(&one, &Criterion::Trace(None)).unwrap().value, 0.37);

        let (c, s_) = (0.6f64, 0.8f64);
        let q = DMatrix::from_row_slice(2, 2, &[c, -s_, s_, c]);
        let full = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let rotated = &q * &full * q.transpose();
        for crit in [Criterion::Trace(None), Criterion::DetRoot] {
            let a = scalarize(&full, &crit).unwrap().value;
            let b = scalarize(&rotated, &crit).unwrap().value;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalarize_rejects_and_flags() {
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(scalarize(&neg, &Criterion::Trace(None)), Err(Error::NotPsd { .. })));
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = scalarize(&sing, &Criterion::DetRoot).unwrap();
        assert!(r.singular && r.value == 0.0);
    }

    #[test]
    fn tuned_lambda_tracks_closed_form() {
        let y = [0.1, 0.9, 0.4, 0.7, 0.2, 0.55, 0.8, 0.3];
        let l = [0.2, 0.7, 0.5, 0.6, 0.1, 0.4, 0.9, 0.35];
        let sample = PairedSample::new("q", y.to_vec(), l.to_vec()).unwrap();
        let lam = crate::estimator::lambda_hat(&sample).unwrap();
        let t = tune_lambda(&mean_problem(&y, &l, 0.0), &Criterion::Trace(None), 101, SolverOptions::default())
            .unwrap();
        assert!((t.lambda_star - lam).abs() <= 0.01 + 1e-12);
        let perfect = tune_lambda(&mean_problem(&y, &y, 0.0), &Criterion::Trace(None), 11, SolverOptions::default())
            .unwrap();
        assert_eq!(perfect.lambda_star, 1.0);
        assert!(perfect.a < 1e-15);
    }

    #[test]
    fn duplicate_questions_keep_correlation() {
        let y = [0.1, 0.9, 0.4, 0.7, 0.2];
        let l = [0.2, 0.7, 0.5, 0.6, 0.1];
        let p = mean_problem(&y, &l, 0.5);
        let single = sandwich(&p, &solve(&p, SolverOptions::default()).unwrap().theta_vector()).unwrap();
        let a = single.sigma[(0, 0)];
        let stacked = stack_waves(&[p.clone(), p.clone()], SolverOptions::default()).unwrap();
        let ones = DMatrix::from_element(2, 2, 1.0);
        let sum_var = scalarize(&stacked.sigma, &Criterion::Trace(Some(ones))).unwrap().value;
        assert!((sum_var - 4.0 * a).abs() < 1e-12);
        assert!((stacked.sigma.trace() - 2.0 * a).abs() < 1e-12);
        let one = stack_waves(&[p.clone()], SolverOptions::default()).unwrap();
        assert!((one.sigma[(0, 0)] - a).abs() < 1e-15);
    }

    #[test]
    fn mismatched_respondents_rejected() {
        let mk = |ids: &[&str]| {
            let recs = ids
                .iter()
                .enumerate()
                .map(|(i, id)| Record {
                    respondent: Some(id.to_string()),
                    x: vec![],
                    y_human: i as f64,
                    y_surrogate: 0.0,
                })
                .collect();
            MEstimationProblem::new(LossFamily::Mean, recs)
        };
        let a = mk(&["r1", "r2", "r3"]);
        let b = mk(&["r1", "r2", "r4"]);
        assert!(stack_waves(&[a.clone(), b], SolverOptions::default()).is_err());
        let shuffled = mk(&["r3", "r1", "r2"]);
        assert!(stack_waves(&[a, shuffled], SolverOptions::default()).is_ok());
    }

    #[test]
    fn sandwich_json_uses_rows() {
        let p = mean_problem(&[0.1, 0.5, 0.9], &[0.2, 0.4, 0.8], 0.0);
        let sw = sandwich(&p, &solve(&p, SolverOptions::default()).unwrap().theta_vector()).unwrap();
        let v = serde_json::to_value(&sw).unwrap();
        assert!(v["sigma"][0][0].is_number());
        let back: SandwichCovariance = serde_json::from_value(v).unwrap();
        assert_eq!(back, sw);
    }
}
