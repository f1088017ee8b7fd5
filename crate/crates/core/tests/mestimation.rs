use std::sync::Arc;

use hybrid_survey::estimator;
use hybrid_survey::mestimation::*;
use hybrid_survey::sampledata::{PairedSample, SyntheticSummary};
use hybrid_survey::stats;
use hybrid_survey::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn mean_records(y: &[f64], l: &[f64]) -> Vec<Record> {
    y.iter().zip(l).map(|(&h, &s)| Record::new(vec![], h, s)).collect()
}

#[test]
fn mean_loss_matches_scalar_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
    let l: Vec<f64> = y.iter().map(|v| 0.6 * v + 0.3 * rng.random::<f64>()).collect();
    let pool: Vec<f64> = (0..500).map(|_| 0.6 * rng.random::<f64>() + 0.3 * rng.random::<f64>()).collect();
    let summary = SyntheticSummary::from_predictions(&pool).unwrap();
    let sample = PairedSample::new("q", y.clone(), l.clone()).unwrap().with_pool(summary);
    let pool_records = pool.iter().map(|&s| PoolRecord { x: vec![], y_surrogate: s }).collect();
    let base = MEstimationProblem::new(LossFamily::Mean, mean_records(&y, &l))
        .with_pool(SyntheticPool::Records(pool_records));
    for lam in [0.0, 0.25, 0.5, 2.0 / 3.0, 1.0] {
        let p = base.clone().with_lambda(lam);
        let est = solve(&p, SolverOptions::default()).unwrap();
        let scalar = estimator::ppi_pp_estimate(&sample, lam).unwrap();
        assert!((est.theta[0] - scalar).abs() < 1e-10, "λ={lam}");
        let sw = sandwich(&p, &est.theta_vector()).unwrap();
        let a = estimator::rect_difficulty(&sample, lam).unwrap();
        assert!((sw.sigma[(0, 0)] - a).abs() < 1e-12, "λ={lam}");
    }
}

#[test]
fn categorical_frequencies() {
    let recs: Vec<Record> = [1.0, 1.0, 2.0, 3.0].iter().map(|&y| Record::new(vec![], y, 1.0)).collect();
    let est = solve(&MEstimationProblem::new(LossFamily::Categorical { k: 3 }, recs), SolverOptions::default()).unwrap();
    for (t, e) in est.theta.iter().zip([0.5, 0.25, 0.25]) {
        assert!((t - e).abs() < 1e-12);
    }
}

#[test]
fn logit_with_identical_alternatives_is_even() {
    let loss = LossFamily::Mnl { k: 2, d: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let recs: Vec<Record> = (0..40)
        .map(|i| {
            let f = [normal(&mut rng), normal(&mut rng)];
            Record::new(vec![f[0], f[1], f[0], f[1]], (1 + i % 2) as f64, 1.0)
        })
        .collect();
    let p = MEstimationProblem::new(loss, recs.clone());
    let est = solve(&p, SolverOptions::default()).unwrap();
    let probs = loss.probabilities(&recs[0].x, &est.theta_vector()).unwrap();
    assert!((probs[0] - 0.5).abs() < 1e-12 && (probs[1] - 0.5).abs() < 1e-12);
}

#[test]
fn score_and_jacobian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fams = [
        LossFamily::Mean,
        LossFamily::Categorical { k: 4 },
        LossFamily::Ols { d: 3 },
        LossFamily::Mnl { k: 3, d: 2 },
    ];
    for loss in fams {
        for _ in 0..100 {
            let d = loss.dim();
            let x: Vec<f64> = (0..loss.covariate_len()).map(|_| normal(&mut rng)).collect();
            let y = match loss {
                LossFamily::Categorical { k } | LossFamily::Mnl { k, .. } => rng.random_range(1..=k) as f64,
                _ => normal(&mut rng),
            };
            let theta = DVector::from_fn(d, |_, _| normal(&mut rng));
            let g = loss.score(&x, y, &theta);
            let jac = loss.jacobian(&x, y, &theta);
            assert!((&jac - jac.transpose()).amax() < 1e-12);
            let h = 1e-6;
            for j in 0..d {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (loss.loss(&x, y, &up) - loss.loss(&x, y, &dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "{loss:?} score");
                let col = (loss.score(&x, y, &up) - loss.score(&x, y, &dn)) / (2.0 * h);
                for i in 0..d {
                    assert!((col[i] - jac[(i, j)]).abs() <= 1e-5 * jac[(i, j)].abs().max(1.0), "{loss:?} jacobian");
                }
            }
        }
    }
}

/// Regression world with a known population: `x = (1, x1, x2)`,
/// heteroskedastic human outcome and a biased surrogate.
struct OlsWorld {
    beta: DVector<f64>,
    beta_s: DVector<f64>,
}

impl OlsWorld {
    fn new() -> Self {
        OlsWorld {
            beta: DVector::from_vec(vec![0.5, 1.0, -0.7]),
            beta_s: DVector::from_vec(vec![0.6, 0.8, -0.5]),
        }
    }

    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Record> {
        (0..n)
            .map(|_| {
                let x = vec![1.0, normal(rng), normal(rng)];
                let xv = DVector::from_column_slice(&x);
                let e = normal(rng) * (0.5 + 0.5 * x[1].abs());
                let y = self.beta.dot(&xv) + e;
                let s = self.beta_s.dot(&xv) + 0.6 * e + 0.3 * normal(rng);
                Record::new(x, y, s)
            })
            .collect()
    }

    /// Exact pool expectation of the surrogate score: `E[xxᵀ](θ − β_s)`,
    /// with `E[xxᵀ] = I` for this design.
    fn pool(&self) -> SyntheticPool {
        let beta_s = self.beta_s.clone();
        SyntheticPool::Callback(Arc::new(move |theta: &DVector<f64>| {
            (theta - &beta_s, DMatrix::identity(3, 3))
        }))
    }
}

#[test]
fn rectified_score_is_unbiased_at_the_truth() {
    let world = OlsWorld::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reps = 4000;
    for lam in [0.0, 0.5, 1.0] {
        let scores: Vec<DVector<f64>> = (0..reps)
            .map(|_| {
                MEstimationProblem::new(LossFamily::Ols { d: 3 }, world.draw(60, &mut rng))
                    .with_pool(world.pool())
                    .with_lambda(lam)
                    .rectified(&world.beta)
                    .0
            })
            .collect();
        for j in 0..3 {
            let v: Vec<f64> = scores.iter().map(|s| s[j]).collect();
            let se = (stats::sample_var(&v) / reps as f64).sqrt();
            assert!(stats::mean(&v).abs() < 4.0 * se, "λ={lam}, coordinate {j}");
        }
    }
}

fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &m * m.transpose() + DMatrix::identity(d, d) * 0.1
}

#[test]
fn scalarization_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in 1..6 {
        let sigma = random_psd(d, &mut rng);
        let l = DMatrix::from_fn(d, d, |_, _| normal(&mut rng));
        let weighted = scalarize(&sigma, &Criterion::Trace(Some(l.transpose() * &l))).unwrap().value;
        let direct = (&l * &sigma * l.transpose()).trace();
        assert!((weighted - direct).abs() <= 1e-12 * direct.abs().max(1.0));

        let q = l.clone().qr().q();
        let rotated = &q * &sigma * q.transpose();
        let rotated = (&rotated + rotated.transpose()) * 0.5;
        for c in [Criterion::Trace(None), Criterion::DetRoot] {
            let a = scalarize(&sigma, &c).unwrap().value;
            let b = scalarize(&rotated, &c).unwrap().value;
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{c:?}");
        }

        // Unit-determinant shear keeps the determinant criterion.
        let mut shear = DMatrix::identity(d, d);
        if d > 1 {
            shear[(0, 1)] = 2.5;
        }
        let sheared = &shear * &sigma * shear.transpose();
        let sheared = (&sheared + sheared.transpose()) * 0.5;
        let a = scalarize(&sigma, &Criterion::DetRoot).unwrap().value;
        let b = scalarize(&sheared, &Criterion::DetRoot).unwrap().value;
        assert!((a - b).abs() <= 1e-10 * a, "d={d}");
    }
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
    assert_eq!(scalarize(&diag, &Criterion::Trace(None)).unwrap().value, 5.0);
    assert!((scalarize(&diag, &Criterion::DetRoot).unwrap().value - 2.0).abs() < 1e-15);
    let one = DMatrix::from_element(1, 1, 0.37);
    assert!((scalarize(&one, &Criterion::DetRoot).unwrap().value - 0.37).abs() < 1e-15);
    let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let s = scalarize(&singular, &Criterion::DetRoot).unwrap();
    assert!(s.singular && s.value == 0.0);
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(scalarize(&indefinite, &Criterion::Trace(None)), Err(Error::NotPsd { .. })));
}

fn mean_problem(y: &[f64], l: &[f64], pool_mean: f64) -> MEstimationProblem {
    let pm = pool_mean;
    MEstimationProblem::new(LossFamily::Mean, mean_records(y, l)).with_pool(SyntheticPool::Callback(Arc::new(
        move |t: &DVector<f64>| (DVector::from_element(1, t[0] - pm), DMatrix::identity(1, 1)),
    )))
}

#[test]
fn tuned_lambda_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let l: Vec<f64> = y.iter().map(|v| 0.5 * v + 0.4 * rng.random::<f64>()).collect();
    let grid = 41;
    let t = tune_lambda(&mean_problem(&y, &l, 0.45), &Criterion::Trace(None), grid, SolverOptions::default()).unwrap();
    let s = PairedSample::new("q", y.clone(), l).unwrap();
    let lam = estimator::lambda_hat(&s).unwrap();
    assert!((t.lambda_star - lam).abs() <= 1.0 / (grid - 1) as f64);

    let noise: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let t = tune_lambda(&mean_problem(&y, &noise, 0.5), &Criterion::Trace(None), 21, SolverOptions::default()).unwrap();
    assert!(t.lambda_star <= 0.1, "{}", t.lambda_star);

    let t = tune_lambda(&mean_problem(&y, &y, 0.5), &Criterion::DetRoot, 11, SolverOptions::default()).unwrap();
    assert_eq!(t.lambda_star, 1.0);
    assert!(t.a < 1e-12);
    assert!(tune_lambda(&mean_problem(&y, &y, 0.5), &Criterion::DetRoot, 1, SolverOptions::default()).is_err());
}

#[test]
fn tuning_is_scheduling_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let l: Vec<f64> = y.iter().map(|v| v + 0.2 * rng.random::<f64>()).collect();
    let p = mean_problem(&y, &l, 0.6);
    let par = tune_lambda(&p, &Criterion::Trace(None), 31, SolverOptions::default()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let seq = pool.install(|| tune_lambda(&p, &Criterion::Trace(None), 31, SolverOptions::default()).unwrap());
    assert_eq!(par, seq);
}

#[test]
fn independent_questions_stack_additively() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mut qs = Vec::new();
    let mut single = 0.0;
    for q in 0..2 {
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng) * (1.0 + q as f64)).collect();
        let l: Vec<f64> = y.iter().map(|v| 0.8 * v + normal(&mut rng)).collect();
        let p = mean_problem(&y, &l, 0.0).with_lambda(0.5);
        let est = solve(&p, SolverOptions::default()).unwrap();
        single += sandwich(&p, &est.theta_vector()).unwrap().sigma[(0, 0)];
        qs.push(p);
    }
    let stacked = stack_waves(&qs, SolverOptions::default()).unwrap();
    let s = &stacked.sigma;
    let corr = s[(0, 1)] / (s[(0, 0)] * s[(1, 1)]).sqrt();
    assert!(corr.abs() < 0.02, "{corr}");
    assert!((s.trace() - single).abs() < 1e-9 * single);

    let one = stack_waves(&qs[..1], SolverOptions::default()).unwrap();
    let est = solve(&qs[0], SolverOptions::default()).unwrap();
    assert!((one.sigma[(0, 0)] - sandwich(&qs[0], &est.theta_vector()).unwrap().sigma[(0, 0)]).abs() < 1e-12);
}

#[test]
fn mismatched_wave_respondents_are_rejected() {
    let mut a = mean_records(&[0.0, 1.0, 1.0], &[0.0, 1.0, 0.0]);
    let mut b = a.clone();
    for (i, r) in a.iter_mut().enumerate() {
        r.respondent = Some(format!("r{i}"));
    }
    for (i, r) in b.iter_mut().enumerate() {
        r.respondent = Some(format!("s{i}"));
    }
    let qs = [
        MEstimationProblem::new(LossFamily::Mean, a),
        MEstimationProblem::new(LossFamily::Mean, b),
    ];
    assert!(stack_waves(&qs, SolverOptions::default()).is_err());
}

#[test]
fn collinear_design_is_a_numerical_failure() {
    let recs: Vec<Record> = (0..10)
        .map(|i| Record::new(vec![1.0, i as f64, 2.0 * i as f64], i as f64, 0.0))
        .collect();
    let e = solve(&MEstimationProblem::new(LossFamily::Ols { d: 3 }, recs), SolverOptions::default()).unwrap_err();
    assert!(e.is_numerical(), "{e}");
}
