use hybrid_survey::estimator::*;
use hybrid_survey::sampledata::{synth_population, PairedSample, PopulationSpec, SyntheticSummary};
use hybrid_survey::stats;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample() -> impl Strategy<Value = PairedSample> {
    (2usize..60, any::<u64>(), -1.0..1.0f64, 0.0..2.0f64).prop_map(|(n, seed, slope, noise)| {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let l = y
            .iter()
            .map(|v| slope * v + noise * rng.random::<f64>())
            .collect();
        PairedSample::new("q", y, l).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn plug_in_lambda_minimizes_difficulty(s in sample()) {
        let lam = lambda_hat(&s).unwrap();
        let a_hat = rect_difficulty(&s, lam).unwrap();
        let var_y = stats::sample_var(&s.y_human);
        prop_assert!(a_hat <= var_y);
        for j in 0..=100 {
            let a = rect_difficulty(&s, j as f64 / 100.0).unwrap();
            prop_assert!(a_hat <= a + 1e-12 * var_y.max(a), "λ={} {} > {}", j, a_hat, a);
        }
    }

    #[test]
    fn difficulty_is_the_quadratic(s in sample(), lam in 0.0..=1.0f64) {
        let d = diagnostics(&s).unwrap();
        let direct = rect_difficulty(&s, lam).unwrap();
        let quad = d.var_y - 2.0 * lam * d.cov_ys + lam * lam * d.var_s;
        prop_assert!((direct - quad).abs() <= 1e-12 * (1.0 + d.var_y + d.var_s));
    }

    #[test]
    fn full_correction_hurts_exactly_below_half_variance(s in sample()) {
        let d = diagnostics(&s).unwrap();
        let gap = d.cov_ys - d.var_s / 2.0;
        prop_assume!(gap.abs() > 1e-9 * (d.var_s + d.var_y));
        let a1 = rect_difficulty(&s, 1.0).unwrap();
        let a0 = rect_difficulty(&s, 0.0).unwrap();
        prop_assert_eq!(a1 > a0, d.cov_ys < d.var_s / 2.0);
    }

    #[test]
    fn interval_contains_estimate(s in sample(), level in 0.5..0.999f64) {
        let s = s.with_pool(SyntheticSummary { m: 50, mean: 0.3, variance: 0.1, infinite_pool: false });
        let r = estimate_with_ci(&s, level).unwrap();
        prop_assert!(r.ci_lo <= r.theta_hat && r.theta_hat <= r.ci_hi);
        let z = stats::normal_quantile((1.0 + level) / 2.0);
        prop_assert!((r.ci_hi - r.theta_hat - z * r.std_error).abs() <= 1e-12 * (1.0 + r.theta_hat.abs()));
    }
}

#[test]
fn variance_examples() {
    let d = QuestionDiagnostics {
        question_id: "q".into(),
        n: 4,
        lambda_hat: 2.0 / 3.0,
        a_hat: 2.0 / 9.0,
        var_y: 1.0 / 3.0,
        var_s: 0.25,
        cov_ys: 1.0 / 6.0,
        accuracy: 0.75,
    };
    let pool = SyntheticSummary {
        m: 100,
        mean: 0.4,
        variance: 0.25,
        infinite_pool: false,
    };
    let v = ppi_pp_variance(&d, 2.0 / 3.0, 4, &pool).unwrap();
    assert!((v - (2.0 / 9.0 / 4.0 + 4.0 / 9.0 * 0.0025)).abs() < 1e-15);
    assert!((v - 0.05667).abs() < 1e-5);
    let inf = SyntheticSummary::infinite(0.4);
    assert!((ppi_pp_variance(&d, 2.0 / 3.0, 4, &inf).unwrap() - 2.0 / 9.0 / 4.0).abs() < 1e-15);
    assert!((ppi_pp_variance(&d, 0.0, 4, &pool).unwrap() - 1.0 / 12.0).abs() < 1e-15);
}

#[test]
fn full_correction_with_exact_pool_mean_is_sample_mean() {
    let s = PairedSample::new("q", vec![0.1, 0.7, 0.4], vec![0.3, 0.2, 0.9]).unwrap();
    let s = s.clone().with_pool(SyntheticSummary::infinite(stats::mean(&s.y_surrogate)));
    let t = ppi_pp_estimate(&s, 1.0).unwrap();
    assert!((t - stats::mean(&s.y_human)).abs() < 1e-15);
}

#[test]
fn estimator_is_unbiased_over_redraws() {
    let spec = PopulationSpec {
        var_y: 0.06,
        rho: 0.6,
        mean_y: 0.45,
        mean_s: 0.55,
        var_s: 0.05,
        n_pop: 20_000,
        bounded: true,
    };
    let pop = synth_population("q", &spec, 17).unwrap();
    let pool = pop.surrogate_pool(true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for lam in [0.0, 0.5, 1.0] {
        let est: Vec<f64> = (0..20_000)
            .map(|_| {
                let s = pop.draw(50, false, &mut rng).unwrap().with_pool(pool);
                ppi_pp_estimate(&s, lam).unwrap()
            })
            .collect();
        let se = (stats::sample_var(&est) / est.len() as f64).sqrt();
        let bias = stats::mean(&est) - pop.theta_star;
        assert!(bias.abs() < 4.0 * se, "λ={lam}: bias {bias}, se {se}");
    }
}
