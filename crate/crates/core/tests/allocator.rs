use hybrid_survey::allocator::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem() -> impl Strategy<Value = AllocationProblem> {
    (
        prop::collection::vec((1e-3..10.0f64, 0.1..5.0f64, 0.2..4.0f64), 1..12),
        1.0..1e4f64,
    )
        .prop_map(|(qs, b)| {
            let questions = qs
                .into_iter()
                .enumerate()
                .map(|(i, (a, w, c))| QuestionSpec::new(format!("q{i}"), a, w, c))
                .collect();
            AllocationProblem::new(questions, b)
        })
}

fn root_sum(qs: &[QuestionSpec]) -> f64 {
    qs.iter().map(|q| (q.w * q.a * q.c).sqrt()).sum()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn budget_binds(p in problem()) {
        for alloc in [allocate(&p).unwrap(), allocate_mae(&p).unwrap(), allocate_waves(&p.questions, p.budget).unwrap()] {
            let spent: f64 = p.questions.iter().zip(alloc.sizes()).map(|(q, n)| q.c * n).sum();
            prop_assert!((spent - p.budget).abs() <= 1e-9 * p.budget);
        }
    }

    #[test]
    fn scale_invariant(p in problem(), k in 1e-3..1e3f64) {
        let base = allocate(&p).unwrap().sizes();
        let mut scaled = p.clone();
        for q in &mut scaled.questions { q.a *= k; }
        for (x, y) in base.iter().zip(allocate(&scaled).unwrap().sizes()) {
            prop_assert!(close(*x, y, 1e-12));
        }
    }

    #[test]
    fn square_root_proportionality(p in problem()) {
        let n = allocate(&p).unwrap().sizes();
        let r: Vec<f64> = p.questions.iter().zip(&n).map(|(q, n)| n * q.c.sqrt() / (q.w * q.a).sqrt()).collect();
        for v in &r { prop_assert!(close(*v, r[0], 1e-12)); }
    }

    #[test]
    fn closed_form_objective(p in problem()) {
        let alloc = allocate(&p).unwrap();
        let j_star = root_sum(&p.questions).powi(2) / p.budget;
        prop_assert!(close(weighted_mse(&p.questions, &alloc.sizes()), j_star, 1e-12));
        prop_assert!(close(alloc.optimal_objective, j_star, 1e-12));
    }

    #[test]
    fn monotone_in_own_difficulty(p in problem(), i in any::<prop::sample::Index>(), f in 1.01..10.0f64) {
        prop_assume!(p.questions.len() >= 2);
        let i = i.index(p.questions.len());
        let before = allocate(&p).unwrap().sizes();
        let mut harder = p.clone();
        harder.questions[i].a *= f;
        let after = allocate(&harder).unwrap().sizes();
        prop_assert!(after[i] > before[i]);
        for j in (0..before.len()).filter(|&j| j != i) {
            prop_assert!(after[j] <= before[j] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn primal_dual(p in problem()) {
        let primal = allocate(&p).unwrap();
        let dual = allocate_dual(&p.questions, primal.optimal_objective).unwrap();
        prop_assert!(close(dual.b_min, p.budget, 1e-10));
        for (x, y) in primal.sizes().iter().zip(dual.allocation.sizes()) {
            prop_assert!(close(*x, y, 1e-10));
        }
        let realized = weighted_mse(&p.questions, &dual.allocation.sizes());
        prop_assert!(close(realized, primal.optimal_objective, 1e-9));
    }

    #[test]
    fn rounding_conserves_seats(values in prop::collection::vec(0.0..50.0f64, 1..15), extra in 0usize..15) {
        let floors: u64 = values.iter().map(|v| v.floor() as u64).sum();
        let seats = floors + extra.min(values.len()) as u64;
        let r = largest_remainder_round(&values, seats).unwrap();
        prop_assert_eq!(r.iter().sum::<u64>(), seats);
        for (x, n) in values.iter().zip(&r) {
            prop_assert!((*n as f64 - x).abs() < 1.0);
        }
    }

    #[test]
    fn floors_hold(p in problem(), floor in 0.0..3.0f64) {
        let total: f64 = p.questions.iter().map(|q| q.c).sum();
        prop_assume!(p.budget > floor * total * 1.01);
        let alloc = allocate_with_floor(&p, floor).unwrap();
        let n = alloc.sizes();
        prop_assert!(n.iter().all(|v| *v >= floor - 1e-9));
        let spent: f64 = p.questions.iter().zip(&n).map(|(q, n)| q.c * n).sum();
        prop_assert!((spent - p.budget).abs() <= 1e-9 * p.budget);
        let free: Vec<usize> = (0..n.len()).filter(|&i| n[i] > floor + 1e-9).collect();
        if let Some(&f) = free.first() {
            let ratio = |i: usize| n[i] * p.questions[i].c.sqrt() / (p.questions[i].w * p.questions[i].a).sqrt();
            for &i in &free { prop_assert!(close(ratio(i), ratio(f), 1e-9)); }
        }
    }
}

#[test]
fn uniform_seat_count() {
    let p = AllocationProblem::unweighted(&[0.1; 68], 2000.0);
    for n in allocate(&p).unwrap().sizes() {
        assert!((n - 29.41).abs() < 0.005);
    }
}

#[test]
fn brute_force_integer_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
        let p = AllocationProblem::unweighted(&a, 20.0);
        let mut alloc = allocate(&p).unwrap();
        round_allocation(&mut alloc, &p.questions).unwrap();
        let rounded = alloc.integer_objective.unwrap();
        let mut best = f64::INFINITY;
        for n1 in 1..=17 {
            for n2 in 1..=(18 - n1) {
                for n3 in 1..=(19 - n1 - n2) {
                    let n4 = 20 - n1 - n2 - n3;
                    let j = a[0] / n1 as f64 + a[1] / n2 as f64 + a[2] / n3 as f64 + a[3] / n4 as f64;
                    best = best.min(j);
                }
            }
        }
        assert!(rounded <= best * 1.01, "{rounded} vs {best}");
    }
}

#[test]
fn sidak_is_less_conservative() {
    let tests: Vec<PowerTest> = (0..10)
        .map(|i| serde_json::from_value(serde_json::json!({"A": 0.2 + 0.01 * i as f64, "delta": 0.1})).unwrap())
        .collect();
    let b = power_design_multi(&tests, 0.05, 0.8, Correction::Bonferroni, None).unwrap();
    let s = power_design_multi(&tests, 0.05, 0.8, Correction::Sidak, None).unwrap();
    assert!(s.per_test_alpha > b.per_test_alpha);
    assert!((b.per_test_alpha - 0.005).abs() < 1e-15);
    for (x, y) in s.tests.iter().zip(&b.tests) {
        assert!(x.n <= y.n);
    }
    let one = power_design_multi(&tests[..1], 0.05, 0.8, Correction::Sidak, None).unwrap();
    assert_eq!(one.tests[0].n, power_sample_size(0.2, 0.1, 0.05, 0.8).unwrap());
}

#[test]
fn power_scales_with_difficulty() {
    assert_eq!(power_sample_size(0.25, 0.1, 0.05, 0.8).unwrap(), 197);
    // A halved: 196.22 / 2 = 98.11 → 99.
    assert_eq!(power_sample_size(0.125, 0.1, 0.05, 0.8).unwrap(), 99);
    assert!(power_sample_size(0.3, 0.1, 0.05, 0.8).unwrap() >= 197);
    for bad in [(0.0, 0.1, 0.05, 0.8), (0.25, 0.0, 0.05, 0.8), (0.25, 0.1, 1.0, 0.8), (0.25, 0.1, 0.05, 0.0)] {
        assert!(power_sample_size(bad.0, bad.1, bad.2, bad.3).is_err());
    }
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

#[test]
fn efficiency_ratio_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let q = rng.random_range(1..20);
        let eps = rng.random_range(0.0..2.0);
        let a: Vec<f64> = (0..q).map(|_| rng.random_range(0.01..1.0)).collect();
        let at: Vec<f64> = a.iter().map(|v| v * (eps * rng.random_range(-1.0..=1.0f64)).exp()).collect();
        let w: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..3.0)).collect();
        let c: Vec<f64> = (0..q).map(|_| rng.random_range(0.5..2.0)).collect();
        let r = efficiency_ratio(&a, &at, &w, &c).unwrap();
        assert!(r.ratio >= 1.0 - 1e-12 && r.ratio <= r.bound * (1.0 + 1e-12));
        assert!(r.epsilon <= eps + 1e-12);
        assert!((r.ratio - r.ratio_representation).abs() <= 1e-10 * r.ratio);
    }
}

#[test]
fn efficiency_ratio_is_one_only_under_proportionality() {
    let a = [0.3, 0.1, 0.8, 0.05];
    let prop: Vec<f64> = a.iter().map(|v| 7.0 * v).collect();
    let r = efficiency_ratio(&a, &prop, &ones(4), &ones(4)).unwrap();
    assert!((r.ratio - 1.0).abs() < 1e-12);
    for i in 0..4 {
        let mut p = prop.clone();
        p[i] *= 1.05;
        assert!(efficiency_ratio(&a, &p, &ones(4), &ones(4)).unwrap().ratio > 1.0);
    }
    let r = efficiency_ratio(&[1.0, 4.0], &[4.0, 1.0], &ones(2), &ones(2)).unwrap();
    assert!((r.ratio - 1.5).abs() < 1e-12 && (r.bound - 4.0).abs() < 1e-12);
}

#[test]
fn average_case_examples() {
    let l = average_case_loss(0.42).unwrap();
    assert!((l.second_order - 1.0441).abs() < 1e-12);
    assert!((l.gaussian_limit - 0.0441f64.exp()).abs() < 1e-15);
    let l = average_case_loss(1.0).unwrap();
    assert!((l.second_order - 1.25).abs() < 1e-15 && (l.gaussian_limit - 0.25f64.exp()).abs() < 1e-15);
    assert_eq!(average_case_loss(0.0).unwrap().gaussian_limit, 1.0);
    assert!(average_case_loss(-0.1).is_err());
}

#[test]
fn task_level_difficulty_reproduces_task_allocation() {
    let tasks = [vec![0.1, 0.3], vec![0.5, 0.7, 0.9]];
    let waves: Vec<QuestionSpec> = tasks
        .iter()
        .enumerate()
        .map(|(t, qs)| QuestionSpec::new(format!("t{t}"), qs.iter().sum::<f64>() / qs.len() as f64, 1.0, 1.0))
        .collect();
    let n = allocate_waves(&waves, 100.0).unwrap().sizes();
    let (s0, s1) = (0.2f64.sqrt(), 0.7f64.sqrt());
    assert!((n[0] - 100.0 * s0 / (s0 + s1)).abs() < 1e-12);
    assert!((n[1] - 100.0 * s1 / (s0 + s1)).abs() < 1e-12);
}
