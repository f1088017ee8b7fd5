//! Allocating respondents to survey waves rather than single questions.
//!
//! Each wave asks several questions of the same respondents. The stacked
//! sandwich keeps the correlation between a respondent's answers, and its
//! trace is the wave's difficulty for the square-root rule.

use hybrid_survey::allocator::{allocate_waves, QuestionSpec};
use hybrid_survey::mestimation::{scalarize, stack_waves, Criterion, LossFamily, MEstimationProblem, Record, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `questions` mean questions answered by `n` respondents whose answers share
/// a latent trait with loading `shared`; the surrogate tracks it with `fit`.
fn wave(rng: &mut ChaCha8Rng, questions: usize, shared: f64, fit: f64) -> Vec<MEstimationProblem> {
    let n = 80;
    let trait_: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..questions)
        .map(|_| {
            let recs = trait_
                .iter()
                .map(|t| {
                    let y = shared * t + rng.sample::<f64, _>(StandardNormal);
                    let s = fit * y + rng.sample::<f64, _>(StandardNormal);
                    Record::new(vec![], y, s)
                })
                .collect();
            MEstimationProblem::new(LossFamily::Mean, recs).with_lambda(0.0)
        })
        .collect()
}

fn main() -> hybrid_survey::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let designs = [("attitudes", 4, 1.0, 0.3), ("behaviour", 3, 0.2, 0.3), ("media", 5, 0.6, 0.3)];
    let mut specs = Vec::new();
    for (id, q, shared, fit) in designs {
        let sw = stack_waves(&wave(&mut rng, q, shared, fit), SolverOptions::default())?;
        let a = scalarize(&sw.sigma, &Criterion::Trace(None))?.value;
        println!("{id:<10} {q} questions, tr Σ = {a:.3}");
        // Longer waves cost more per respondent.
        specs.push(QuestionSpec::new(id, a, 1.0, q as f64));
    }
    let alloc = allocate_waves(&specs, 3000.0)?;
    for (id, n) in &alloc.continuous {
        println!("  {id:<10} respondents = {n:.1}");
    }
    println!("weighted MSE {:.5}", alloc.objective);
    Ok(())
}
