//! Pilot diagnostics: how much does the surrogate help on each question?
//!
//! Draws a small paired pilot from three synthetic populations, reports the
//! tuned coefficient λ̂ and rectified difficulty Â next to the human-only
//! variance, then forms PPI++ confidence intervals from a larger sample.

use hybrid_survey::estimator::{diagnostics, estimate_with_ci};
use hybrid_survey::sampledata::{synth_population, PopulationSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hybrid_survey::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let questions = [("useless", 0.0), ("decent", 0.5), ("sharp", 0.9)];

    println!("{:<8} {:>6} {:>8} {:>8} {:>8}", "question", "n", "λ̂", "Var(Y)", "Â");
    for (i, (id, rho)) in questions.iter().enumerate() {
        let spec = PopulationSpec {
            var_y: 0.05,
            rho: *rho,
            mean_y: 0.4,
            mean_s: 0.45,
            var_s: 0.05,
            n_pop: 20_000,
            bounded: true,
        };
        let pop = synth_population(*id, &spec, i as u64)?;
        let pilot = pop.draw(60, false, &mut rng)?;
        let d = diagnostics(&pilot)?;
        // Small pilots give noisy λ̂: even an unrelated surrogate can show
        // sizable sample correlation, which the larger sample corrects.
        println!("{:<8} {:>6} {:>8.3} {:>8.4} {:>8.4}", id, d.n, d.lambda_hat, d.var_y, d.a_hat);

        // A fresh sample plus a large synthetic pool gives the final interval.
        let sample = pop.draw(300, false, &mut rng)?.with_pool(pop.surrogate_pool(true));
        let est = estimate_with_ci(&sample, 0.95)?;
        println!(
            "         θ̂ = {:.4}  95% CI [{:.4}, {:.4}]  (θ* = {:.4})",
            est.theta_hat, est.ci_lo, est.ci_hi, pop.theta_star
        );
    }
    Ok(())
}
