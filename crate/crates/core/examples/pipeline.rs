//! The whole workflow in one pass: learn difficulty from past surveys,
//! predict it for a new questionnaire, allocate human labels, field the
//! survey and report rectified estimates.

use std::collections::BTreeMap;

use hybrid_survey::allocator::{allocate_with_floor, round_allocation, AllocationProblem, QuestionSpec};
use hybrid_survey::estimator::estimate_with_ci;
use hybrid_survey::metalearn::{fit, MetaConfig};
use hybrid_survey::sampledata::{synth_population, PopulationSpec, QuestionFeatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const K: usize = 6;

/// Features and log difficulty of one question in topic `center`.
fn question(rng: &mut ChaCha8Rng, center: &[f64], beta: &[f64]) -> (Vec<f64>, f64) {
    let z: Vec<f64> = center.iter().map(|c| c + 0.6 * rng.sample::<f64, _>(StandardNormal)).collect();
    let log_a = -2.4 + beta.iter().zip(&z).map(|(b, x)| b * x).sum::<f64>() + 0.25 * rng.sample::<f64, _>(StandardNormal);
    (z, log_a)
}

fn main() -> hybrid_survey::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let beta: Vec<f64> = (0..K).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let topic = |rng: &mut ChaCha8Rng| (0..K).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>();

    // 1. Past surveys with measured difficulty.
    let mut features = Vec::new();
    let mut targets = BTreeMap::new();
    for g in 0..20 {
        let center = topic(&mut rng);
        for i in 0..8 {
            let (z, log_a) = question(&mut rng, &center, &beta);
            let id = format!("past{g}-{i}");
            targets.insert(id.clone(), log_a.exp());
            features.push(QuestionFeatures { question_id: id, group_id: format!("t{g}"), z });
        }
    }
    let (model, report) = fit(&features, &targets, &MetaConfig::default())?;
    println!("meta-model: grouped-CV Spearman {:.3}", report.pooled.spearman);

    // 2. A new questionnaire: predicted difficulty drives the allocation.
    let center = topic(&mut rng);
    let mut new = Vec::new();
    let mut true_a = Vec::new();
    for i in 0..10 {
        let (z, log_a) = question(&mut rng, &center, &beta);
        new.push(QuestionFeatures { question_id: format!("new{i}"), group_id: "new".into(), z });
        true_a.push(log_a.exp());
    }
    let predicted = model.predict(&new)?;
    let specs: Vec<QuestionSpec> = predicted.iter().map(|(id, a)| QuestionSpec::new(id.clone(), *a, 1.0, 1.0)).collect();
    let mut alloc = allocate_with_floor(&AllocationProblem::new(specs.clone(), 1500.0), 30.0)?;
    round_allocation(&mut alloc, &specs)?;

    // 3. Field the survey: the surrogate answers everyone, humans answer the
    //    allocated seats, and each question gets a PPI++ interval.
    println!("{:<6} {:>7} {:>7} {:>6} {:>18} {:>8}", "id", "Ã", "A", "seats", "95% CI", "θ*");
    let seats = alloc.integer.unwrap();
    for (i, ((id, n), a)) in seats.iter().zip(&true_a).enumerate() {
        let rho = 0.6;
        let var_y = a / (1.0 - rho * rho);
        let spec = PopulationSpec { var_y, rho, mean_y: 0.5, mean_s: 0.5, var_s: var_y, n_pop: 50_000, bounded: false };
        let pop = synth_population(id.clone(), &spec, 100 + i as u64)?;
        let sample = pop.draw(*n as usize, false, &mut rng)?.with_pool(pop.surrogate_pool(true));
        let est = estimate_with_ci(&sample, 0.95)?;
        println!(
            "{id:<6} {:>7.4} {a:>7.4} {n:>6} [{:>7.4}, {:>7.4}] {:>8.4}",
            predicted[i].1, est.ci_lo, est.ci_hi, pop.theta_star
        );
    }
    println!("planned weighted MSE {:.6}", alloc.objective);
    Ok(())
}
