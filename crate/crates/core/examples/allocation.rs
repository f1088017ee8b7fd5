//! Square-root allocation of a human-label budget across questions.

use hybrid_survey::allocator::{
    allocate, allocate_dual, allocate_mae, allocate_with_floor, average_case_loss, efficiency_ratio,
    round_allocation, AllocationProblem, QuestionSpec,
};

fn main() -> hybrid_survey::Result<()> {
    // Rectified difficulties, importance weights and per-label costs.
    let questions = vec![
        QuestionSpec::new("turnout", 0.024, 1.0, 1.0),
        QuestionSpec::new("trust", 0.080, 1.0, 1.0),
        QuestionSpec::new("income", 0.239, 2.0, 1.5),
        QuestionSpec::new("vote", 0.110, 1.0, 1.0),
    ];
    let problem = AllocationProblem::new(questions.clone(), 1000.0);

    let mut opt = allocate(&problem)?;
    round_allocation(&mut opt, &questions)?;
    println!("optimal J* = {:.6}", opt.optimal_objective);
    for ((id, n), (_, seats)) in opt.continuous.iter().zip(opt.integer.as_ref().unwrap()) {
        println!("  {id:<8} n = {n:>7.2}  seats = {seats}");
    }

    let floored = allocate_with_floor(&problem, 150.0)?;
    println!("with a 150-seat floor: J = {:.6}", floored.objective);

    let mae = allocate_mae(&problem)?;
    println!("MAE-optimal sizes: {:?}", mae.sizes().iter().map(|n| n.round()).collect::<Vec<_>>());

    // Budget needed to reach a target precision.
    let dual = allocate_dual(&questions, opt.optimal_objective / 2.0)?;
    println!("halving J needs B = {:.1}", dual.b_min);

    // Cost of planning with the wrong difficulties.
    let truth: Vec<f64> = questions.iter().map(|q| q.a).collect();
    let guess = [0.05, 0.05, 0.15, 0.2];
    let w: Vec<f64> = questions.iter().map(|q| q.w).collect();
    let c: Vec<f64> = questions.iter().map(|q| q.c).collect();
    let r = efficiency_ratio(&truth, &guess, &w, &c)?;
    println!("misspecified plan: ratio {:.4} ≤ bound {:.4}", r.ratio, r.bound);
    let avg = average_case_loss(0.42)?;
    println!("expected loss at log-error sd 0.42: {:.4}", avg.gaussian_limit);
    Ok(())
}
