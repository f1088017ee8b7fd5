//! Sample sizes for hypothesis tests on rectified estimates.

use hybrid_survey::allocator::{power_design_multi, power_sample_size, Correction, PowerTest};

fn main() -> hybrid_survey::Result<()> {
    let n = power_sample_size(0.25, 0.1, 0.05, 0.8)?;
    println!("one test, A = 0.25, δ = 0.1: n = {n}");

    let tests = vec![
        PowerTest { id: Some("approve".into()), a: 0.12, delta: 0.05, c: 1.0 },
        PowerTest { id: Some("trust".into()), a: 0.20, delta: 0.08, c: 1.0 },
        PowerTest { id: Some("spend".into()), a: 0.06, delta: 0.04, c: 2.0 },
    ];
    for correction in [Correction::Bonferroni, Correction::Sidak] {
        let d = power_design_multi(&tests, 0.05, 0.8, correction, Some(6000.0))?;
        println!(
            "{correction:?}: per-test α = {:.5}, total cost {:.0}, feasible {:?}",
            d.per_test_alpha, d.total_cost, d.feasible
        );
        for t in &d.tests {
            println!("  {:<8} n = {}", t.id, t.n);
        }
    }
    Ok(())
}
