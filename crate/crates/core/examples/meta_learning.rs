//! Predicting rectified difficulty for questions that have no pilot data.
//!
//! A historical corpus of questions with known Â and embedding-like features
//! trains the standardize → PCA → ridge pipeline with grouped cross-validation;
//! the model then ranks a new wave of questions.

use std::collections::BTreeMap;

use hybrid_survey::metalearn::{fit, MetaConfig};
use hybrid_survey::sampledata::QuestionFeatures;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> hybrid_survey::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = 8;
    let beta: Vec<f64> = (0..k).map(|_| 0.25 * rng.sample::<f64, _>(StandardNormal)).collect();
    let corpus = |groups: usize, tag: &str, rng: &mut ChaCha8Rng| {
        let mut features = Vec::new();
        let mut targets = BTreeMap::new();
        for g in 0..groups {
            let center: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for i in 0..6 {
                let z: Vec<f64> = center.iter().map(|c| c + 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
                let log_a = -2.3 + beta.iter().zip(&z).map(|(b, x)| b * x).sum::<f64>()
                    + 0.3 * rng.sample::<f64, _>(StandardNormal);
                let id = format!("{tag}{g}-{i}");
                targets.insert(id.clone(), log_a.exp());
                features.push(QuestionFeatures { question_id: id, group_id: format!("{tag}{g}"), z });
            }
        }
        (features, targets)
    };

    let (features, targets) = corpus(25, "past", &mut rng);
    let cfg = MetaConfig {
        pca_var_grid: Some(vec![0.8, 0.9, 0.95]),
        ..MetaConfig::default()
    };
    let (model, report) = fit(&features, &targets, &cfg)?;
    println!(
        "grouped CV: R² {:.3}, Spearman {:.3}, RMSE {:.3} (penalty {}, PCA {} → {} components)",
        report.pooled.r2,
        report.pooled.spearman,
        report.pooled.rmse,
        report.selected_penalty,
        report.selected_pca_var_frac,
        model.explained_variance.len()
    );

    let (new_features, new_truth) = corpus(2, "new", &mut rng);
    let mut predicted = model.predict(&new_features)?;
    predicted.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("new questions, hardest first:");
    for (id, a) in predicted {
        println!("  {id:<8} Ã = {a:.4}   true A = {:.4}", new_truth[&id]);
    }
    Ok(())
}
