#![allow(dead_code)]

use std::collections::BTreeMap;

use hybrid_survey::sampledata::{synth_population, Population, PopulationSpec, QuestionFeatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// (questions, mean difficulty, mean tuning coefficient) per task, easiest first.
pub const TASKS: [(usize, f64, f64); 14] = [
    (2, 0.041, 0.36),
    (6, 0.048, 0.07),
    (8, 0.051, 0.21),
    (3, 0.054, 0.31),
    (2, 0.059, 0.01),
    (2, 0.062, 0.28),
    (10, 0.074, 0.45),
    (9, 0.087, 0.38),
    (1, 0.105, 0.40),
    (4, 0.145, 0.01),
    (16, 0.170, 0.00),
    (2, 0.203, 0.03),
    (2, 0.234, 0.00),
    (1, 0.235, 0.00),
];

pub const A_MIN: f64 = 0.024;
pub const A_MAX: f64 = 0.239;

#[derive(Debug, Clone)]
pub struct WorldQuestion {
    pub id: String,
    pub task: String,
    pub a: f64,
    pub lambda: f64,
}

/// `n` log-evenly spaced values over `[-h, h]`, rescaled to arithmetic mean `mean`.
fn spread(n: usize, mean: f64, h: f64) -> Vec<f64> {
    if n == 1 {
        return vec![mean];
    }
    let raw: Vec<f64> = (0..n).map(|i| (-h + 2.0 * h * i as f64 / (n - 1) as f64).exp()).collect();
    let c = mean * n as f64 / raw.iter().sum::<f64>();
    raw.iter().map(|v| c * v).collect()
}

/// Largest half-width in `[0, 0.3]` keeping the task inside `[A_MIN, A_MAX]`,
/// or the one hitting the bound exactly for the tasks that carry the extremes.
fn half_width(t: usize) -> f64 {
    let (n, mean, _) = TASKS[t];
    let ok = |h: f64| {
        let p = spread(n, mean, h);
        p[0] >= A_MIN - 1e-12 && p[n - 1] <= A_MAX + 1e-12
    };
    let pinned = t == 3 || t == 10;
    let (mut lo, mut hi) = (0.0, if pinned { 5.0 } else { 0.3 });
    if !pinned && ok(hi) {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// 68 questions whose task means, counts and tuning coefficients follow the
/// per-task summary of the behavioral-economics corpus; within-task spread is
/// log-symmetric, with the extremes pinned at 0.024 and 0.239.
pub fn task_world() -> Vec<WorldQuestion> {
    let mut out = Vec::new();
    for (t, &(n, mean, lambda)) in TASKS.iter().enumerate() {
        for (i, a) in spread(n, mean, half_width(t)).into_iter().enumerate() {
            out.push(WorldQuestion {
                id: format!("t{t:02}q{i:02}"),
                task: format!("t{t:02}"),
                a,
                lambda,
            });
        }
    }
    out
}

/// Gaussian populations with `Var(S) = Var(Y)` and `ρ = λ`, so the
/// population λ* equals `lambda` and `A = Var(Y)(1 - λ²)`.
pub fn populations(world: &[WorldQuestion], n_pop: usize, seed: u64) -> Vec<Population> {
    world
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let var_y = q.a / (1.0 - q.lambda * q.lambda);
            let spec = PopulationSpec {
                var_y,
                rho: q.lambda,
                mean_y: 0.5,
                mean_s: 0.5,
                var_s: var_y,
                n_pop,
                bounded: false,
            };
            synth_population(q.id.clone(), &spec, seed.wrapping_add(i as u64)).unwrap()
        })
        .collect()
}

/// Historical corpus with `log A = mu + βᵀz + η`, `η ~ N(0, noise_sd²)`,
/// unit-variance features split evenly between a group effect and a
/// question effect, and `Var(log A) = total_var`.
pub struct MetaWorld {
    pub features: Vec<QuestionFeatures>,
    pub targets: BTreeMap<String, f64>,
    pub log_signal: Vec<f64>,
    pub mu: f64,
    pub beta: Vec<f64>,
    pub noise_sd: f64,
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn meta_world(
    groups: usize,
    per_group: usize,
    k: usize,
    noise_sd: f64,
    total_var: f64,
    mu: f64,
    seed: u64,
) -> MetaWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = (total_var - noise_sd * noise_sd).max(0.0).sqrt();
    let beta: Vec<f64> = dir.iter().map(|v| scale * v / norm).collect();
    let half = 0.5f64.sqrt();
    let mut features = Vec::new();
    let mut targets = BTreeMap::new();
    let mut log_signal = Vec::new();
    for g in 0..groups {
        let ge: Vec<f64> = (0..k).map(|_| half * normal(&mut rng)).collect();
        for i in 0..per_group {
            let z: Vec<f64> = ge.iter().map(|v| v + half * normal(&mut rng)).collect();
            let signal = mu + beta.iter().zip(&z).map(|(b, x)| b * x).sum::<f64>();
            let id = format!("g{g:02}q{i:02}");
            targets.insert(id.clone(), (signal + noise_sd * normal(&mut rng)).exp());
            log_signal.push(signal);
            features.push(QuestionFeatures {
                question_id: id,
                group_id: format!("g{g:02}"),
                z,
            });
        }
    }
    MetaWorld {
        features,
        targets,
        log_signal,
        mu,
        beta,
        noise_sd,
    }
}

impl MetaWorld {
    /// Features for new questions whose true `log A` is given: the component
    /// along β carries `log A - mu - η` with fresh noise η, the orthogonal
    /// complement is standard normal.
    pub fn features_for(&self, ids: &[(String, String)], log_a: &[f64], seed: u64) -> Vec<QuestionFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bb: f64 = self.beta.iter().map(|b| b * b).sum();
        ids.iter()
            .zip(log_a)
            .map(|((id, group), la)| {
                let u: Vec<f64> = (0..self.beta.len()).map(|_| normal(&mut rng)).collect();
                let along = self.beta.iter().zip(&u).map(|(b, x)| b * x).sum::<f64>() / bb;
                let s = la - self.mu - self.noise_sd * normal(&mut rng);
                let z = self
                    .beta
                    .iter()
                    .zip(&u)
                    .map(|(b, x)| x - along * b + s * b / bb)
                    .collect();
                QuestionFeatures {
                    question_id: id.clone(),
                    group_id: group.clone(),
                    z,
                }
            })
            .collect()
    }
}

/// Meta-learning corpus: 200 questions in 20 groups, 10 features, noise sd
/// 0.42 and log-difficulty variance 0.40, centered on the target world.
pub fn recovery_world(seed: u64) -> MetaWorld {
    let world = task_world();
    let mu = world.iter().map(|q| q.a.ln()).sum::<f64>() / world.len() as f64;
    meta_world(20, 10, 10, 0.42, 0.40, mu, seed)
}
