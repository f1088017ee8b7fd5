//! Allocation of a human-label budget across questions.
//!
//! With difficulties `A_q`, importance weights `w_q`, unit costs `c_q` and
//! budget `B`, the weighted-MSE design problem
//!
//! ```text
//! minimize  J(A, n) = Σ w_q A_q / n_q   subject to  Σ c_q n_q ≤ B
//! ```
//!
//! is solved in closed form by the square-root rule
//! `n_q = B·sqrt(w_q A_q / c_q) / Σ_j sqrt(w_j A_j c_j)`, with optimal value
//! `J* = (Σ sqrt(w A c))² / B`. The same proportions solve the
//! cost-minimizing dual and the wave-level problem; the MAE objective gives
//! a cube-root rule instead.

mod power;
mod robustness;
mod rounding;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use power::{
    power_design_multi, power_sample_size, Correction, PowerDesign, PowerTest, PowerTestResult,
};
pub use robustness::{average_case_loss, efficiency_ratio, AverageCaseLoss, EfficiencyRatio};
pub use rounding::{largest_remainder_round, round_allocation};

/// One allocation unit (a question, or a wave of questions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    /// Rectification difficulty.
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(default = "one")]
    pub w: f64,
    #[serde(default = "one")]
    pub c: f64,
}

fn one() -> f64 {
    1.0
}

impl QuestionSpec {
    pub fn new(id: impl Into<String>, a: f64, w: f64, c: f64) -> Self {
        QuestionSpec {
            id: id.into(),
            a,
            w,
            c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub questions: Vec<QuestionSpec>,
    pub budget: f64,
}

impl AllocationProblem {
    pub fn new(questions: Vec<QuestionSpec>, budget: f64) -> Self {
        AllocationProblem { questions, budget }
    }

    /// Unit weights and costs.
    pub fn unweighted(difficulties: &[f64], budget: f64) -> Self {
        let questions = difficulties
            .iter()
            .enumerate()
            .map(|(i, &a)| QuestionSpec::new(format!("q{i}"), a, 1.0, 1.0))
            .collect();
        AllocationProblem { questions, budget }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::invalid(format!("budget {} must be positive", self.budget)));
        }
        validate_questions(&self.questions)
    }
}

pub(crate) fn validate_questions(questions: &[QuestionSpec]) -> Result<()> {
    if questions.is_empty() {
        return Err(Error::invalid("no questions to allocate"));
    }
    for q in questions {
        if !(q.a > 0.0 && q.a.is_finite()) {
            return Err(Error::invalid(format!("question {}: A = {} must be positive", q.id, q.a)));
        }
        if !(q.c > 0.0 && q.c.is_finite()) {
            return Err(Error::invalid(format!("question {}: c = {} must be positive", q.id, q.c)));
        }
        if !(q.w >= 0.0 && q.w.is_finite()) {
            return Err(Error::invalid(format!("question {}: w = {} must be nonnegative", q.id, q.w)));
        }
    }
    if questions.iter().all(|q| q.w == 0.0) {
        return Err(Error::invalid("all weights are zero"));
    }
    Ok(())
}

/// Continuous (and optionally integer) sample sizes, in problem order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    #[serde(with = "ordered_map")]
    pub continuous: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "ordered_map::option")]
    pub integer: Option<Vec<(String, u64)>>,
    /// Weighted MSE `J(A, n)` of the continuous allocation.
    pub objective: f64,
    /// Unconstrained optimum `J*(A) = (Σ sqrt(w A c))² / B`.
    pub optimal_objective: f64,
    pub budget: f64,
    /// `J(A, n)` of the integer allocation, when rounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integer_objective: Option<f64>,
    /// `Σ c_q n_q` of the integer allocation, when rounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_cost: Option<f64>,
}

impl Allocation {
    /// Wraps externally chosen continuous sizes (e.g. a uniform design) so
    /// they can be rounded and compared like solver output.
    pub fn from_sizes(questions: &[QuestionSpec], budget: f64, sizes: Vec<f64>) -> Result<Self> {
        if sizes.len() != questions.len() {
            return Err(Error::DimensionMismatch {
                expected: questions.len(),
                got: sizes.len(),
            });
        }
        validate_questions(questions)?;
        Ok(build(questions, budget, sizes))
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.continuous.iter().map(|(_, n)| *n).collect()
    }

    pub fn seats(&self) -> Option<Vec<u64>> {
        self.integer
            .as_ref()
            .map(|v| v.iter().map(|(_, n)| *n).collect())
    }
}

/// Weighted MSE `Σ w_q A_q / n_q`; terms with `w_q = 0` contribute nothing.
pub fn weighted_mse(questions: &[QuestionSpec], sizes: &[f64]) -> f64 {
    questions
        .iter()
        .zip(sizes)
        .filter(|(q, _)| q.w > 0.0)
        .map(|(q, &n)| if n > 0.0 { q.w * q.a / n } else { f64::INFINITY })
        .sum()
}

/// `Σ sqrt(w A c)` over questions with positive weight.
pub(crate) fn root_sum(questions: &[QuestionSpec]) -> f64 {
    questions
        .iter()
        .filter(|q| q.w > 0.0)
        .map(|q| (q.w * q.a * q.c).sqrt())
        .sum()
}

fn build(questions: &[QuestionSpec], budget: f64, sizes: Vec<f64>) -> Allocation {
    let s = root_sum(questions);
    Allocation {
        objective: weighted_mse(questions, &sizes),
        optimal_objective: s * s / budget,
        continuous: questions.iter().map(|q| q.id.clone()).zip(sizes).collect(),
        integer: None,
        budget,
        integer_objective: None,
        realized_cost: None,
    }
}

fn sqrt_rule(questions: &[QuestionSpec], budget: f64) -> Vec<f64> {
    let s = root_sum(questions);
    questions
        .iter()
        .map(|q| {
            if q.w > 0.0 {
                budget * (q.w * q.a / q.c).sqrt() / s
            } else {
                0.0
            }
        })
        .collect()
}

/// Optimal continuous allocation under weighted MSE (the square-root rule).
pub fn allocate(problem: &AllocationProblem) -> Result<Allocation> {
    problem.validate()?;
    let sizes = sqrt_rule(&problem.questions, problem.budget);
    Ok(build(&problem.questions, problem.budget, sizes))
}

/// Square-root allocation subject to `n_q ≥ n_min` for every question.
///
/// Questions whose unconstrained share falls below the floor are clamped to
/// it and the rule is re-solved over the rest with the remaining budget,
/// repeating until no free question violates the floor.
pub fn allocate_with_floor(problem: &AllocationProblem, n_min: f64) -> Result<Allocation> {
    problem.validate()?;
    if n_min <= 0.0 {
        return allocate(problem);
    }
    let qs = &problem.questions;
    let floor_cost: f64 = qs.iter().map(|q| q.c * n_min).sum();
    if floor_cost > problem.budget * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "budget {} cannot cover a floor of {n_min} per question (needs {floor_cost})",
            problem.budget
        )));
    }
    let mut clamped: Vec<bool> = qs.iter().map(|q| q.w == 0.0).collect();
    loop {
        let spent: f64 = qs
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| c)
            .map(|(q, _)| q.c * n_min)
            .sum();
        let remaining = problem.budget - spent;
        let free: Vec<QuestionSpec> = qs
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| !c)
            .map(|(q, _)| q.clone())
            .collect();
        let free_sizes = if free.is_empty() {
            Vec::new()
        } else {
            sqrt_rule(&free, remaining)
        };
        let mut sizes = Vec::with_capacity(qs.len());
        let mut it = free_sizes.into_iter();
        let mut changed = false;
        for (i, _) in qs.iter().enumerate() {
            if clamped[i] {
                sizes.push(n_min);
            } else {
                let n = it.next().expect("one size per free question");
                if n < n_min {
                    clamped[i] = true;
                    changed = true;
                }
                sizes.push(n);
            }
        }
        if !changed {
            if free.is_empty() && remaining > 1e-12 * problem.budget {
                // Every question sits at its floor; spread the slack by the rule.
                let extra = sqrt_rule(qs, remaining);
                for (s, e) in sizes.iter_mut().zip(extra) {
                    *s += e;
                }
            }
            return Ok(build(qs, problem.budget, sizes));
        }
    }
}

/// Solution of the cost-minimizing dual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAllocation {
    pub allocation: Allocation,
    /// Minimum budget achieving the target weighted MSE.
    pub b_min: f64,
    pub j_target: f64,
}

/// Minimum-cost allocation achieving weighted MSE `j_target`:
/// `B_min = (Σ sqrt(w A c))² / j_target`, with square-root proportions.
pub fn allocate_dual(questions: &[QuestionSpec], j_target: f64) -> Result<DualAllocation> {
    if !(j_target > 0.0 && j_target.is_finite()) {
        return Err(Error::invalid(format!("j_target = {j_target} must be positive")));
    }
    validate_questions(questions)?;
    let s = root_sum(questions);
    let b_min = s * s / j_target;
    let sizes = sqrt_rule(questions, b_min);
    Ok(DualAllocation {
        allocation: build(questions, b_min, sizes),
        b_min,
        j_target,
    })
}

/// Allocation minimizing weighted MAE: `n_q ∝ (w_q / c_q)^{2/3} A_q^{1/3}`,
/// normalized to spend the budget.
pub fn allocate_mae(problem: &AllocationProblem) -> Result<Allocation> {
    problem.validate()?;
    let qs = &problem.questions;
    let raw: Vec<f64> = qs
        .iter()
        .map(|q| {
            if q.w > 0.0 {
                (q.w / q.c).powf(2.0 / 3.0) * q.a.cbrt()
            } else {
                0.0
            }
        })
        .collect();
    let cost: f64 = qs.iter().zip(&raw).map(|(q, r)| q.c * r).sum();
    let sizes = raw.iter().map(|r| problem.budget * r / cost).collect();
    Ok(build(qs, problem.budget, sizes))
}

/// Wave-level allocation: identical to [`allocate`] with waves as units and
/// `A` the scalarized wave covariance.
pub fn allocate_waves(waves: &[QuestionSpec], budget: f64) -> Result<Allocation> {
    allocate(&AllocationProblem::new(waves.to_vec(), budget))
}

/// Serializes `Vec<(String, T)>` as a JSON object, keeping entry order.
pub mod ordered_map {
    use std::fmt;
    use std::marker::PhantomData;

    use serde::de::{MapAccess, Visitor};
    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, T: Serialize>(v: &[(String, T)], s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(v.len()))?;
        for (k, x) in v {
            m.serialize_entry(k, x)?;
        }
        m.end()
    }

    struct V<T>(PhantomData<T>);

    impl<'de, T: Deserialize<'de>> Visitor<'de> for V<T> {
        type Value = Vec<(String, T)>;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut a: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some((k, v)) = a.next_entry()? {
                out.push((k, v));
            }
            Ok(out)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Deserialize<'de>>(
        d: D,
    ) -> Result<Vec<(String, T)>, D::Error> {
        d.deserialize_map(V(PhantomData))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer, T: Serialize>(
            v: &Option<Vec<(String, T)>>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>, T: Deserialize<'de>>(
            d: D,
        ) -> Result<Option<Vec<(String, T)>>, D::Error> {
            #[derive(Deserialize)]
            #[serde(bound = "T: Deserialize<'de>")]
            struct W<T>(#[serde(with = "super")] Vec<(String, T)>);
            Ok(Option::<W<T>>::deserialize(d)?.map(|w| w.0))
        }
    }
}
