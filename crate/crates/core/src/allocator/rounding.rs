use crate::error::{Error, Result};

use super::{weighted_mse, Allocation, QuestionSpec};

/// Largest-remainder (Hamilton) rounding.
///
/// Each entry gets its floor; the `total_seats - Σ floor` leftover seats go
/// to the largest fractional remainders, ties broken toward the lower index.
pub fn largest_remainder_round(values: &[f64], total_seats: u64) -> Result<Vec<u64>> {
    for (i, &v) in values.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("entry {i}: {v} is not a nonnegative number")));
        }
    }
    let floors: Vec<u64> = values.iter().map(|v| v.floor() as u64).collect();
    let assigned: u64 = floors.iter().sum();
    if total_seats < assigned {
        return Err(Error::invalid(format!(
            "{total_seats} seats cannot cover the {assigned} already assigned by flooring"
        )));
    }
    let leftover = (total_seats - assigned) as usize;
    if leftover > values.len() {
        return Err(Error::invalid(format!(
            "{total_seats} seats exceed the continuous total by more than one per entry"
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps ascending index among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = values[a] - values[a].floor();
        let rb = values[b] - values[b].floor();
        rb.total_cmp(&ra)
    });
    let mut out = floors;
    for &i in &order[..leftover] {
        out[i] += 1;
    }
    Ok(out)
}

/// Attaches an integer allocation to `alloc`.
///
/// Under uniform costs the seat total is `floor(B / c)` and largest-remainder
/// rounding is exact. Under heterogeneous costs every size is floored and
/// leftover budget buys one extra respondent per question in order of
/// descending remainder, skipping any that no longer fit; the realized cost
/// never exceeds the budget.
pub fn round_allocation(alloc: &mut Allocation, questions: &[QuestionSpec]) -> Result<()> {
    let sizes = alloc.sizes();
    let budget = alloc.budget;
    let uniform = questions.windows(2).all(|w| w[0].c == w[1].c);
    let seats = if uniform {
        let c = questions[0].c;
        let total = (budget / c + 1e-9).floor() as u64;
        largest_remainder_round(&sizes, total)?
    } else {
        let mut seats: Vec<u64> = sizes.iter().map(|n| (n + 1e-9).floor() as u64).collect();
        let mut spent: f64 = seats.iter().zip(questions).map(|(&n, q)| n as f64 * q.c).sum();
        let mut order: Vec<usize> = (0..sizes.len()).filter(|&i| questions[i].w > 0.0).collect();
        order.sort_by(|&a, &b| {
            let ra = sizes[a] - seats[a] as f64;
            let rb = sizes[b] - seats[b] as f64;
            rb.total_cmp(&ra)
        });
        for i in order {
            if spent + questions[i].c <= budget * (1.0 + 1e-12) {
                seats[i] += 1;
                spent += questions[i].c;
            }
        }
        seats
    };
    let realized: f64 = seats.iter().zip(questions).map(|(&n, q)| n as f64 * q.c).sum();
    let as_f: Vec<f64> = seats.iter().map(|&n| n as f64).collect();
    alloc.integer_objective = Some(weighted_mse(questions, &as_f));
    alloc.realized_cost = Some(realized);
    alloc.integer = Some(questions.iter().map(|q| q.id.clone()).zip(seats).collect());
    Ok(())
}
