//! Sequential zero-delay scheme: real-time backlog first, best effort gets
//! whatever is left.

use super::allocation::{weighted_objective, Allocation, SchedulerInput};
use crate::error::{Error, Result};

/// Pass 1 visits subcarriers in descending order of their best real-time
/// weighted rate `A_i·r_ik` and gives each to the best real-time user whose
/// queue is not yet covered this slot. Pass 2 hands the rest to the
/// best-effort user with the highest raw rate.
///
/// Subcarriers nobody can use (no best-effort users and every real-time user
/// covered) go to the best weighted real-time user so the allocation stays a
/// partition. The reported objective weights best-effort users with zero.
pub fn schedule_slot_baseline(input: &SchedulerInput<'_>, priorities: &[f64]) -> Result<Allocation> {
    input.validate()?;
    let rates = input.rates;
    let k_total = rates.num_subcarriers();
    let qos: Vec<usize> = (0..input.users.len())
        .filter(|&i| input.users[i].is_qos && input.users[i].backlog_bits > 0.0)
        .collect();
    let be: Vec<usize> = (0..input.users.len()).filter(|&i| !input.users[i].is_qos).collect();
    if qos.is_empty() && be.is_empty() {
        return Err(Error::NoEligibleUser { subcarrier: 0 });
    }

    let best_qos = |k: usize, allow: &dyn Fn(usize) -> bool| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &i in &qos {
            if !allow(i) {
                continue;
            }
            let v = priorities[i] * rates.rate(i, k);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best
    };

    let mut owner = vec![usize::MAX; k_total];
    if !qos.is_empty() {
        let mut order: Vec<(usize, f64)> = (0..k_total)
            .map(|k| (k, best_qos(k, &|_| true).map_or(0.0, |b| b.1)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut remaining: Vec<f64> = input.users.iter().map(|u| u.backlog_bits).collect();
        let mut uncovered = qos.len();
        for &(k, _) in &order {
            if uncovered == 0 {
                break;
            }
            let Some((i, v)) = best_qos(k, &|i| remaining[i] > 0.0) else {
                break;
            };
            if v <= 0.0 {
                // nobody still waiting can use this subcarrier
                continue;
            }
            owner[k] = i;
            remaining[i] -= rates.rate(i, k) * input.slot_length_s;
            if remaining[i] <= 0.0 {
                uncovered -= 1;
            }
        }
    }

    for (k, o) in owner.iter_mut().enumerate() {
        if *o != usize::MAX {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &i in &be {
            let r = rates.rate(i, k);
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        *o = match best {
            Some((i, _)) => i,
            None => best_qos(k, &|_| true).expect("real-time users present").0,
        };
    }

    let weights: Vec<Option<f64>> = input
        .users
        .iter()
        .zip(priorities)
        .map(|(u, &a)| if u.is_qos { Some(a) } else { Some(0.0) })
        .collect();
    let objective = weighted_objective(&owner, rates, &weights);
    Ok(Allocation { owner, objective })
}
