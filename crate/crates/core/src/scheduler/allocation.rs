use crate::channel::RateMatrix;
use crate::error::{Error, Result};

/// What the scheduler knows about one user in the current slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserDemand {
    pub is_qos: bool,
    /// `μ_i` for real-time users; unused for best effort.
    pub mu: f64,
    pub hol_delay_s: f64,
    pub backlog_bits: f64,
}

impl UserDemand {
    pub fn best_effort() -> Self {
        UserDemand {
            is_qos: false,
            mu: 0.0,
            hol_delay_s: 0.0,
            backlog_bits: f64::INFINITY,
        }
    }

    /// Real-time users with nothing queued sit out the slot.
    pub fn is_eligible(&self) -> bool {
        !self.is_qos || self.backlog_bits > 0.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SchedulerInput<'a> {
    pub rates: &'a RateMatrix,
    pub users: &'a [UserDemand],
    pub slot_length_s: f64,
}

impl SchedulerInput<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.users.len() != self.rates.num_users() {
            return Err(Error::Domain(format!(
                "{} user demands for a rate matrix with {} rows",
                self.users.len(),
                self.rates.num_users()
            )));
        }
        if !(self.slot_length_s > 0.0) {
            return Err(Error::Domain("slot length must be positive".into()));
        }
        Ok(())
    }
}

/// Owner of every subcarrier plus the value of the weighted objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub owner: Vec<usize>,
    pub objective: f64,
}

impl Allocation {
    /// `D_i`: the subcarriers held by `user`, ascending.
    pub fn subcarriers_of(&self, user: usize) -> Vec<usize> {
        self.owner
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == user)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn sets(&self, num_users: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); num_users];
        for (k, &o) in self.owner.iter().enumerate() {
            sets[o].push(k);
        }
        sets
    }

    /// True when the owner vector is a partition of all subcarriers among
    /// `num_users` users. Holding one owner per slot makes the sets disjoint
    /// by construction, so only the range needs checking.
    pub fn is_partition(&self, num_users: usize, num_subcarriers: usize) -> bool {
        self.owner.len() == num_subcarriers && self.owner.iter().all(|&o| o < num_users)
    }

    /// Subcarriers held by users for which `pred` holds.
    pub fn count_where(&self, pred: impl Fn(usize) -> bool) -> usize {
        self.owner.iter().filter(|&&o| pred(o)).count()
    }
}

/// Per-user weight for this slot: `A_i` for eligible real-time users, `λ` for
/// best effort, `None` for users sitting out.
pub fn user_weights(input: &SchedulerInput<'_>, priorities: &[f64], lambda: f64) -> Vec<Option<f64>> {
    input
        .users
        .iter()
        .zip(priorities)
        .map(|(u, &a)| match (u.is_eligible(), u.is_qos) {
            (false, _) => None,
            (true, true) => Some(a),
            (true, false) => Some(lambda),
        })
        .collect()
}

/// `Σ_k w(owner_k)·r(owner_k, k)`, summed in subcarrier order.
pub fn weighted_objective(owner: &[usize], rates: &RateMatrix, weights: &[Option<f64>]) -> f64 {
    owner
        .iter()
        .enumerate()
        .map(|(k, &o)| weights[o].unwrap_or(0.0) * rates.rate(o, k))
        .sum()
}

/// Largest weighted rate on subcarrier `k` among users accepted by `allow`;
/// ties go to the lowest user id.
#[inline]
fn argmax_user(
    rates: &RateMatrix,
    weights: &[Option<f64>],
    k: usize,
    allow: impl Fn(usize) -> bool,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in weights.iter().enumerate() {
        let Some(w) = w else { continue };
        if !allow(i) {
            continue;
        }
        let v = w * rates.rate(i, k);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Gives every subcarrier to the eligible user with the greatest weighted
/// rate. This maximizes `Σ_k w(owner_k)·r(owner_k, k)` exactly.
pub fn allocate_weighted(rates: &RateMatrix, weights: &[Option<f64>]) -> Result<Allocation> {
    let k_total = rates.num_subcarriers();
    let mut owner = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let (i, _) = argmax_user(rates, weights, k, |_| true).ok_or(Error::NoEligibleUser { subcarrier: k })?;
        owner.push(i);
    }
    let objective = weighted_objective(&owner, rates, weights);
    Ok(Allocation { owner, objective })
}

/// Optimal allocation of the combined objective for a given `λ`.
pub fn allocate_given_lambda(input: &SchedulerInput<'_>, priorities: &[f64], lambda: f64) -> Result<Allocation> {
    input.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
    }
    let weights = user_weights(input, priorities, lambda);
    allocate_weighted(input.rates, &weights)
}

/// Greedy variant of [`allocate_weighted`] that stops feeding a user once
/// the subcarriers it already holds cover its backlog for this slot.
///
/// Subcarriers are visited in descending order of their best weighted rate
/// (computed once, up front). Each goes to the best user that still needs
/// bits; if every eligible user is covered it falls back to the plain argmax.
pub fn allocate_backlog_capped(input: &SchedulerInput<'_>, weights: &[Option<f64>]) -> Result<Allocation> {
    let rates = input.rates;
    let k_total = rates.num_subcarriers();
    let mut order: Vec<(usize, f64)> = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let (_, best) = argmax_user(rates, weights, k, |_| true).ok_or(Error::NoEligibleUser { subcarrier: k })?;
        order.push((k, best));
    }
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut remaining: Vec<f64> = input.users.iter().map(|u| u.backlog_bits).collect();
    let mut owner = vec![usize::MAX; k_total];
    for &(k, _) in &order {
        let pick = argmax_user(rates, weights, k, |i| remaining[i] > 0.0)
            .or_else(|| argmax_user(rates, weights, k, |_| true))
            .expect("subcarrier has an eligible user");
        owner[k] = pick.0;
        remaining[pick.0] -= rates.rate(pick.0, k) * input.slot_length_s;
    }
    let objective = weighted_objective(&owner, rates, weights);
    Ok(Allocation { owner, objective })
}

/// A subcarrier whose owner loses the cross-class comparison to a rival.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Violation {
    pub subcarrier: usize,
    pub owner: usize,
    pub rival: usize,
    /// Weighted rate of the owner and of the rival on the subcarrier.
    pub owner_value: f64,
    pub rival_value: f64,
}

/// Relative slack under which two weighted rates count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Checks the traffic-level optimality conditions on an allocation:
/// a real-time owner `k` of subcarrier `p` needs `A_k·r_kp ≥ λ·r_lp` for
/// every best-effort `l`, and a best-effort owner `m` of `q` needs
/// `λ·r_mq ≥ A_j·r_jq` for every real-time `j`. Ratios are cross-multiplied
/// so zero rates need no special casing. Users sitting out are skipped.
pub fn check_theorem1(
    alloc: &Allocation,
    input: &SchedulerInput<'_>,
    priorities: &[f64],
    lambda: f64,
) -> Vec<Theorem1Violation> {
    let weights = user_weights(input, priorities, lambda);
    let rates = input.rates;
    let mut out = Vec::new();
    for (p, &owner) in alloc.owner.iter().enumerate() {
        let owner_qos = input.users[owner].is_qos;
        let owner_value = weights[owner].unwrap_or(0.0) * rates.rate(owner, p);
        for (rival, w) in weights.iter().enumerate() {
            let Some(w) = w else { continue };
            if input.users[rival].is_qos == owner_qos {
                continue;
            }
            let rival_value = w * rates.rate(rival, p);
            if rival_value > owner_value + TIE_TOLERANCE * owner_value.abs().max(rival_value.abs()) {
                out.push(Theorem1Violation {
                    subcarrier: p,
                    owner,
                    rival,
                    owner_value,
                    rival_value,
                });
            }
        }
    }
    out
}
