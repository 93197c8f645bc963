//! EXP-rule priorities for real-time users.

use crate::error::{Error, Result};

/// Bound on the EXP exponent so priorities stay finite.
pub const EXPONENT_CLAMP: f64 = 50.0;

/// Urgency weight `μ = −ln(P_D^max) / T_max`, in 1/s.
pub fn mu_of(max_drop_prob: f64, lifetime_s: f64) -> Result<f64> {
    if !(max_drop_prob > 0.0 && max_drop_prob < 1.0) {
        return Err(Error::Domain(format!(
            "drop probability {max_drop_prob} must lie in (0, 1)"
        )));
    }
    if !(lifetime_s > 0.0 && lifetime_s.is_finite()) {
        return Err(Error::Domain(format!("lifetime {lifetime_s} must be positive")));
    }
    Ok(-max_drop_prob.ln() / lifetime_s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QosUser {
    pub user_id: usize,
    pub mu: f64,
    pub hol_delay_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QosPriority {
    pub user_id: usize,
    pub mu: f64,
    pub hol_delay_s: f64,
    pub priority: f64,
}

/// `A_i = μ_i · exp((μ_i·H_i − mean(μH)) / (1 + sqrt(mean(μH))))`, with the
/// mean taken over the users passed in.
pub fn exp_priorities(users: &[QosUser]) -> Vec<QosPriority> {
    let mu: Vec<f64> = users.iter().map(|u| u.mu).collect();
    let hol: Vec<f64> = users.iter().map(|u| u.hol_delay_s).collect();
    let mut a = vec![0.0; users.len()];
    exp_priority_values(&mu, &hol, &mut a);
    users
        .iter()
        .zip(a)
        .map(|(u, priority)| QosPriority {
            user_id: u.user_id,
            mu: u.mu,
            hol_delay_s: u.hol_delay_s,
            priority,
        })
        .collect()
}

/// Slice form of [`exp_priorities`] for the slot loop.
pub fn exp_priority_values(mu: &[f64], hol_delay_s: &[f64], out: &mut [f64]) {
    debug_assert!(mu.len() == hol_delay_s.len() && mu.len() == out.len());
    if mu.is_empty() {
        return;
    }
    let mean = mu.iter().zip(hol_delay_s).map(|(m, h)| m * h).sum::<f64>() / mu.len() as f64;
    let denom = 1.0 + mean.max(0.0).sqrt();
    for ((a, m), h) in out.iter_mut().zip(mu).zip(hol_delay_s) {
        let exponent = ((m * h - mean) / denom).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
        *a = m * exponent.exp();
    }
}
