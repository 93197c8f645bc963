//! Subcarrier scheduling.
//!
//! Real-time users carry an EXP priority `A_i`; best-effort users share one
//! weight `λ`. Subcarrier `k` is worth `A_i·r_ik` to a real-time user and
//! `λ·r_ik` to a best-effort user, and since the combined objective is a sum
//! of independent per-subcarrier terms, giving each subcarrier to its largest
//! weighted rate is optimal.

mod allocation;
mod baseline;
mod lambda;
mod priority;

use serde::{Deserialize, Serialize};

pub use allocation::{
    allocate_backlog_capped, allocate_given_lambda, allocate_weighted, check_theorem1, user_weights,
    weighted_objective, Allocation, SchedulerInput, Theorem1Violation, UserDemand,
};
pub use baseline::schedule_slot_baseline;
pub use lambda::{
    ControllerParams, DelayEwma, LambdaController, OccupancyDelay, UpdateBranch, DEFAULT_DELTA_LAMBDA_RATIO, DEFAULT_UPDATE_INTERVAL_SLOTS,
};
pub use priority::{exp_priorities, exp_priority_values, mu_of, QosPriority, QosUser, EXPONENT_CLAMP};

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// λ-weighted joint allocation with the adaptive λ controller.
    #[default]
    Proposed,
    /// Real-time backlog first, leftovers to best effort.
    Baseline,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Proposed => "proposed",
            SchedulerKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(SchedulerKind::Proposed),
            "baseline" => Ok(SchedulerKind::Baseline),
            other => Err(format!("unknown scheduler `{other}` (expected proposed or baseline)")),
        }
    }
}

/// One slot of the proposed scheme: update λ (initializing it on the first
/// call or after a reset), then allocate with the fresh value.
///
/// `priorities[i]` is `A_i` for real-time users and ignored for best-effort
/// users. With `backlog_cap` a real-time user stops competing once the
/// subcarriers it already holds cover its queue.
pub fn schedule_slot_proposed(
    input: &SchedulerInput<'_>,
    priorities: &[f64],
    controller: &mut LambdaController,
    measured_delay_s: f64,
    backlog_cap: bool,
) -> Result<Allocation> {
    let qos_priorities: Vec<f64> = input
        .users
        .iter()
        .zip(priorities)
        .filter(|(u, _)| u.is_qos && u.backlog_bits > 0.0)
        .map(|(_, a)| *a)
        .collect();
    controller.step(&qos_priorities, measured_delay_s);
    let weights = user_weights(input, priorities, controller.lambda);
    if backlog_cap {
        allocate_backlog_capped(input, &weights)
    } else {
        allocate_weighted(input.rates, &weights)
    }
}
