//! Slot-by-slot adaptation of the best-effort weight `λ`.
//!
//! While the measured real-time delay is under target, `λ` climbs by `Δλ`.
//! Once the delay lands in the relaxation band `(d_max, d_max·(1+ε)]`, `λ`
//! steps back by `2Δλ` and `Δλ` shrinks by `N2`. Beyond the band the
//! controller starts over from `mean(A_i)/N1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Initial `λ` is the mean real-time priority divided by `n1`.
    pub n1: u32,
    /// `Δλ` is divided by `n2` each time the delay enters the band.
    pub n2: u32,
    /// Relaxation of the delay target, in `(0, 1]`.
    pub epsilon: f64,
    /// Target real-time delay `d_max`.
    pub d_max_s: f64,
    /// Absolute initial step. When unset the step is `delta_lambda_ratio`
    /// times the initial `λ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_lambda_0: Option<f64>,
    pub delta_lambda_ratio: f64,
    /// `λ` used when no real-time user has data at initialization.
    pub fallback_lambda: f64,
    /// Slots between consecutive updates; `λ` is held in between.
    pub update_interval_slots: u32,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            n1: 10,
            n2: 2,
            epsilon: 0.2,
            d_max_s: 0.5,
            delta_lambda_0: None,
            delta_lambda_ratio: DEFAULT_DELTA_LAMBDA_RATIO,
            fallback_lambda: 1.0,
            update_interval_slots: DEFAULT_UPDATE_INTERVAL_SLOTS,
        }
    }
}

/// Default `Δλ₀ / λ_init`. With updates every quarter second a tenth of the
/// initial weight per step reaches the operating point within a few seconds
/// of simulated time.
pub const DEFAULT_DELTA_LAMBDA_RATIO: f64 = 1.0 / 10.0;

/// Default slots between updates (0.25 s at the default slot length).
/// Queueing delay answers a change of `λ` only over hundreds of
/// milliseconds; updating every slot walks `λ` far past the operating point
/// before the measurement moves.
pub const DEFAULT_UPDATE_INTERVAL_SLOTS: u32 = 2000;

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 {
            return Err(Error::config("controller.n1", "must be a positive integer"));
        }
        if self.n2 == 0 {
            return Err(Error::config("controller.n2", "must be a positive integer"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config("controller.epsilon", "must lie in (0, 1]"));
        }
        if !(self.d_max_s > 0.0 && self.d_max_s.is_finite()) {
            return Err(Error::config("controller.d_max_s", "must be finite and positive"));
        }
        if let Some(d) = self.delta_lambda_0 {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::config("controller.delta_lambda_0", "must be finite and positive"));
            }
        }
        if !(self.delta_lambda_ratio > 0.0 && self.delta_lambda_ratio.is_finite()) {
            return Err(Error::config("controller.delta_lambda_ratio", "must be finite and positive"));
        }
        if self.update_interval_slots == 0 {
            return Err(Error::config("controller.update_interval_slots", "must be at least 1"));
        }
        if !(self.fallback_lambda > 0.0 && self.fallback_lambda.is_finite()) {
            return Err(Error::config("controller.fallback_lambda", "must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateBranch {
    /// Delay under target: `λ += Δλ`.
    Increase,
    /// Delay inside the band: `λ −= 2Δλ`, then `Δλ /= N2`.
    Decrease,
    /// Delay beyond the band: re-initialize next slot.
    Reinitialize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaController {
    pub lambda: f64,
    pub delta_lambda: f64,
    params: ControllerParams,
    initialized: bool,
    /// Slots since the last update or initialization.
    idle_slots: u32,
    /// Number of (re-)initializations so far.
    pub inits: u64,
}

impl LambdaController {
    pub fn new(params: ControllerParams) -> Self {
        LambdaController {
            lambda: params.fallback_lambda,
            delta_lambda: 0.0,
            params,
            initialized: false,
            idle_slots: 0,
            inits: 0,
        }
    }

    /// A controller already initialized with the given state.
    pub fn with_state(params: ControllerParams, lambda: f64, delta_lambda: f64) -> Self {
        LambdaController {
            lambda,
            delta_lambda,
            params,
            initialized: true,
            idle_slots: 0,
            inits: 1,
        }
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// `λ = mean(A)/N1`, `Δλ = Δλ₀`. `qos_priorities` holds the priorities of
    /// real-time users that currently have data.
    pub fn init(&mut self, qos_priorities: &[f64]) {
        self.lambda = if qos_priorities.is_empty() {
            self.params.fallback_lambda
        } else {
            let mean = qos_priorities.iter().sum::<f64>() / qos_priorities.len() as f64;
            mean / self.params.n1 as f64
        };
        self.delta_lambda = self
            .params
            .delta_lambda_0
            .unwrap_or(self.params.delta_lambda_ratio * self.lambda);
        self.initialized = true;
        self.idle_slots = 0;
        self.inits += 1;
    }

    /// One pass of the updating rule against the measured delay.
    pub fn update(&mut self, measured_delay_s: f64) -> UpdateBranch {
        debug_assert!(self.initialized);
        let d_max = self.params.d_max_s;
        if measured_delay_s <= d_max {
            self.lambda += self.delta_lambda;
            UpdateBranch::Increase
        } else if measured_delay_s <= d_max * (1.0 + self.params.epsilon) {
            self.lambda = (self.lambda - 2.0 * self.delta_lambda).max(0.0);
            self.delta_lambda /= self.params.n2 as f64;
            UpdateBranch::Decrease
        } else {
            self.initialized = false;
            UpdateBranch::Reinitialize
        }
    }

    /// Start-of-slot action: initialize if needed, otherwise update once
    /// every `update_interval_slots` slots. Returns the branch taken, or
    /// `None` when the slot initialized or held `λ`.
    pub fn step(&mut self, qos_priorities: &[f64], measured_delay_s: f64) -> Option<UpdateBranch> {
        if !self.initialized {
            self.init(qos_priorities);
            return None;
        }
        self.idle_slots += 1;
        if self.idle_slots < self.params.update_interval_slots {
            return None;
        }
        self.idle_slots = 0;
        Some(self.update(measured_delay_s))
    }
}

/// Exponentially weighted moving average of packet delays, updated once per
/// departing packet and seeded at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayEwma {
    pub alpha: f64,
    pub value: f64,
    pub samples: u64,
}

impl DelayEwma {
    pub fn new(alpha: f64) -> Self {
        DelayEwma {
            alpha,
            value: 0.0,
            samples: 0,
        }
    }

    #[inline]
    pub fn record(&mut self, delay_s: f64) {
        self.value += self.alpha * (delay_s - self.value);
        self.samples += 1;
    }
}

/// Little's-law delay estimate: smoothed number of queued packets over the
/// smoothed packet arrival rate, both updated once per slot. Unlike
/// [`DelayEwma`] it keeps rising while packets wait without departing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccupancyDelay {
    /// Per-slot smoothing weight.
    pub alpha: f64,
    pub queued_packets: f64,
    pub arrival_rate_pps: f64,
}

impl OccupancyDelay {
    pub fn new(alpha: f64) -> Self {
        OccupancyDelay {
            alpha,
            queued_packets: 0.0,
            arrival_rate_pps: 0.0,
        }
    }

    /// Records one slot: packets that arrived during it and packets still
    /// queued at its end.
    #[inline]
    pub fn record_slot(&mut self, arrivals: usize, queued: usize, slot_length_s: f64) {
        self.queued_packets += self.alpha * (queued as f64 - self.queued_packets);
        self.arrival_rate_pps += self.alpha * (arrivals as f64 / slot_length_s - self.arrival_rate_pps);
    }

    pub fn value(&self) -> f64 {
        if self.arrival_rate_pps > 0.0 {
            self.queued_packets / self.arrival_rate_pps
        } else {
            0.0
        }
    }
}
