//! The slot loop.
//!
//! Every slot runs the same fixed sequence: channel update and rate matrix,
//! traffic arrivals, expiry, EXP priorities, `λ` update and allocation (or
//! the baseline), service, metrics. Arrivals come before scheduling so a
//! packet can leave in the slot it arrives; service completes at the end of
//! the slot, which is the timestamp used for delays and expiry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{update_user_channel, ChannelParams, LinkBudget, RateMatrix, UserChannelState};
use crate::error::{Error, Result};
use crate::scheduler::{
    allocate_backlog_capped, allocate_weighted, exp_priority_values, mu_of, schedule_slot_baseline, user_weights,
    Allocation, ControllerParams, DelayEwma, LambdaController, OccupancyDelay, SchedulerInput, SchedulerKind, UpdateBranch,
    UserDemand,
};
use crate::traffic::{step_source, PacketQueue, Source, TrafficClass, TrafficParams, TruncatedExp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub slot_length_s: f64,
    pub num_slots: u64,
    pub num_runs: u32,
    /// Leading slots excluded from delay and throughput averages.
    pub warmup_slots: u64,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    /// Stop offering subcarriers to real-time users whose queue is covered.
    pub backlog_cap: bool,
    /// Keep every n-th slot in the exported `λ` trace.
    pub trace_every: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            slot_length_s: 0.125e-3,
            num_slots: 200_000,
            num_runs: 10,
            warmup_slots: 10_000,
            seed: 1,
            scheduler: SchedulerKind::Proposed,
            backlog_cap: true,
            trace_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserCounts {
    pub voip: usize,
    #[serde(rename = "str")]
    pub streaming: usize,
    pub be: usize,
}

impl Default for UserCounts {
    fn default() -> Self {
        UserCounts {
            voip: 10,
            streaming: 8,
            be: 20,
        }
    }
}

impl UserCounts {
    pub fn total(&self) -> usize {
        self.voip + self.streaming + self.be
    }

    /// Class of every user id: VoIP first, then streaming, then best effort.
    pub fn classes(&self) -> Vec<TrafficClass> {
        std::iter::repeat_n(TrafficClass::Voip, self.voip)
            .chain(std::iter::repeat_n(TrafficClass::Str, self.streaming))
            .chain(std::iter::repeat_n(TrafficClass::Be, self.be))
            .collect()
    }
}

/// How the controller measures real-time delay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayEstimator {
    /// EWMA of departed-packet delays, weight `alpha` per departure.
    Departures,
    /// Smoothed queued packets over smoothed arrival rate, weight
    /// `slot_alpha` per slot; counts packets that are still waiting.
    Occupancy,
}

/// What feeds the delay measurement of the `λ` controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorParams {
    pub estimator: DelayEstimator,
    /// EWMA weight given to each departing packet.
    pub alpha: f64,
    /// Per-slot weight of the occupancy estimator. The default averages over
    /// about 1.25 s, long enough to ride out streaming rate changes and
    /// fades, short enough to catch a starving queue within one update.
    pub slot_alpha: f64,
    pub classes: Vec<TrafficClass>,
}

impl Default for MonitorParams {
    fn default() -> Self {
        MonitorParams {
            estimator: DelayEstimator::Occupancy,
            alpha: 0.01,
            slot_alpha: 1e-4,
            classes: vec![TrafficClass::Voip, TrafficClass::Str],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceParams {
    /// Relative half-width of the band around the final `λ`.
    pub band: f64,
    pub hold_slots: u64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            band: 0.1,
            hold_slots: 10_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sim: RunParams,
    pub users: UserCounts,
    pub channel: ChannelParams,
    pub traffic: TrafficParams,
    pub controller: ControllerParams,
    pub monitor: MonitorParams,
    pub convergence: ConvergenceParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if !(s.slot_length_s > 0.0 && s.slot_length_s.is_finite()) {
            return Err(Error::config("sim.slot_length_s", "must be finite and positive"));
        }
        if s.num_slots == 0 {
            return Err(Error::config("sim.num_slots", "must be at least 1"));
        }
        if s.num_runs == 0 {
            return Err(Error::config("sim.num_runs", "must be at least 1"));
        }
        if s.warmup_slots >= s.num_slots {
            return Err(Error::config("sim.warmup_slots", "must be smaller than num_slots"));
        }
        if s.trace_every == 0 {
            return Err(Error::config("sim.trace_every", "must be at least 1"));
        }
        if self.users.total() == 0 {
            return Err(Error::config("users", "at least one user is required"));
        }
        self.channel.validate()?;
        self.traffic.validate()?;
        self.controller.validate()?;
        if !(self.monitor.alpha > 0.0 && self.monitor.alpha <= 1.0) {
            return Err(Error::config("monitor.alpha", "must lie in (0, 1]"));
        }
        if !(self.monitor.slot_alpha > 0.0 && self.monitor.slot_alpha <= 1.0) {
            return Err(Error::config("monitor.slot_alpha", "must lie in (0, 1]"));
        }
        if self.monitor.classes.iter().any(|c| !c.is_qos()) {
            return Err(Error::config("monitor.classes", "may only list real-time classes"));
        }
        if !(self.convergence.band > 0.0) {
            return Err(Error::config("convergence.band", "must be positive"));
        }
        Ok(())
    }
}

struct UserSlot {
    class: TrafficClass,
    mu: f64,
    channel: UserChannelState,
    source: Source,
    queue: PacketQueue,
    rng_channel: ChaCha8Rng,
    rng_traffic: ChaCha8Rng,
}

/// Per-slot counters, indexed by [`TrafficClass::index`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotMetrics {
    pub slot_index: u64,
    /// `λ` used for this slot's allocation; `None` under the baseline.
    pub lambda: Option<f64>,
    pub branch: Option<UpdateBranch>,
    pub served_bits: [f64; 3],
    pub departures: [u64; 3],
    pub delay_sum_s: [f64; 3],
    pub drops: [u64; 3],
    pub be_subcarriers: usize,
    /// Controller delay measurement at the end of this slot.
    pub qos_ewma_delay_s: f64,
}

impl SlotMetrics {
    pub fn be_bits(&self) -> f64 {
        self.served_bits[TrafficClass::Be.index()]
    }
}

/// Complete mutable state of one run.
pub struct SimState {
    pub slot: u64,
    users: Vec<UserSlot>,
    pub controller: LambdaController,
    pub ewma: DelayEwma,
    pub occupancy: OccupancyDelay,
    estimator: DelayEstimator,
    budget: LinkBudget,
    rates: RateMatrix,
    demands: Vec<UserDemand>,
    priorities: Vec<f64>,
    mu_buf: Vec<f64>,
    hol_buf: Vec<f64>,
    a_buf: Vec<f64>,
    delays: Vec<f64>,
    monitored: [bool; 3],
    last_allocation: Option<Allocation>,
}

fn run_seed(seed: u64, run_index: u32) -> u64 {
    seed ^ (run_index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl SimState {
    /// Fresh state for replication `run_index`: new user positions, channels
    /// and traffic phases; user counts come from the config.
    pub fn new(config: &SimConfig, run_index: u32) -> Result<Self> {
        config.validate()?;
        let base = run_seed(config.sim.seed, run_index);
        let str_rates = TruncatedExp::calibrate(
            config.traffic.streaming.rate_min_bps,
            config.traffic.streaming.rate_max_bps,
            config.traffic.streaming.rate_mean_bps,
        )?;
        let classes = config.users.classes();
        let mut users = Vec::with_capacity(classes.len());
        for (id, &class) in classes.iter().enumerate() {
            let mut rng_channel = ChaCha8Rng::seed_from_u64(base);
            rng_channel.set_stream(2 * id as u64);
            let mut rng_traffic = ChaCha8Rng::seed_from_u64(base);
            rng_traffic.set_stream(2 * id as u64 + 1);
            let mu = match config.traffic.qos(class) {
                Some(q) => mu_of(q.max_drop_prob, q.lifetime_s)?,
                None => 0.0,
            };
            let channel = UserChannelState::spawn(&config.channel, &mut rng_channel);
            let source = Source::new(class, &config.traffic, str_rates, 0.0, &mut rng_traffic);
            users.push(UserSlot {
                class,
                mu,
                channel,
                source,
                queue: PacketQueue::new(),
                rng_channel,
                rng_traffic,
            });
        }
        let n = users.len();
        let mut monitored = [false; 3];
        for c in &config.monitor.classes {
            monitored[c.index()] = true;
        }
        Ok(SimState {
            slot: 0,
            users,
            controller: LambdaController::new(config.controller.clone()),
            ewma: DelayEwma::new(config.monitor.alpha),
            occupancy: OccupancyDelay::new(config.monitor.slot_alpha),
            estimator: config.monitor.estimator,
            budget: LinkBudget::new(&config.channel)?,
            rates: RateMatrix::zeros(n, config.channel.num_subcarriers),
            demands: vec![UserDemand::best_effort(); n],
            priorities: vec![0.0; n],
            mu_buf: Vec::with_capacity(n),
            hol_buf: Vec::with_capacity(n),
            a_buf: Vec::with_capacity(n),
            delays: Vec::new(),
            monitored,
            last_allocation: None,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn class_of(&self, user: usize) -> TrafficClass {
        self.users[user].class
    }

    pub fn channel(&self, user: usize) -> &UserChannelState {
        &self.users[user].channel
    }

    pub fn queue(&self, user: usize) -> &PacketQueue {
        &self.users[user].queue
    }

    pub fn rates(&self) -> &RateMatrix {
        &self.rates
    }

    pub fn last_allocation(&self) -> Option<&Allocation> {
        self.last_allocation.as_ref()
    }

    /// Real-time delay as seen by the controller.
    pub fn measured_delay(&self) -> f64 {
        match self.estimator {
            DelayEstimator::Departures => self.ewma.value,
            DelayEstimator::Occupancy => self.occupancy.value(),
        }
    }

    /// Largest `|arrived − served − dropped − queued|` over all users, in bits.
    pub fn max_conservation_error(&self) -> f64 {
        self.users
            .iter()
            .map(|u| u.queue.conservation_error().abs())
            .fold(0.0, f64::max)
    }
}

/// Advances the simulation by one slot.
pub fn run_slot(state: &mut SimState, config: &SimConfig) -> Result<SlotMetrics> {
    let dt = config.sim.slot_length_s;
    let slot = state.slot;
    let t0 = slot as f64 * dt;
    let now = t0 + dt;
    let mut m = SlotMetrics {
        slot_index: slot,
        ..SlotMetrics::default()
    };

    // channel
    for (i, u) in state.users.iter_mut().enumerate() {
        update_user_channel(&mut u.channel, &config.channel, dt, &mut u.rng_channel);
        state.budget.fill_row(&u.channel, &config.channel, state.rates.row_mut(i));
    }
    state.rates.slot_index = slot;

    // arrivals and expiry
    let drop = config.traffic.drop_expired;
    let mut monitored_arrivals = 0;
    for u in state.users.iter_mut() {
        let n = step_source(&mut u.source, &mut u.queue, t0, dt, drop, &mut u.rng_traffic);
        if state.monitored[u.class.index()] {
            monitored_arrivals += n;
        }
        if drop && u.class.is_qos() {
            m.drops[u.class.index()] += u.queue.drop_expired(now) as u64;
        }
    }

    // EXP priorities over real-time users that have data
    state.mu_buf.clear();
    state.hol_buf.clear();
    for (i, u) in state.users.iter().enumerate() {
        let backlog = u.queue.backlog_bits();
        let hol = u.queue.head_of_line_delay(now);
        state.demands[i] = if u.class.is_qos() {
            UserDemand {
                is_qos: true,
                mu: u.mu,
                hol_delay_s: hol,
                backlog_bits: backlog,
            }
        } else {
            UserDemand {
                backlog_bits: backlog,
                ..UserDemand::best_effort()
            }
        };
        if u.class.is_qos() && backlog > 0.0 {
            state.mu_buf.push(u.mu);
            state.hol_buf.push(hol);
        }
    }
    state.a_buf.clear();
    state.a_buf.resize(state.mu_buf.len(), 0.0);
    exp_priority_values(&state.mu_buf, &state.hol_buf, &mut state.a_buf);
    let mut next = 0;
    for (i, d) in state.demands.iter().enumerate() {
        state.priorities[i] = if d.is_qos && d.backlog_bits > 0.0 {
            next += 1;
            state.a_buf[next - 1]
        } else {
            0.0
        };
    }

    // allocation
    let input = SchedulerInput {
        rates: &state.rates,
        users: &state.demands,
        slot_length_s: dt,
    };
    let measured = state.measured_delay();
    let anyone_eligible = state.demands.iter().any(|d| d.is_eligible());
    let alloc = match config.sim.scheduler {
        // nobody has anything to receive; park the band on user 0
        _ if !anyone_eligible => {
            if config.sim.scheduler == SchedulerKind::Proposed {
                m.branch = state.controller.step(&state.a_buf, measured);
                m.lambda = Some(state.controller.lambda);
            }
            Allocation {
                owner: vec![0; state.rates.num_subcarriers()],
                objective: 0.0,
            }
        }
        SchedulerKind::Proposed => {
            m.branch = state.controller.step(&state.a_buf, measured);
            m.lambda = Some(state.controller.lambda);
            let weights = user_weights(&input, &state.priorities, state.controller.lambda);
            if config.sim.backlog_cap {
                allocate_backlog_capped(&input, &weights)?
            } else {
                allocate_weighted(&state.rates, &weights)?
            }
        }
        SchedulerKind::Baseline => schedule_slot_baseline(&input, &state.priorities)?,
    };

    // service
    let mut budgets = vec![0.0; state.users.len()];
    for (k, &o) in alloc.owner.iter().enumerate() {
        budgets[o] += state.rates.rate(o, k) * dt;
    }
    for (u, budget) in state.users.iter_mut().zip(budgets) {
        let c = u.class.index();
        state.delays.clear();
        m.served_bits[c] += u.queue.serve_bits(budget, now, &mut state.delays);
        m.departures[c] += state.delays.len() as u64;
        for &d in &state.delays {
            m.delay_sum_s[c] += d;
            if state.monitored[c] {
                state.ewma.record(d);
            }
        }
    }
    m.be_subcarriers = alloc.count_where(|o| !state.users[o].class.is_qos());
    let queued = state
        .users
        .iter()
        .filter(|u| state.monitored[u.class.index()])
        .map(|u| u.queue.len())
        .sum();
    state.occupancy.record_slot(monitored_arrivals, queued, dt);
    m.qos_ewma_delay_s = state.measured_delay();
    state.last_allocation = Some(alloc);
    state.slot += 1;
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub slot: u64,
    pub lambda: f64,
    pub qos_ewma_delay_s: f64,
}

/// Outcome of one run. Per-class arrays are indexed by [`TrafficClass::index`];
/// averages only cover slots after the warm-up.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub scheduler: SchedulerKind,
    pub slots: u64,
    pub measured_slots: u64,
    /// Mean delay of departed packets; zero for classes without departures.
    pub avg_delay_s: [f64; 3],
    /// Dropped packets over packets that either departed or were dropped.
    pub drop_rate: [f64; 3],
    pub departures: [u64; 3],
    pub drops: [u64; 3],
    pub served_bits: [f64; 3],
    /// Mean delay over all real-time departures.
    pub qos_delay_s: f64,
    pub be_throughput_bps: f64,
    pub final_lambda: Option<f64>,
    /// Thinned `(slot, λ, EWMA delay)` trace; proposed scheme only.
    pub lambda_trace: Vec<TracePoint>,
    pub convergence_slot: Option<u64>,
    /// Mean controller delay measurement from the convergence slot to the
    /// end of the run; over the last `hold_slots` slots when `λ` never
    /// settled (or under the baseline).
    pub steady_ewma_delay_s: f64,
    pub reinitializations: u64,
    pub max_conservation_error_bits: f64,
}

impl RunMetrics {
    pub fn voip_delay_s(&self) -> f64 {
        self.avg_delay_s[TrafficClass::Voip.index()]
    }

    pub fn str_delay_s(&self) -> f64 {
        self.avg_delay_s[TrafficClass::Str.index()]
    }
}

/// Runs replication `run_index` of `config`, handing every slot's metrics to
/// `observe` along with the state after the slot.
pub fn run_simulation_with(
    config: &SimConfig,
    run_index: u32,
    mut observe: impl FnMut(&SlotMetrics, &SimState),
) -> Result<RunMetrics> {
    let mut state = SimState::new(config, run_index)?;
    let warmup = config.sim.warmup_slots;
    let n_slots = config.sim.num_slots;
    let proposed = config.sim.scheduler == SchedulerKind::Proposed;

    let mut departures = [0u64; 3];
    let mut drops = [0u64; 3];
    let mut delay_sum = [0.0f64; 3];
    let mut served = [0.0f64; 3];
    let mut lambdas: Vec<f64> = Vec::with_capacity(if proposed { n_slots as usize } else { 0 });
    let mut ewmas: Vec<f64> = Vec::with_capacity(n_slots as usize);
    let mut trace = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut reinit = 0;

    for _ in 0..n_slots {
        let m = run_slot(&mut state, config)?;
        if m.slot_index >= warmup {
            for c in 0..3 {
                departures[c] += m.departures[c];
                drops[c] += m.drops[c];
                delay_sum[c] += m.delay_sum_s[c];
                served[c] += m.served_bits[c];
            }
        }
        if let Some(l) = m.lambda {
            lambdas.push(l);
            if m.slot_index % config.sim.trace_every == 0 {
                trace.push(TracePoint {
                    slot: m.slot_index,
                    lambda: l,
                    qos_ewma_delay_s: m.qos_ewma_delay_s,
                });
            }
        }
        if m.branch == Some(UpdateBranch::Reinitialize) {
            reinit += 1;
        }
        ewmas.push(m.qos_ewma_delay_s);
        observe(&m, &state);
        max_err = max_err.max(state.max_conservation_error());
    }

    let measured_slots = n_slots - warmup;
    let mut avg_delay_s = [0.0; 3];
    let mut drop_rate = [0.0; 3];
    for c in 0..3 {
        if departures[c] > 0 {
            avg_delay_s[c] = delay_sum[c] / departures[c] as f64;
        }
        let resolved = departures[c] + drops[c];
        if resolved > 0 {
            drop_rate[c] = drops[c] as f64 / resolved as f64;
        }
    }
    let qos_dep = departures[0] + departures[1];
    let qos_delay_s = if qos_dep > 0 {
        (delay_sum[0] + delay_sum[1]) / qos_dep as f64
    } else {
        0.0
    };
    let convergence_slot = if proposed {
        detect_convergence(&lambdas, config.convergence.band, config.convergence.hold_slots as usize).map(|i| i as u64)
    } else {
        None
    };
    let hold = (config.convergence.hold_slots as usize).min(ewmas.len());
    let steady_from = convergence_slot.map_or(ewmas.len() - hold, |c| c as usize);
    let steady = ewmas[steady_from..].iter().sum::<f64>() / (ewmas.len() - steady_from).max(1) as f64;

    Ok(RunMetrics {
        scheduler: config.sim.scheduler,
        slots: n_slots,
        measured_slots,
        avg_delay_s,
        drop_rate,
        departures,
        drops,
        served_bits: served,
        qos_delay_s,
        be_throughput_bps: served[TrafficClass::Be.index()] / (measured_slots as f64 * config.sim.slot_length_s),
        final_lambda: lambdas.last().copied(),
        lambda_trace: trace,
        convergence_slot,
        steady_ewma_delay_s: steady,
        reinitializations: reinit,
        max_conservation_error_bits: max_err,
    })
}

pub fn run_simulation(config: &SimConfig, run_index: u32) -> Result<RunMetrics> {
    run_simulation_with(config, run_index, |_, _| {})
}

/// All `num_runs` replications, in run order.
pub fn run_replications(config: &SimConfig) -> Result<Vec<RunMetrics>> {
    (0..config.sim.num_runs).map(|r| run_simulation(config, r)).collect()
}

/// Arithmetic mean of the scalar metrics over several runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub runs: usize,
    pub voip_delay_s: f64,
    pub str_delay_s: f64,
    pub qos_delay_s: f64,
    pub voip_drop_rate: f64,
    pub str_drop_rate: f64,
    pub be_throughput_bps: f64,
    pub steady_ewma_delay_s: f64,
}

impl RunSummary {
    pub fn mean(runs: &[RunMetrics]) -> Self {
        let n = runs.len().max(1) as f64;
        let avg = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        RunSummary {
            runs: runs.len(),
            voip_delay_s: avg(&|r| r.voip_delay_s()),
            str_delay_s: avg(&|r| r.str_delay_s()),
            qos_delay_s: avg(&|r| r.qos_delay_s),
            voip_drop_rate: avg(&|r| r.drop_rate[TrafficClass::Voip.index()]),
            str_drop_rate: avg(&|r| r.drop_rate[TrafficClass::Str.index()]),
            be_throughput_bps: avg(&|r| r.be_throughput_bps),
            steady_ewma_delay_s: avg(&|r| r.steady_ewma_delay_s),
        }
    }
}

/// Earliest index from which the trajectory stays within `±band·|final|` of
/// its final value through to the end, provided that tail spans at least
/// `hold_slots` entries.
pub fn detect_convergence(trajectory: &[f64], band: f64, hold_slots: usize) -> Option<usize> {
    let last = *trajectory.last()?;
    let tol = band * last.abs();
    let start = trajectory
        .iter()
        .rposition(|v| (v - last).abs() > tol)
        .map_or(0, |i| i + 1);
    (trajectory.len() - start >= hold_slots).then_some(start)
}
