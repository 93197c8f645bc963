//! Traffic sources and per-user packet queues.
//!
//! Three session types are modelled: VoIP (exponential ON/OFF with constant
//! bit rate while ON), video streaming (exponentially long states whose rate
//! is drawn from a truncated exponential) and full-buffer best effort.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Voip,
    Str,
    Be,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 3] = [TrafficClass::Voip, TrafficClass::Str, TrafficClass::Be];

    pub fn is_qos(self) -> bool {
        !matches!(self, TrafficClass::Be)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Voip => "voip",
            TrafficClass::Str => "str",
            TrafficClass::Be => "be",
        }
    }
}

/// Delay requirements of a real-time class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QosParams {
    /// Packet lifetime `T_max`; also the deadline offset when expiry is on.
    pub lifetime_s: f64,
    /// Largest acceptable drop probability `P_D^max`.
    pub max_drop_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoipParams {
    pub rate_bps: f64,
    pub mean_on_s: f64,
    pub mean_off_s: f64,
    pub packet_bits: f64,
    pub lifetime_s: f64,
    pub max_drop_prob: f64,
}

impl Default for VoipParams {
    fn default() -> Self {
        VoipParams {
            rate_bps: 32_000.0,
            mean_on_s: 1.0,
            mean_off_s: 1.5,
            packet_bits: 320.0,
            lifetime_s: 0.08,
            max_drop_prob: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrParams {
    pub mean_state_s: f64,
    pub rate_min_bps: f64,
    pub rate_max_bps: f64,
    pub rate_mean_bps: f64,
    pub packet_bits: f64,
    pub lifetime_s: f64,
    pub max_drop_prob: f64,
}

impl Default for StrParams {
    fn default() -> Self {
        StrParams {
            mean_state_s: 0.160,
            rate_min_bps: 64_000.0,
            rate_max_bps: 256_000.0,
            rate_mean_bps: 180_000.0,
            packet_bits: 1280.0,
            lifetime_s: 1.0,
            max_drop_prob: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeParams {
    pub packet_bits: f64,
    /// The queue is topped up to at least this many bits every slot.
    pub backlog_bits: f64,
}

impl Default for BeParams {
    fn default() -> Self {
        BeParams {
            packet_bits: 12_000.0,
            backlog_bits: 120_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    /// Discard real-time packets whose lifetime has run out.
    pub drop_expired: bool,
    pub voip: VoipParams,
    #[serde(rename = "str")]
    pub streaming: StrParams,
    pub be: BeParams,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            drop_expired: true,
            voip: VoipParams::default(),
            streaming: StrParams::default(),
            be: BeParams::default(),
        }
    }
}

impl TrafficParams {
    pub fn qos(&self, class: TrafficClass) -> Option<QosParams> {
        match class {
            TrafficClass::Voip => Some(QosParams {
                lifetime_s: self.voip.lifetime_s,
                max_drop_prob: self.voip.max_drop_prob,
            }),
            TrafficClass::Str => Some(QosParams {
                lifetime_s: self.streaming.lifetime_s,
                max_drop_prob: self.streaming.max_drop_prob,
            }),
            TrafficClass::Be => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("traffic.{field}"), "must be finite and positive"))
            }
        };
        let prob = |v: f64, field: &str| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("traffic.{field}"), "must lie in (0, 1)"))
            }
        };
        let v = &self.voip;
        positive(v.rate_bps, "voip.rate_bps")?;
        positive(v.mean_on_s, "voip.mean_on_s")?;
        positive(v.mean_off_s, "voip.mean_off_s")?;
        positive(v.packet_bits, "voip.packet_bits")?;
        positive(v.lifetime_s, "voip.lifetime_s")?;
        prob(v.max_drop_prob, "voip.max_drop_prob")?;
        let s = &self.streaming;
        positive(s.mean_state_s, "str.mean_state_s")?;
        positive(s.rate_min_bps, "str.rate_min_bps")?;
        positive(s.packet_bits, "str.packet_bits")?;
        positive(s.lifetime_s, "str.lifetime_s")?;
        prob(s.max_drop_prob, "str.max_drop_prob")?;
        if !(s.rate_max_bps > s.rate_min_bps) {
            return Err(Error::config("traffic.str.rate_max_bps", "must exceed rate_min_bps"));
        }
        if !(s.rate_mean_bps > s.rate_min_bps && s.rate_mean_bps < s.rate_max_bps) {
            return Err(Error::config(
                "traffic.str.rate_mean_bps",
                "must lie strictly between rate_min_bps and rate_max_bps",
            ));
        }
        positive(self.be.packet_bits, "be.packet_bits")?;
        positive(self.be.backlog_bits, "be.backlog_bits")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub size_bits: f64,
    pub arrival_time_s: f64,
    /// `f64::INFINITY` for packets that never expire.
    pub deadline_s: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QueueStats {
    pub arrived_packets: u64,
    pub arrived_bits: f64,
    pub departed_packets: u64,
    pub served_bits: f64,
    pub dropped_packets: u64,
    pub dropped_bits: f64,
    /// Sum of the delays of departed packets.
    pub delay_sum_s: f64,
}

/// FIFO of packets; the head may be partially transmitted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PacketQueue {
    packets: VecDeque<Packet>,
    head_remaining_bits: f64,
    /// Bits of every packet behind the head.
    tail_bits: f64,
    pub stats: QueueStats,
}

impl PacketQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, packet: Packet) {
        debug_assert!(packet.size_bits > 0.0);
        debug_assert!(self.packets.back().is_none_or(|p| p.arrival_time_s <= packet.arrival_time_s));
        self.stats.arrived_packets += 1;
        self.stats.arrived_bits += packet.size_bits;
        self.enqueue(packet);
    }

    fn enqueue(&mut self, packet: Packet) {
        if self.packets.is_empty() {
            self.head_remaining_bits = packet.size_bits;
        } else {
            self.tail_bits += packet.size_bits;
        }
        self.packets.push_back(packet);
    }

    fn pop_head(&mut self) -> Option<Packet> {
        let p = self.packets.pop_front()?;
        match self.packets.front() {
            Some(next) => {
                self.tail_bits -= next.size_bits;
                self.head_remaining_bits = next.size_bits;
            }
            None => {
                self.tail_bits = 0.0;
                self.head_remaining_bits = 0.0;
            }
        }
        Some(p)
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn head(&self) -> Option<&Packet> {
        self.packets.front()
    }

    pub fn head_remaining_bits(&self) -> f64 {
        self.head_remaining_bits
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    /// Bits still waiting, counting only the untransmitted part of the head.
    pub fn backlog_bits(&self) -> f64 {
        self.head_remaining_bits + self.tail_bits
    }

    /// Removes every packet whose deadline has passed; returns how many.
    pub fn drop_expired(&mut self, now_s: f64) -> usize {
        if !self.packets.iter().any(|p| p.deadline_s < now_s) {
            return 0;
        }
        let head_rem = self.head_remaining_bits;
        let old = std::mem::take(&mut self.packets);
        self.head_remaining_bits = 0.0;
        self.tail_bits = 0.0;
        let mut dropped = 0;
        for (j, p) in old.into_iter().enumerate() {
            let remaining = if j == 0 { head_rem } else { p.size_bits };
            if p.deadline_s < now_s {
                dropped += 1;
                self.stats.dropped_packets += 1;
                self.stats.dropped_bits += remaining;
            } else {
                let was_empty = self.packets.is_empty();
                self.enqueue(p);
                if was_empty {
                    self.head_remaining_bits = remaining;
                }
            }
        }
        dropped
    }

    /// Transmits up to `budget_bits` in FIFO order. Each packet whose last bit
    /// goes out pushes its delay `now_s − arrival` onto `delays`. Returns the
    /// number of bits actually sent.
    pub fn serve_bits(&mut self, budget_bits: f64, now_s: f64, delays: &mut Vec<f64>) -> f64 {
        let mut budget = budget_bits.max(0.0);
        let mut served = 0.0;
        while budget > 0.0 && !self.packets.is_empty() {
            if budget >= self.head_remaining_bits {
                budget -= self.head_remaining_bits;
                served += self.head_remaining_bits;
                let p = self.pop_head().expect("non-empty");
                let d = now_s - p.arrival_time_s;
                delays.push(d);
                self.stats.departed_packets += 1;
                self.stats.delay_sum_s += d;
            } else {
                self.head_remaining_bits -= budget;
                served += budget;
                budget = 0.0;
            }
        }
        self.stats.served_bits += served;
        served
    }

    /// Age of the head packet, zero when empty.
    pub fn head_of_line_delay(&self, now_s: f64) -> f64 {
        self.packets.front().map_or(0.0, |p| now_s - p.arrival_time_s)
    }

    /// `arrived − served − dropped − queued` in bits; zero up to rounding.
    pub fn conservation_error(&self) -> f64 {
        self.stats.arrived_bits - self.stats.served_bits - self.stats.dropped_bits - self.backlog_bits()
    }
}

pub fn drop_expired(queue: &mut PacketQueue, now_s: f64) -> usize {
    queue.drop_expired(now_s)
}

pub fn serve_bits(queue: &mut PacketQueue, budget_bits: f64, now_s: f64) -> (f64, Vec<f64>) {
    let mut delays = Vec::new();
    let served = queue.serve_bits(budget_bits, now_s, &mut delays);
    (served, delays)
}

pub fn head_of_line_delay(queue: &PacketQueue, now_s: f64) -> f64 {
    queue.head_of_line_delay(now_s)
}

fn exp_sample<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e * mean
}

/// Exponential density `∝ exp(−θ·x)` restricted to `[lo, hi]`. `θ` may be
/// negative (density rising towards `hi`) or zero (uniform).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedExp {
    pub lo: f64,
    pub hi: f64,
    pub theta: f64,
}

impl TruncatedExp {
    /// Mean of the truncated density.
    pub fn mean(&self) -> f64 {
        self.lo + truncated_offset_mean(self.theta, self.hi - self.lo)
    }

    /// The exponential scale `β = 1/θ` (infinite for the uniform case).
    pub fn scale(&self) -> f64 {
        1.0 / self.theta
    }

    /// Finds `θ` so that the mean equals `target_mean`.
    pub fn calibrate(lo: f64, hi: f64, target_mean: f64) -> Result<Self> {
        if !(hi > lo && target_mean > lo && target_mean < hi) {
            return Err(Error::Domain(format!(
                "truncated exponential on [{lo}, {hi}] cannot have mean {target_mean}"
            )));
        }
        let width = hi - lo;
        let target = target_mean - lo;
        // mean offset is strictly decreasing in θ, from `width` to 0
        let (mut a, mut b) = (-1.0 / width, 1.0 / width);
        while truncated_offset_mean(a, width) < target {
            a *= 2.0;
        }
        while truncated_offset_mean(b, width) > target {
            b *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if truncated_offset_mean(mid, width) > target {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(TruncatedExp {
            lo,
            hi,
            theta: 0.5 * (a + b),
        })
    }

    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let width = self.hi - self.lo;
        let u: f64 = rng.random();
        let x = if (self.theta * width).abs() < 1e-12 {
            u * width
        } else {
            -(u * (-self.theta * width).exp_m1()).ln_1p() / self.theta
        };
        self.lo + x.clamp(0.0, width)
    }
}

/// `E[X]` for `X` with density `∝ exp(−θx)` on `[0, width]`.
fn truncated_offset_mean(theta: f64, width: f64) -> f64 {
    let t = theta * width;
    if t.abs() < 1e-4 {
        width * (0.5 - t / 12.0 + t.powi(3) / 720.0)
    } else {
        1.0 / theta - width / t.exp_m1()
    }
}

/// Exponential ON/OFF voice source. While ON it emits fixed-size packets at
/// a fixed interval, the first one at the start of the talkspurt.
#[derive(Clone, Debug, PartialEq)]
pub struct VoipSource {
    pub on: bool,
    pub state_end_s: f64,
    on_start_s: f64,
    next_index: u64,
    interval_s: f64,
    packet_bits: f64,
    mean_on_s: f64,
    mean_off_s: f64,
    lifetime_s: f64,
}

impl VoipSource {
    /// Starts in the stationary ON/OFF mix.
    pub fn new<R: Rng + ?Sized>(params: &VoipParams, now_s: f64, rng: &mut R) -> Self {
        let p_on = params.mean_on_s / (params.mean_on_s + params.mean_off_s);
        let on = rng.random::<f64>() < p_on;
        let mean = if on { params.mean_on_s } else { params.mean_off_s };
        let end = now_s + exp_sample(mean, rng);
        Self::with_state(params, on, now_s, end)
    }

    /// A source forced into `on` from `now_s` until `state_end_s`.
    pub fn with_state(params: &VoipParams, on: bool, now_s: f64, state_end_s: f64) -> Self {
        VoipSource {
            on,
            state_end_s,
            on_start_s: now_s,
            next_index: 0,
            interval_s: params.packet_bits / params.rate_bps,
            packet_bits: params.packet_bits,
            mean_on_s: params.mean_on_s,
            mean_off_s: params.mean_off_s,
            lifetime_s: params.lifetime_s,
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, queue: &mut PacketQueue, now_s: f64, dt_s: f64, deadlines: bool, rng: &mut R) -> usize {
        let end = now_s + dt_s;
        let mut emitted = 0;
        loop {
            if self.on {
                loop {
                    let t = self.on_start_s + self.next_index as f64 * self.interval_s;
                    if t >= self.state_end_s || t >= end {
                        break;
                    }
                    queue.push(Packet {
                        size_bits: self.packet_bits,
                        arrival_time_s: t,
                        deadline_s: if deadlines { t + self.lifetime_s } else { f64::INFINITY },
                    });
                    self.next_index += 1;
                    emitted += 1;
                }
            }
            if self.state_end_s >= end {
                break;
            }
            let start = self.state_end_s;
            self.on = !self.on;
            let mean = if self.on { self.mean_on_s } else { self.mean_off_s };
            self.state_end_s = start + exp_sample(mean, rng);
            if self.on {
                self.on_start_s = start;
                self.next_index = 0;
            }
        }
        emitted
    }
}

/// Streaming source: piecewise-constant rate, new state every exponential
/// holding time. Bits accumulate at the current rate and a packet is emitted
/// each time a full packet's worth has been generated.
#[derive(Clone, Debug, PartialEq)]
pub struct StrSource {
    pub rate_bps: f64,
    pub state_end_s: f64,
    credit_bits: f64,
    packet_bits: f64,
    mean_state_s: f64,
    lifetime_s: f64,
    rate_dist: TruncatedExp,
}

impl StrSource {
    pub fn new<R: Rng + ?Sized>(params: &StrParams, rate_dist: TruncatedExp, now_s: f64, rng: &mut R) -> Self {
        let rate_bps = rate_dist.sample(rng);
        let state_end_s = now_s + exp_sample(params.mean_state_s, rng);
        let credit_bits = rng.random::<f64>() * params.packet_bits;
        StrSource {
            rate_bps,
            state_end_s,
            credit_bits,
            packet_bits: params.packet_bits,
            mean_state_s: params.mean_state_s,
            lifetime_s: params.lifetime_s,
            rate_dist,
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, queue: &mut PacketQueue, now_s: f64, dt_s: f64, deadlines: bool, rng: &mut R) -> usize {
        let end = now_s + dt_s;
        let mut t = now_s;
        let mut emitted = 0;
        loop {
            let seg_end = self.state_end_s.min(end);
            loop {
                let wait = ((self.packet_bits - self.credit_bits) / self.rate_bps).max(0.0);
                let tp = t + wait;
                if tp < seg_end {
                    queue.push(Packet {
                        size_bits: self.packet_bits,
                        arrival_time_s: tp,
                        deadline_s: if deadlines { tp + self.lifetime_s } else { f64::INFINITY },
                    });
                    emitted += 1;
                    self.credit_bits = 0.0;
                    t = tp;
                } else {
                    self.credit_bits += self.rate_bps * (seg_end - t);
                    t = seg_end;
                    break;
                }
            }
            if self.state_end_s >= end {
                break;
            }
            self.rate_bps = self.rate_dist.sample(rng);
            self.state_end_s += exp_sample(self.mean_state_s, rng);
        }
        emitted
    }
}

/// Full-buffer source: keeps the queue topped up.
#[derive(Clone, Debug, PartialEq)]
pub struct BeSource {
    packet_bits: f64,
    backlog_bits: f64,
}

impl BeSource {
    pub fn new(params: &BeParams) -> Self {
        BeSource {
            packet_bits: params.packet_bits,
            backlog_bits: params.backlog_bits,
        }
    }

    fn step(&mut self, queue: &mut PacketQueue, now_s: f64) -> usize {
        let mut emitted = 0;
        while queue.is_empty() || queue.backlog_bits() < self.backlog_bits {
            queue.push(Packet {
                size_bits: self.packet_bits,
                arrival_time_s: now_s,
                deadline_s: f64::INFINITY,
            });
            emitted += 1;
        }
        emitted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Voip(VoipSource),
    Str(StrSource),
    Be(BeSource),
}

impl Source {
    /// A fresh source of the given class, started at `now_s`.
    pub fn new<R: Rng + ?Sized>(class: TrafficClass, params: &TrafficParams, str_rates: TruncatedExp, now_s: f64, rng: &mut R) -> Self {
        match class {
            TrafficClass::Voip => Source::Voip(VoipSource::new(&params.voip, now_s, rng)),
            TrafficClass::Str => Source::Str(StrSource::new(&params.streaming, str_rates, now_s, rng)),
            TrafficClass::Be => Source::Be(BeSource::new(&params.be)),
        }
    }

    pub fn class(&self) -> TrafficClass {
        match self {
            Source::Voip(_) => TrafficClass::Voip,
            Source::Str(_) => TrafficClass::Str,
            Source::Be(_) => TrafficClass::Be,
        }
    }
}

/// Advances `source` over `[now_s, now_s + dt_s)`, enqueueing the packets it
/// generates with their exact arrival times. Real-time packets get a deadline
/// only when `deadlines` is set. Returns the number of packets enqueued.
pub fn step_source<R: Rng + ?Sized>(
    source: &mut Source,
    queue: &mut PacketQueue,
    now_s: f64,
    dt_s: f64,
    deadlines: bool,
    rng: &mut R,
) -> usize {
    debug_assert!(dt_s > 0.0);
    match source {
        Source::Voip(s) => s.step(queue, now_s, dt_s, deadlines, rng),
        Source::Str(s) => s.step(queue, now_s, dt_s, deadlines, rng),
        Source::Be(s) => s.step(queue, now_s),
    }
}
