//! Downlink channel: large-scale loss, Rayleigh fading, mobility and the
//! conversion of per-subcarrier SNR into achievable rate.
//!
//! Every user owns an independent RNG stream, so rows of the rate matrix do
//! not depend on the order in which users are updated.

use std::f64::consts::{LN_10, PI};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the SNR gap `Γ` enters the SNR expression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMode {
    /// `η = Γ·g·P/N`.
    #[default]
    Multiply,
    /// `η = g·P/(N·Γ)`, the usual SNR-gap reading.
    Divide,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// `log2(1 + η)·Δf`.
    #[default]
    ShannonGap,
    /// Largest table efficiency whose threshold is met, times `Δf`.
    McsTable,
}

/// One modulation-and-coding row: spectral efficiency and the linear SNR at
/// which it becomes usable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub efficiency_bps_hz: f64,
    pub snr_threshold: f64,
}

/// Modulation orders (bits per symbol) of QPSK, 16QAM, 32QAM and 64QAM.
pub const DEFAULT_MODULATION_BITS: [u32; 4] = [2, 4, 5, 6];
pub const DEFAULT_CODE_RATES: [f64; 4] = [1.0 / 2.0, 2.0 / 3.0, 3.0 / 4.0, 7.0 / 8.0];

#[derive(Clone, Debug, PartialEq)]
pub struct McsTable {
    /// Sorted by ascending threshold; efficiencies are non-decreasing too.
    entries: Vec<McsEntry>,
}

impl McsTable {
    pub fn new(mut entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("channel.mcs_table", "must contain at least one row"));
        }
        for e in &entries {
            if !(e.efficiency_bps_hz.is_finite() && e.efficiency_bps_hz > 0.0) {
                return Err(Error::config(
                    "channel.mcs_table",
                    "efficiencies must be finite and positive",
                ));
            }
            if !(e.snr_threshold.is_finite() && e.snr_threshold >= 0.0) {
                return Err(Error::config(
                    "channel.mcs_table",
                    "SNR thresholds must be finite and non-negative",
                ));
            }
        }
        entries.sort_by(|a, b| {
            a.snr_threshold
                .total_cmp(&b.snr_threshold)
                .then(a.efficiency_bps_hz.total_cmp(&b.efficiency_bps_hz))
        });
        // A row that needs more SNR but delivers less is never chosen.
        let mut kept: Vec<McsEntry> = Vec::with_capacity(entries.len());
        for e in entries {
            if kept.last().is_none_or(|l| e.efficiency_bps_hz > l.efficiency_bps_hz) {
                kept.push(e);
            }
        }
        Ok(McsTable { entries: kept })
    }

    /// Every modulation/coding combination, with the threshold placed where
    /// the gap-Shannon efficiency `log2(1 + η)` reaches the MCS efficiency.
    pub fn from_gap_formula(modulation_bits: &[u32], code_rates: &[f64]) -> Result<Self> {
        let mut rows = Vec::new();
        for &m in modulation_bits {
            for &r in code_rates {
                let eff = m as f64 * r;
                rows.push(McsEntry {
                    efficiency_bps_hz: eff,
                    snr_threshold: eff.exp2() - 1.0,
                });
            }
        }
        McsTable::new(rows)
    }

    pub fn default_table() -> Self {
        McsTable::from_gap_formula(&DEFAULT_MODULATION_BITS, &DEFAULT_CODE_RATES)
            .expect("built-in MCS table is valid")
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    /// Spectral efficiency usable at linear SNR `eta`; zero below every threshold.
    pub fn efficiency(&self, eta: f64) -> f64 {
        let idx = self.entries.partition_point(|e| e.snr_threshold <= eta);
        if idx == 0 {
            0.0
        } else {
            self.entries[idx - 1].efficiency_bps_hz
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub num_subcarriers: usize,
    /// Total base-station transmit power, spread evenly over all subcarriers.
    pub tx_power_dbm: f64,
    /// Thermal noise over the whole band.
    pub noise_power_dbm: f64,
    pub ber_target: f64,
    pub path_loss_ref_db: f64,
    pub path_loss_exponent_coeff: f64,
    /// Fixed loss added to every link on top of the path-loss law.
    pub extra_loss_db: f64,
    pub shadowing_sigma_db: f64,
    /// Distance a user must travel before its shadowing is re-drawn.
    pub shadowing_decorrelation_m: f64,
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
    pub mean_speed_mps: f64,
    pub speed_std_mps: f64,
    /// Mean time between random heading changes.
    pub mean_heading_epoch_s: f64,
    /// Slot-to-slot Gauss-Markov correlation of the complex fading gains;
    /// zero draws independent gains every slot.
    pub fading_correlation: f64,
    pub gap_mode: GapMode,
    pub rate_mode: RateMode,
    /// Rows for `rate_mode = "mcs-table"`; the built-in table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcs_table: Option<Vec<McsEntry>>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            bandwidth_hz: 1.024e6,
            num_subcarriers: 256,
            tx_power_dbm: 43.0,
            noise_power_dbm: -108.0,
            ber_target: 1e-4,
            path_loss_ref_db: 38.4,
            path_loss_exponent_coeff: 20.0,
            extra_loss_db: DEFAULT_EXTRA_LOSS_DB,
            shadowing_sigma_db: 8.0,
            shadowing_decorrelation_m: 50.0,
            cell_radius_m: 1000.0,
            min_distance_m: 10.0,
            mean_speed_mps: 20.0,
            speed_std_mps: 2.24,
            mean_heading_epoch_s: 10.0,
            fading_correlation: 0.0,
            gap_mode: GapMode::Multiply,
            rate_mode: RateMode::ShannonGap,
            mcs_table: None,
        }
    }
}

/// Default additional link loss. With the bare path-loss law the cell has
/// roughly ten times the capacity the streaming sweep needs to congest; this
/// places the capacity knee inside the 4..20 streaming-user sweep.
pub const DEFAULT_EXTRA_LOSS_DB: f64 = 50.0;

fn db_to_linear(db: f64) -> f64 {
    (db * LN_10 / 10.0).exp()
}

fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("channel.{name}"), "must be finite and positive"))
            }
        };
        positive(self.bandwidth_hz, "bandwidth_hz")?;
        if self.num_subcarriers == 0 {
            return Err(Error::config("channel.num_subcarriers", "must be at least 1"));
        }
        if !(self.ber_target > 0.0 && self.ber_target < 0.2) {
            return Err(Error::config("channel.ber_target", "must lie in (0, 0.2)"));
        }
        positive(self.cell_radius_m, "cell_radius_m")?;
        positive(self.min_distance_m, "min_distance_m")?;
        if self.min_distance_m >= self.cell_radius_m {
            return Err(Error::config("channel.min_distance_m", "must be below cell_radius_m"));
        }
        for (v, name) in [
            (self.tx_power_dbm, "tx_power_dbm"),
            (self.noise_power_dbm, "noise_power_dbm"),
            (self.path_loss_ref_db, "path_loss_ref_db"),
            (self.path_loss_exponent_coeff, "path_loss_exponent_coeff"),
            (self.extra_loss_db, "extra_loss_db"),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("channel.{name}"), "must be finite"));
            }
        }
        for (v, name) in [
            (self.shadowing_sigma_db, "shadowing_sigma_db"),
            (self.shadowing_decorrelation_m, "shadowing_decorrelation_m"),
            (self.mean_speed_mps, "mean_speed_mps"),
            (self.speed_std_mps, "speed_std_mps"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("channel.{name}"), "must be finite and non-negative"));
            }
        }
        positive(self.mean_heading_epoch_s, "mean_heading_epoch_s")?;
        if !(0.0..1.0).contains(&self.fading_correlation) {
            return Err(Error::config("channel.fading_correlation", "must lie in [0, 1)"));
        }
        self.rate_model()?;
        Ok(())
    }

    /// Subcarrier spacing `Δf = W / K`.
    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.bandwidth_hz / self.num_subcarriers as f64
    }

    pub fn tx_power_per_subcarrier_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm) / self.num_subcarriers as f64
    }

    pub fn noise_per_subcarrier_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm) / self.num_subcarriers as f64
    }

    pub fn gamma(&self) -> Result<f64> {
        gap_factor(self.ber_target)
    }

    pub fn rate_model(&self) -> Result<RateModel> {
        match self.rate_mode {
            RateMode::ShannonGap => Ok(RateModel::ShannonGap),
            RateMode::McsTable => {
                let table = match &self.mcs_table {
                    Some(rows) => McsTable::new(rows.clone())?,
                    None => McsTable::default_table(),
                };
                Ok(RateModel::Mcs(table))
            }
        }
    }

    /// Path loss in dB at distance `distance_m`, clamped below at `min_distance_m`.
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        self.path_loss_ref_db
            + self.path_loss_exponent_coeff * distance_m.max(self.min_distance_m).log10()
    }
}

/// SNR gap `Γ = −ln(5·BER)/1.5`.
pub fn gap_factor(ber_target: f64) -> Result<f64> {
    if !(ber_target > 0.0 && 5.0 * ber_target < 1.0) {
        return Err(Error::Domain(format!(
            "BER target {ber_target} gives a non-positive SNR gap (need 0 < BER < 0.2)"
        )));
    }
    Ok(-(5.0 * ber_target).ln() / 1.5)
}

pub fn subcarrier_snr(
    gain_power: f64,
    tx_power_per_sc: f64,
    noise_per_sc: f64,
    gamma: f64,
    gap_mode: GapMode,
) -> f64 {
    match gap_mode {
        GapMode::Multiply => gamma * gain_power * tx_power_per_sc / noise_per_sc,
        GapMode::Divide => gain_power * tx_power_per_sc / noise_per_sc / gamma,
    }
}

/// Resolved rate mapping, built once per simulation.
#[derive(Clone, Debug, PartialEq)]
pub enum RateModel {
    ShannonGap,
    Mcs(McsTable),
}

impl RateModel {
    #[inline]
    pub fn rate(&self, eta: f64, delta_f_hz: f64) -> f64 {
        match self {
            RateModel::ShannonGap => (1.0 + eta).log2() * delta_f_hz,
            RateModel::Mcs(table) => table.efficiency(eta) * delta_f_hz,
        }
    }
}

/// Achievable rate of one subcarrier at SNR `eta`.
pub fn rate_from_snr(
    eta: f64,
    delta_f_hz: f64,
    rate_mode: RateMode,
    mcs_table: Option<&McsTable>,
) -> Result<f64> {
    if !(eta >= 0.0 && delta_f_hz > 0.0) {
        return Err(Error::Domain(format!(
            "rate needs eta >= 0 and delta_f > 0 (got {eta}, {delta_f_hz})"
        )));
    }
    match rate_mode {
        RateMode::ShannonGap => Ok(RateModel::ShannonGap.rate(eta, delta_f_hz)),
        RateMode::McsTable => {
            let table = mcs_table
                .ok_or_else(|| Error::config("channel.mcs_table", "is required in mcs-table mode"))?;
            Ok(table.efficiency(eta) * delta_f_hz)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserChannelState {
    /// Position relative to the base station.
    pub position_m: [f64; 2],
    pub speed_mps: f64,
    pub heading_rad: f64,
    pub path_loss_db: f64,
    pub shadowing_db: f64,
    /// `|H_ik|²` of the small-scale fading, unit mean.
    pub fading_gains: Vec<f64>,
    /// Complex fading gains; only kept when slots are correlated.
    fading_iq: Vec<[f64; 2]>,
    /// Where the current shadowing value was drawn.
    shadow_anchor_m: [f64; 2],
}

fn draw_speed<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    if params.speed_std_mps == 0.0 {
        return params.mean_speed_mps;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = params.mean_speed_mps + params.speed_std_mps * z;
        if v >= 0.0 {
            return v;
        }
    }
}

fn draw_shadowing<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    params.shadowing_sigma_db * z
}

fn draw_complex_gain<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    [re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2]
}

impl UserChannelState {
    /// Drops a user uniformly (by area) in the annulus between the minimum
    /// distance and the cell edge.
    pub fn spawn<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> Self {
        let (r_min, r_max) = (params.min_distance_m, params.cell_radius_m);
        let u: f64 = rng.random();
        let radius = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
        let angle = rng.random::<f64>() * 2.0 * PI;
        let position_m = [radius * angle.cos(), radius * angle.sin()];
        Self::at_position(position_m, params, rng)
    }

    pub fn at_position<R: Rng + ?Sized>(position_m: [f64; 2], params: &ChannelParams, rng: &mut R) -> Self {
        let heading_rad = rng.random::<f64>() * 2.0 * PI;
        let speed_mps = draw_speed(params, rng);
        let shadowing_db = draw_shadowing(params, rng);
        let k = params.num_subcarriers;
        let mut state = UserChannelState {
            position_m,
            speed_mps,
            heading_rad,
            path_loss_db: params.path_loss_db(norm(position_m)),
            shadowing_db,
            fading_gains: vec![0.0; k],
            fading_iq: Vec::new(),
            shadow_anchor_m: position_m,
        };
        if params.fading_correlation > 0.0 {
            state.fading_iq = (0..k).map(|_| draw_complex_gain(rng)).collect();
            for (g, h) in state.fading_gains.iter_mut().zip(&state.fading_iq) {
                *g = h[0] * h[0] + h[1] * h[1];
            }
        } else {
            for g in state.fading_gains.iter_mut() {
                *g = rng.sample(Exp1);
            }
        }
        state
    }

    pub fn distance_m(&self) -> f64 {
        norm(self.position_m)
    }

    /// Linear large-scale gain (path loss, shadowing and the fixed extra loss).
    pub fn large_scale_gain(&self, params: &ChannelParams) -> f64 {
        db_to_linear(-(self.path_loss_db + self.shadowing_db + params.extra_loss_db))
    }
}

fn norm(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

/// Advances one user's channel by `slot_dt` seconds: mobility with
/// reflection at the cell edge, path loss, distance-triggered shadowing and
/// a fresh fading realization.
pub fn update_user_channel<R: Rng + ?Sized>(
    state: &mut UserChannelState,
    params: &ChannelParams,
    slot_dt: f64,
    rng: &mut R,
) {
    if slot_dt > 0.0 {
        let p_turn = -(-slot_dt / params.mean_heading_epoch_s).exp_m1();
        if rng.random::<f64>() < p_turn {
            state.heading_rad = rng.random::<f64>() * 2.0 * PI;
            state.speed_mps = draw_speed(params, rng);
        }
        let step = state.speed_mps * slot_dt;
        let mut pos = [
            state.position_m[0] + step * state.heading_rad.cos(),
            state.position_m[1] + step * state.heading_rad.sin(),
        ];
        let r = norm(pos);
        if r > params.cell_radius_m {
            // Mirror the overshoot back inside and pick a new inward heading.
            let reflected = (2.0 * params.cell_radius_m - r).max(0.0);
            let scale = reflected / r;
            pos = [pos[0] * scale, pos[1] * scale];
            let mut heading = rng.random::<f64>() * 2.0 * PI;
            if heading.cos() * pos[0] + heading.sin() * pos[1] > 0.0 {
                heading += PI;
            }
            state.heading_rad = heading.rem_euclid(2.0 * PI);
            state.speed_mps = draw_speed(params, rng);
        }
        state.position_m = pos;
    }

    state.path_loss_db = params.path_loss_db(state.distance_m());

    let moved = norm([
        state.position_m[0] - state.shadow_anchor_m[0],
        state.position_m[1] - state.shadow_anchor_m[1],
    ]);
    if moved >= params.shadowing_decorrelation_m {
        state.shadowing_db = draw_shadowing(params, rng);
        state.shadow_anchor_m = state.position_m;
    }

    let rho = params.fading_correlation;
    if rho > 0.0 {
        if state.fading_iq.len() != state.fading_gains.len() {
            state.fading_iq = (0..state.fading_gains.len()).map(|_| draw_complex_gain(rng)).collect();
        } else {
            let innov = (1.0 - rho * rho).sqrt();
            for h in state.fading_iq.iter_mut() {
                let w = draw_complex_gain(rng);
                h[0] = rho * h[0] + innov * w[0];
                h[1] = rho * h[1] + innov * w[1];
            }
        }
        for (g, h) in state.fading_gains.iter_mut().zip(&state.fading_iq) {
            *g = h[0] * h[0] + h[1] * h[1];
        }
    } else {
        for g in state.fading_gains.iter_mut() {
            *g = rng.sample(Exp1);
        }
    }
}

/// Per-slot achievable rates, row-major `users × subcarriers`, in bit/s.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    num_users: usize,
    num_subcarriers: usize,
    rates_bps: Vec<f64>,
    pub slot_index: u64,
}

impl RateMatrix {
    pub fn zeros(num_users: usize, num_subcarriers: usize) -> Self {
        RateMatrix {
            num_users,
            num_subcarriers,
            rates_bps: vec![0.0; num_users * num_subcarriers],
            slot_index: 0,
        }
    }

    /// Builds a matrix from explicit rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Domain("rate matrix rows differ in length".into()));
        }
        if rows.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Domain("rates must be finite and non-negative".into()));
        }
        Ok(RateMatrix {
            num_users: rows.len(),
            num_subcarriers: k,
            rates_bps: rows.iter().flatten().copied().collect(),
            slot_index: 0,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    #[inline]
    pub fn rate(&self, user: usize, subcarrier: usize) -> f64 {
        self.rates_bps[user * self.num_subcarriers + subcarrier]
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.rates_bps[user * self.num_subcarriers..(user + 1) * self.num_subcarriers]
    }

    pub fn row_mut(&mut self, user: usize) -> &mut [f64] {
        let k = self.num_subcarriers;
        &mut self.rates_bps[user * k..(user + 1) * k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rates_bps
    }
}

/// Precomputed per-simulation constants of the SNR-to-rate chain.
#[derive(Clone, Debug)]
pub struct LinkBudget {
    /// Multiplies the total linear channel gain to give `η`.
    snr_per_unit_gain: f64,
    delta_f_hz: f64,
    model: RateModel,
}

impl LinkBudget {
    pub fn new(params: &ChannelParams) -> Result<Self> {
        let gamma = params.gamma()?;
        Ok(LinkBudget {
            snr_per_unit_gain: subcarrier_snr(
                1.0,
                params.tx_power_per_subcarrier_w(),
                params.noise_per_subcarrier_w(),
                gamma,
                params.gap_mode,
            ),
            delta_f_hz: params.subcarrier_spacing_hz(),
            model: params.rate_model()?,
        })
    }

    /// Writes one user's row of rates.
    pub fn fill_row(&self, user: &UserChannelState, params: &ChannelParams, row: &mut [f64]) {
        let scale = self.snr_per_unit_gain * user.large_scale_gain(params);
        match &self.model {
            RateModel::ShannonGap => {
                for (r, g) in row.iter_mut().zip(&user.fading_gains) {
                    *r = (1.0 + scale * g).log2() * self.delta_f_hz;
                }
            }
            model => {
                for (r, g) in row.iter_mut().zip(&user.fading_gains) {
                    *r = model.rate(scale * g, self.delta_f_hz);
                }
            }
        }
    }

    pub fn fill(&self, users: &[UserChannelState], params: &ChannelParams, matrix: &mut RateMatrix) {
        debug_assert_eq!(matrix.num_users(), users.len());
        for (i, u) in users.iter().enumerate() {
            self.fill_row(u, params, matrix.row_mut(i));
        }
    }
}

/// Rate matrix for the current channel states, with the transmit power
/// spread evenly over the band.
pub fn build_rate_matrix(users: &[UserChannelState], params: &ChannelParams) -> Result<RateMatrix> {
    if users.is_empty() {
        return Err(Error::Domain("rate matrix needs at least one user".into()));
    }
    if let Some(u) = users.iter().find(|u| u.fading_gains.len() != params.num_subcarriers) {
        return Err(Error::Domain(format!(
            "user has {} fading gains but the band has {} subcarriers",
            u.fading_gains.len(),
            params.num_subcarriers
        )));
    }
    let budget = LinkBudget::new(params)?;
    let mut m = RateMatrix::zeros(users.len(), params.num_subcarriers);
    budget.fill(users, params, &mut m);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn gap_factor_values() {
        assert!(gap_factor(0.2).is_err());
        assert!(gap_factor(0.0).is_err());
        assert!((gap_factor(1e-4).unwrap() - 5.0673).abs() < 1e-4);
        assert!((gap_factor(1e-2).unwrap() - 1.9972).abs() < 1e-4);
        // just inside the boundary the gap approaches zero from above
        assert!(gap_factor(0.199_999).unwrap() > 0.0);
    }

    #[test]
    fn snr_modes() {
        assert_eq!(subcarrier_snr(1.0, 1.0, 1.0, 1.0, GapMode::Multiply), 1.0);
        assert_eq!(subcarrier_snr(1.0, 1.0, 1.0, 1.0, GapMode::Divide), 1.0);
        assert_eq!(subcarrier_snr(0.0, 3.0, 1.0, 5.0, GapMode::Multiply), 0.0);
        assert_eq!(subcarrier_snr(4.0, 1.0, 1.0, 2.0, GapMode::Multiply), 8.0);
        assert_eq!(subcarrier_snr(4.0, 1.0, 1.0, 2.0, GapMode::Divide), 2.0);
    }

    #[test]
    fn shannon_rates() {
        let r = |eta| rate_from_snr(eta, 4000.0, RateMode::ShannonGap, None).unwrap();
        assert_eq!(r(0.0), 0.0);
        assert_eq!(r(1.0), 4000.0);
        assert_eq!(r(3.0), 8000.0);
        assert!(rate_from_snr(-1.0, 4000.0, RateMode::ShannonGap, None).is_err());
    }

    #[test]
    fn mcs_table_lookup() {
        assert!(McsTable::new(vec![]).is_err());
        assert!(rate_from_snr(1.0, 4000.0, RateMode::McsTable, None).is_err());

        let t = McsTable::default_table();
        // QPSK 1/2 is the lowest row: 1 bit/s/Hz at threshold 1.
        assert_eq!(t.entries()[0].efficiency_bps_hz, 1.0);
        assert_eq!(t.efficiency(0.99), 0.0);
        assert_eq!(t.efficiency(1.0), 1.0);
        assert_eq!(t.efficiency(1e9), 5.25);
        let r = rate_from_snr(3.0, 4000.0, RateMode::McsTable, Some(&t)).unwrap();
        // log2(4) = 2 reaches 16QAM 1/2 exactly.
        assert_eq!(r, 8000.0);
        // efficiencies are monotone in the threshold
        assert!(t.entries().windows(2).all(|w| w[0].efficiency_bps_hz < w[1].efficiency_bps_hz));
    }

    #[test]
    fn path_loss_law() {
        let p = ChannelParams::default();
        assert!((p.path_loss_db(1000.0) - 98.4).abs() < 1e-12);
        // 1 m is below the 10 m guard distance
        assert!((p.path_loss_db(1.0) - 58.4).abs() < 1e-12);
        let unguarded = ChannelParams { min_distance_m: 1.0, ..p };
        assert!((unguarded.path_loss_db(1.0) - 38.4).abs() < 1e-12);
    }

    #[test]
    fn zero_time_step_keeps_position() {
        let p = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = UserChannelState::spawn(&p, &mut rng);
        let before = s.position_m;
        update_user_channel(&mut s, &p, 0.0, &mut rng);
        assert_eq!(s.position_m, before);
    }

    #[test]
    fn users_stay_inside_the_cell() {
        let p = ChannelParams {
            num_subcarriers: 4,
            cell_radius_m: 100.0,
            ..ChannelParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = UserChannelState::spawn(&p, &mut rng);
        for _ in 0..50_000 {
            update_user_channel(&mut s, &p, 0.01, &mut rng);
            assert!(s.distance_m() <= p.cell_radius_m + 1e-9);
            assert!(s.fading_gains.iter().all(|g| *g >= 0.0));
        }
    }

    #[test]
    fn rate_matrix_edge_cases() {
        let p = ChannelParams {
            num_subcarriers: 8,
            ..ChannelParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut u = UserChannelState::spawn(&p, &mut rng);

        u.fading_gains.iter_mut().for_each(|g| *g = 0.0);
        let m = build_rate_matrix(std::slice::from_ref(&u), &p).unwrap();
        assert!(m.as_slice().iter().all(|r| *r == 0.0));

        u.fading_gains.iter_mut().for_each(|g| *g = 0.7);
        let m = build_rate_matrix(std::slice::from_ref(&u), &p).unwrap();
        assert!(m.row(0).iter().all(|r| *r == m.rate(0, 0) && *r > 0.0));

        assert!(build_rate_matrix(&[], &p).is_err());
    }

    #[test]
    fn rate_matrix_matches_scalar_chain() {
        for gap_mode in [GapMode::Multiply, GapMode::Divide] {
            let p = ChannelParams {
                num_subcarriers: 16,
                gap_mode,
                ..ChannelParams::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let users: Vec<_> = (0..3).map(|_| UserChannelState::spawn(&p, &mut rng)).collect();
            let m = build_rate_matrix(&users, &p).unwrap();
            for (i, u) in users.iter().enumerate() {
                for k in [0, 7, 15] {
                    // hand-composed: dBm -> W, dB -> linear, gap, Shannon
                    let p_sc = 10f64.powf((43.0 - 30.0) / 10.0) / 16.0;
                    let n_sc = 10f64.powf((-108.0 - 30.0) / 10.0) / 16.0;
                    let loss_db = 38.4 + 20.0 * u.distance_m().max(10.0).log10() + u.shadowing_db + p.extra_loss_db;
                    let g = 10f64.powf(-loss_db / 10.0) * u.fading_gains[k];
                    let gamma = -(5.0f64 * 1e-4).ln() / 1.5;
                    let eta = match gap_mode {
                        GapMode::Multiply => gamma * g * p_sc / n_sc,
                        GapMode::Divide => g * p_sc / n_sc / gamma,
                    };
                    let expect = (1.0 + eta).ln() / std::f64::consts::LN_2 * (1.024e6 / 16.0);
                    assert!(close(m.rate(i, k), expect, 1e-9), "{} vs {}", m.rate(i, k), expect);
                }
            }
        }
    }

    #[test]
    fn rate_matrix_is_reproducible() {
        let p = ChannelParams {
            num_subcarriers: 32,
            ..ChannelParams::default()
        };
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(2024);
            let mut users: Vec<_> = (0..4).map(|_| UserChannelState::spawn(&p, &mut rng)).collect();
            for u in users.iter_mut() {
                update_user_channel(u, &p, 0.125e-3, &mut rng);
            }
            build_rate_matrix(&users, &p).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn doubling_subcarriers_keeps_rates_finite() {
        let p1 = ChannelParams {
            num_subcarriers: 64,
            ..ChannelParams::default()
        };
        let p2 = ChannelParams {
            num_subcarriers: 128,
            ..p1.clone()
        };
        assert_eq!(p2.subcarrier_spacing_hz() * 2.0, p1.subcarrier_spacing_hz());
        assert_eq!(p2.tx_power_per_subcarrier_w() * 2.0, p1.tx_power_per_subcarrier_w());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut u1 = UserChannelState::spawn(&p1, &mut rng);
        u1.fading_gains.iter_mut().for_each(|g| *g = 1.0);
        let mut u2 = u1.clone();
        u2.fading_gains = vec![1.0; 128];
        let s1: f64 = build_rate_matrix(&[u1], &p1).unwrap().row(0).iter().sum();
        let s2: f64 = build_rate_matrix(&[u2], &p2).unwrap().row(0).iter().sum();
        // Per-subcarrier SNR is unchanged (power and noise both split by K), so
        // with flat fading the band total is the same.
        assert!(s1.is_finite() && s2.is_finite());
        assert!(close(s1, s2, 1e-12));
    }

    #[test]
    fn correlated_fading_keeps_unit_mean() {
        let p = ChannelParams {
            num_subcarriers: 64,
            fading_correlation: 0.9,
            ..ChannelParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut u = UserChannelState::spawn(&p, &mut rng);
        let mut sum = 0.0;
        let n = 4000;
        for _ in 0..n {
            update_user_channel(&mut u, &p, 0.0, &mut rng);
            sum += u.fading_gains.iter().sum::<f64>();
        }
        let mean = sum / (n * 64) as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = ChannelParams::default();
        assert!(ok.validate().is_ok());
        let bad = ChannelParams { num_subcarriers: 0, ..ok.clone() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "channel.num_subcarriers"));
        let bad = ChannelParams { ber_target: 0.3, ..ok.clone() };
        assert!(bad.validate().is_err());
        let bad = ChannelParams { bandwidth_hz: -1.0, ..ok };
        assert!(bad.validate().is_err());
    }
}
