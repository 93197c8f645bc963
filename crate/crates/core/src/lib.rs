//! Single-cell OFDMA downlink scheduling simulator.
//!
//! The crate models a base station that hands out `K` subcarriers every slot
//! to a mix of delay-sensitive (VoIP, streaming) and best-effort users. Two
//! schedulers are provided:
//!
//! * the *proposed* scheme, which gives best-effort users a common weight
//!   `lambda` that competes directly with the EXP priorities of real-time
//!   users, and adapts `lambda` slot by slot so that real-time delay sits at
//!   a target instead of at zero;
//! * the sequential *baseline*, which first serves all real-time backlog and
//!   hands the leftovers to best-effort users.
//!
//! Module map:
//!
//! * [`channel`]: path loss, shadowing, Rayleigh fading, mobility and the
//!   per-slot rate matrix.
//! * [`traffic`]: VoIP ON/OFF, streaming and full-buffer sources plus the
//!   per-user packet queues.
//! * [`scheduler`]: EXP priorities, the weighted allocation, the optimality
//!   condition checker, the `lambda` controller and the baseline.
//! * [`sim`]: the slot loop and metric aggregation.
//! * [`io`]: configuration files, CSV output and optional plots.
//! * [`cli`]: the experiment runners behind the `ofdma-sched` binary.

pub mod channel;
pub mod cli;
pub mod error;
pub mod io;
pub mod scheduler;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
