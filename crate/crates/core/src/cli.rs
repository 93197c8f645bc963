//! Experiment runners behind the `ofdma-sched` binary.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3
//! verification failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::RateMatrix;
use crate::error::{Error, Result};
use crate::io::{self, ConvergenceRow, ExperimentSpec, LoadedConfig, SweepRow};
use crate::scheduler::{allocate_given_lambda, check_theorem1, weighted_objective, SchedulerInput, SchedulerKind, UserDemand};
use crate::sim::{run_replications, run_simulation, RunSummary, SimConfig};
use crate::traffic::TruncatedExp;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ofdma-sched", version, about = "OFDMA downlink scheduling simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the base random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `experiment.out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the number of slots per run.
    #[arg(long, global = true)]
    pub slots: Option<u64>,
    /// Override the number of runs averaged per point.
    #[arg(long, global = true)]
    pub runs: Option<u32>,
    /// Also render SVG plots next to the CSV files.
    #[arg(long, global = true)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and print averaged metrics.
    Run {
        /// Scheduler to run instead of the configured one.
        #[arg(long)]
        scheduler: Option<SchedulerKind>,
    },
    /// Sweep a parameter for every scheduler and write `sweep.csv`.
    Sweep,
    /// One proposed-scheme run per delay target; writes the normalized
    /// `λ` trace and the detected convergence slots.
    Converge {
        /// Delay targets in seconds (overrides `experiment.d_max_values`).
        #[arg(long = "d-max", value_delimiter = ',')]
        d_max: Vec<f64>,
    },
    /// Check the allocator against exhaustive enumeration and the
    /// per-subcarrier optimality conditions on random instances.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: u32,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=4))]
        max_users: u32,
        #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..=6))]
        max_subcarriers: u32,
    },
    /// Solve for the streaming-rate distribution parameter.
    Calibrate,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    if let Command::Verify {
        trials,
        max_users,
        max_subcarriers,
    } = cli.command
    {
        return Ok(cmd_verify(trials, max_users as usize, max_subcarriers as usize, g.seed.unwrap_or(1)));
    }
    let mut loaded = load(g)?;
    match &cli.command {
        Command::Run { scheduler } => {
            if let Some(s) = scheduler {
                loaded.sim_config_mut().sim.scheduler = *s;
            }
            cmd_run(loaded, g.out.as_deref())
        }
        Command::Sweep => {
            let mut spec = loaded.into_experiment();
            if let Some(out) = &g.out {
                spec.experiment.out_dir = out.clone();
            }
            spec.validate()?;
            cmd_sweep(&spec, g.plots)
        }
        Command::Converge { d_max } => {
            let mut spec = loaded.into_experiment();
            if let Some(out) = &g.out {
                spec.experiment.out_dir = out.clone();
            }
            if !d_max.is_empty() {
                spec.experiment.d_max_values = d_max.clone();
            }
            cmd_converge(&spec, g.plots)
        }
        Command::Calibrate => cmd_calibrate(loaded.sim_config()),
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

fn load(g: &GlobalArgs) -> Result<LoadedConfig> {
    let mut loaded = match &g.config {
        Some(path) => io::load_config(path)?,
        None => LoadedConfig::Sim(SimConfig::default()),
    };
    let c = loaded.sim_config_mut();
    if let Some(seed) = g.seed {
        c.sim.seed = seed;
    }
    if let Some(slots) = g.slots {
        c.sim.num_slots = slots;
        // keep the warm-up a fixed share when the run is shortened
        c.sim.warmup_slots = c.sim.warmup_slots.min(slots / 20);
    }
    if let Some(runs) = g.runs {
        c.sim.num_runs = runs;
    }
    loaded.validate()?;
    Ok(loaded)
}

fn cmd_run(loaded: LoadedConfig, out: Option<&Path>) -> Result<i32> {
    let config = loaded.sim_config();
    let runs = run_replications(config)?;
    let s = RunSummary::mean(&runs);
    println!("scheduler            {}", config.sim.scheduler.name());
    println!("users (voip/str/be)  {}/{}/{}", config.users.voip, config.users.streaming, config.users.be);
    println!("runs                 {}", s.runs);
    println!("voip delay (s)       {:.6}", s.voip_delay_s);
    println!("str delay (s)        {:.6}", s.str_delay_s);
    println!("qos delay (s)        {:.6}", s.qos_delay_s);
    println!("voip drop rate       {:.6}", s.voip_drop_rate);
    println!("str drop rate        {:.6}", s.str_drop_rate);
    println!("be throughput (bps)  {:.1}", s.be_throughput_bps);
    if config.sim.scheduler == SchedulerKind::Proposed {
        println!("steady ewma (s)      {:.6}", s.steady_ewma_delay_s);
    }
    if let Some(dir) = out {
        io::ensure_dir(dir)?;
        io::write_resolved_config(&loaded, dir)?;
        let rows = [SweepRow::new(0.0, config.sim.scheduler, &s)];
        io::write_sweep_csv(&dir.join("run.csv"), &rows)?;
    }
    Ok(EXIT_OK)
}

/// First sweep value whose real-time delay exceeds `d_max·(1+ε)`.
pub fn turning_point(rows: &[SweepRow], scheduler: SchedulerKind, threshold_s: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.scheduler == scheduler)
        .find(|r| r.qos_delay_s > threshold_s)
        .map(|r| r.sweep_value)
}

/// Runs every scheduler at every sweep value.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &value in &spec.experiment.values {
        for &scheduler in &spec.experiment.schedulers {
            let config = spec.config_at(value, scheduler)?;
            let summary = RunSummary::mean(&run_replications(&config)?);
            eprintln!(
                "{}={value} {}: qos delay {:.4} s, be throughput {:.0} bit/s",
                spec.experiment.variable.name(),
                scheduler.name(),
                summary.qos_delay_s,
                summary.be_throughput_bps
            );
            rows.push(SweepRow::new(value, scheduler, &summary));
        }
    }
    Ok(rows)
}

fn cmd_sweep(spec: &ExperimentSpec, plots: bool) -> Result<i32> {
    let dir = &spec.experiment.out_dir;
    io::ensure_dir(dir)?;
    io::write_resolved_config(&LoadedConfig::Experiment(spec.clone()), dir)?;
    let rows = run_sweep(spec)?;
    let path = dir.join("sweep.csv");
    io::write_sweep_csv(&path, &rows)?;
    if plots {
        io::plot_sweep(dir, spec.experiment.variable.name(), &rows)?;
    }
    let c = &spec.base.controller;
    let threshold = c.d_max_s * (1.0 + c.epsilon);
    for &s in &spec.experiment.schedulers {
        match turning_point(&rows, s, threshold) {
            Some(v) => println!("turning point ({}): {} = {v}", s.name(), spec.experiment.variable.name()),
            None => println!("turning point ({}): none in sweep", s.name()),
        }
    }
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_converge(spec: &ExperimentSpec, plots: bool) -> Result<i32> {
    let dir = &spec.experiment.out_dir;
    if spec.experiment.d_max_values.is_empty() {
        return Err(Error::config("experiment.d_max_values", "must not be empty"));
    }
    let mut results = Vec::new();
    for &d_max in &spec.experiment.d_max_values {
        let mut config = spec.base.clone();
        config.controller.d_max_s = d_max;
        config.sim.scheduler = SchedulerKind::Proposed;
        let m = run_simulation(&config, 0)?;
        let slot = m.convergence_slot.map_or("none".to_string(), |s| s.to_string());
        println!(
            "d_max {d_max} s: convergence slot {slot}, steady ewma {:.4} s, final lambda {:.6e}",
            m.steady_ewma_delay_s,
            m.final_lambda.unwrap_or(0.0)
        );
        results.push((d_max, m));
    }
    io::ensure_dir(dir)?;
    io::write_resolved_config(&LoadedConfig::Experiment(spec.clone()), dir)?;
    let cases: Vec<(f64, &[crate::sim::TracePoint], f64)> = results
        .iter()
        .map(|(d, m)| (*d, m.lambda_trace.as_slice(), m.final_lambda.unwrap_or(0.0)))
        .collect();
    io::write_lambda_trace_csv(&dir.join("lambda-trace.csv"), &cases)?;
    let rows: Vec<ConvergenceRow> = results
        .iter()
        .map(|(d, m)| ConvergenceRow {
            d_max_s: *d,
            convergence_slot: m.convergence_slot,
            final_lambda: m.final_lambda.unwrap_or(0.0),
            steady_ewma_delay_s: m.steady_ewma_delay_s,
            voip_delay_s: m.voip_delay_s(),
            str_delay_s: m.str_delay_s(),
            be_throughput_bps: m.be_throughput_bps,
        })
        .collect();
    io::write_convergence_csv(&dir.join("convergence.csv"), &rows)?;
    if plots {
        io::plot_lambda_traces(dir, &cases)?;
    }
    Ok(EXIT_OK)
}

fn cmd_calibrate(config: &SimConfig) -> Result<i32> {
    let s = &config.traffic.streaming;
    let d = TruncatedExp::calibrate(s.rate_min_bps, s.rate_max_bps, s.rate_mean_bps)?;
    println!("support        [{}, {}] bit/s", d.lo, d.hi);
    println!("target mean    {} bit/s", s.rate_mean_bps);
    println!("theta          {:.9e} s/bit", d.theta);
    println!("beta = 1/theta {:.6e} bit/s", d.scale());
    println!("achieved mean  {:.6} bit/s", d.mean());
    Ok(EXIT_OK)
}

/// A random allocation instance: rates, user classes, priorities and `λ`.
#[derive(Clone, Debug)]
pub struct VerifyInstance {
    pub rates: RateMatrix,
    pub users: Vec<UserDemand>,
    pub priorities: Vec<f64>,
    pub lambda: f64,
}

impl VerifyInstance {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_users: usize, max_subcarriers: usize) -> Self {
        let n = rng.random_range(1..=max_users);
        let k = rng.random_range(1..=max_subcarriers);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(0.0..=1e6)).collect())
            .collect();
        let users: Vec<UserDemand> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    UserDemand {
                        is_qos: true,
                        mu: 1.0,
                        hol_delay_s: 0.0,
                        backlog_bits: f64::INFINITY,
                    }
                } else {
                    UserDemand::best_effort()
                }
            })
            .collect();
        // A_i ∈ (0, 10]
        let priorities = (0..n).map(|_| 10.0 - rng.random_range(0.0..10.0)).collect();
        let lambda = rng.random_range(0.0..=10.0);
        VerifyInstance {
            rates: RateMatrix::from_rows(&rows).expect("rectangular rows"),
            users,
            priorities,
            lambda,
        }
    }

    pub fn input(&self) -> SchedulerInput<'_> {
        SchedulerInput {
            rates: &self.rates,
            users: &self.users,
            slot_length_s: 1.0,
        }
    }

    /// Maximum of the weighted objective over all `N^K` owner vectors.
    pub fn enumerate_optimum(&self) -> f64 {
        let n = self.rates.num_users();
        let k = self.rates.num_subcarriers();
        let weights: Vec<Option<f64>> = self
            .users
            .iter()
            .zip(&self.priorities)
            .map(|(u, &a)| Some(if u.is_qos { a } else { self.lambda }))
            .collect();
        let mut owner = vec![0usize; k];
        let mut best = f64::NEG_INFINITY;
        loop {
            best = best.max(weighted_objective(&owner, &self.rates, &weights));
            let mut pos = 0;
            while pos < k && owner[pos] == n - 1 {
                owner[pos] = 0;
                pos += 1;
            }
            if pos == k {
                return best;
            }
            owner[pos] += 1;
        }
    }
}

/// Exit code 0 when every instance matches the enumeration optimum and
/// satisfies the optimality conditions, 3 otherwise.
pub fn cmd_verify(trials: u32, max_users: usize, max_subcarriers: usize, seed: u64) -> i32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0u32;
    for t in 0..trials {
        let inst = VerifyInstance::random(&mut rng, max_users, max_subcarriers);
        let alloc = match allocate_given_lambda(&inst.input(), &inst.priorities, inst.lambda) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("trial {t}: allocator failed: {e}\n{inst:#?}");
                failures += 1;
                continue;
            }
        };
        let optimum = inst.enumerate_optimum();
        let gap_ok = alloc.objective == optimum || (alloc.objective - optimum).abs() <= 1e-9 * optimum.abs();
        let violations = check_theorem1(&alloc, &inst.input(), &inst.priorities, inst.lambda);
        if !gap_ok || !violations.is_empty() {
            failures += 1;
            eprintln!(
                "trial {t}: objective {} vs optimum {optimum}, {} condition violations\n{inst:#?}\n{violations:#?}",
                alloc.objective,
                violations.len()
            );
        }
    }
    println!("verify: {trials} instances, {failures} failures");
    if failures == 0 {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}
