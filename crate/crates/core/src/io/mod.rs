//! Configuration files and result sinks.
//!
//! Configurations are TOML. A file holding only simulation sections loads as
//! a [`SimConfig`]; a file that also carries an `[experiment]` table loads as
//! an [`ExperimentSpec`]. Every omitted key takes its documented default and
//! the fully resolved configuration can be written back with
//! [`resolved_toml`], which re-loads to an identical value.

mod plot;
mod results;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::SchedulerKind;
use crate::sim::SimConfig;

pub use plot::{plot_lambda_traces, plot_sweep};
pub use results::{
    normalized_trace, write_convergence_csv, write_lambda_trace_csv, write_sweep_csv, ConvergenceRow, SweepRow,
    CONVERGENCE_SCHEMA, LAMBDA_TRACE_SCHEMA, SWEEP_SCHEMA,
};

/// Parameter varied across a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    StrUsers,
    VoipUsers,
    BeUsers,
    DMax,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::StrUsers => "str-users",
            SweepVariable::VoipUsers => "voip-users",
            SweepVariable::BeUsers => "be-users",
            SweepVariable::DMax => "d-max",
        }
    }

    /// Writes `value` into the matching field of `config`.
    pub fn apply(self, config: &mut SimConfig, value: f64) -> Result<()> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::config("experiment.values", format!("{value} is not a user count")))
            }
        };
        match self {
            SweepVariable::StrUsers => config.users.streaming = count()?,
            SweepVariable::VoipUsers => config.users.voip = count()?,
            SweepVariable::BeUsers => config.users.be = count()?,
            SweepVariable::DMax => config.controller.d_max_s = value,
        }
        Ok(())
    }
}

/// The `[experiment]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub variable: SweepVariable,
    /// Sorted, non-empty list of values for `variable`.
    pub values: Vec<f64>,
    pub schedulers: Vec<SchedulerKind>,
    /// Delay targets for convergence experiments.
    pub d_max_values: Vec<f64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            variable: SweepVariable::StrUsers,
            values: (4..=20).step_by(2).map(f64::from).collect(),
            schedulers: vec![SchedulerKind::Proposed, SchedulerKind::Baseline],
            d_max_values: vec![0.2, 0.3, 0.5],
            out_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    pub experiment: ExperimentParams,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let e = &self.experiment;
        if e.values.is_empty() {
            return Err(Error::config("experiment.values", "must not be empty"));
        }
        if e.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("experiment.values", "must be strictly increasing"));
        }
        if e.schedulers.is_empty() {
            return Err(Error::config("experiment.schedulers", "must not be empty"));
        }
        if e.d_max_values.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::config("experiment.d_max_values", "must be finite and positive"));
        }
        for &v in &e.values {
            let mut c = self.base.clone();
            e.variable.apply(&mut c, v)?;
            c.validate()?;
        }
        Ok(())
    }

    /// Base configuration with the sweep variable set to `value`.
    pub fn config_at(&self, value: f64, scheduler: SchedulerKind) -> Result<SimConfig> {
        let mut c = self.base.clone();
        self.experiment.variable.apply(&mut c, value)?;
        c.sim.scheduler = scheduler;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadedConfig {
    Sim(SimConfig),
    Experiment(ExperimentSpec),
}

impl LoadedConfig {
    /// Simulation settings, whichever kind of file was loaded.
    pub fn sim_config(&self) -> &SimConfig {
        match self {
            LoadedConfig::Sim(c) => c,
            LoadedConfig::Experiment(e) => &e.base,
        }
    }

    pub fn sim_config_mut(&mut self) -> &mut SimConfig {
        match self {
            LoadedConfig::Sim(c) => c,
            LoadedConfig::Experiment(e) => &mut e.base,
        }
    }

    /// The experiment description, or the defaults wrapped around a plain
    /// simulation config.
    pub fn into_experiment(self) -> ExperimentSpec {
        match self {
            LoadedConfig::Sim(base) => ExperimentSpec {
                base,
                experiment: ExperimentParams::default(),
            },
            LoadedConfig::Experiment(e) => e,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LoadedConfig::Sim(c) => c.validate(),
            LoadedConfig::Experiment(e) => e.validate(),
        }
    }
}

fn parse_error(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: err.to_string().trim_end().to_string(),
    }
}

/// On-disk layout: the simulation sections plus an optional experiment.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    sim: crate::sim::RunParams,
    users: crate::sim::UserCounts,
    channel: crate::channel::ChannelParams,
    traffic: crate::traffic::TrafficParams,
    controller: crate::scheduler::ControllerParams,
    monitor: crate::sim::MonitorParams,
    convergence: crate::sim::ConvergenceParams,
    experiment: Option<ExperimentParams>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let c = SimConfig::default();
        ConfigFile {
            sim: c.sim,
            users: c.users,
            channel: c.channel,
            traffic: c.traffic,
            controller: c.controller,
            monitor: c.monitor,
            convergence: c.convergence,
            experiment: None,
        }
    }
}

/// Parses and validates configuration text; `origin` only labels errors.
pub fn parse_config(text: &str, origin: &Path) -> Result<LoadedConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| parse_error(origin, e))?;
    let base = SimConfig {
        sim: file.sim,
        users: file.users,
        channel: file.channel,
        traffic: file.traffic,
        controller: file.controller,
        monitor: file.monitor,
        convergence: file.convergence,
    };
    let loaded = match file.experiment {
        None => LoadedConfig::Sim(base),
        Some(experiment) => LoadedConfig::Experiment(ExperimentSpec { base, experiment }),
    };
    loaded.validate()?;
    Ok(loaded)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// The configuration with every default spelled out.
pub fn resolved_toml(config: &LoadedConfig) -> Result<String> {
    let ser = |e: toml::ser::Error| Error::config("config", format!("cannot be serialized: {e}"));
    let mut table = toml::Table::try_from(config.sim_config()).map_err(ser)?;
    if let LoadedConfig::Experiment(e) = config {
        table.insert(
            "experiment".into(),
            toml::Value::Table(toml::Table::try_from(&e.experiment).map_err(ser)?),
        );
    }
    toml::to_string(&table).map_err(ser)
}

/// Writes `resolved-config.toml` into `dir` and returns its path.
pub fn write_resolved_config(config: &LoadedConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("resolved-config.toml");
    std::fs::write(&path, resolved_toml(config)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedConfig> {
        parse_config(text, Path::new("test.toml"))
    }

    #[test]
    fn user_counts_only_gets_every_default() {
        let c = parse("[users]\nvoip = 3\nstr = 4\nbe = 5\n").unwrap();
        let LoadedConfig::Sim(c) = c else { panic!("expected a plain config") };
        let mut expected = SimConfig::default();
        expected.users.voip = 3;
        expected.users.streaming = 4;
        expected.users.be = 5;
        assert_eq!(c, expected);
    }

    #[test]
    fn negative_slot_length_names_the_field() {
        let err = parse("[sim]\nslot_length_s = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field.contains("slot_length")), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = parse("[sim]\nslot_lenght_s = 1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(msg.contains("slot_lenght_s"), "{msg}");
        assert!(msg.contains("line 2") || msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn syntax_errors_are_parse_errors() {
        assert!(matches!(parse("[sim\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn experiment_table_makes_an_experiment() {
        let c = parse("[experiment]\nvalues = [2.0, 3.0]\n").unwrap();
        let LoadedConfig::Experiment(e) = c else { panic!("expected an experiment") };
        assert_eq!(e.experiment.values, vec![2.0, 3.0]);
        assert_eq!(e.base, SimConfig::default());
    }

    #[test]
    fn experiment_values_must_be_sorted_counts() {
        assert!(parse("[experiment]\nvalues = []\n").is_err());
        assert!(parse("[experiment]\nvalues = [4.0, 2.0]\n").is_err());
        assert!(parse("[experiment]\nvalues = [2.5]\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        for text in [
            "",
            "[users]\nvoip = 1\n[channel]\nrate_mode = \"mcs-table\"\n",
            "[experiment]\nvariable = \"d-max\"\nvalues = [0.1, 0.25]\n[controller]\ndelta_lambda_0 = 0.125\n",
        ] {
            let c = parse(text).unwrap();
            let echoed = resolved_toml(&c).unwrap();
            assert_eq!(parse(&echoed).unwrap(), c, "{echoed}");
        }
    }

    #[test]
    fn sweep_variable_applies() {
        let mut c = SimConfig::default();
        SweepVariable::StrUsers.apply(&mut c, 12.0).unwrap();
        SweepVariable::DMax.apply(&mut c, 0.3).unwrap();
        assert_eq!((c.users.streaming, c.controller.d_max_s), (12, 0.3));
        assert!(SweepVariable::BeUsers.apply(&mut c, -1.0).is_err());
    }
}
