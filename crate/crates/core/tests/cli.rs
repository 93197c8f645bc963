//! End-to-end checks of the `ofdma-sched` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ofdma_sched::io::{load_config, LoadedConfig, SweepVariable, CONVERGENCE_SCHEMA, LAMBDA_TRACE_SCHEMA, SWEEP_SCHEMA};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ofdma-sched"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn shipped_fig1_config_is_the_streaming_sweep() {
    let LoadedConfig::Experiment(spec) = load_config(&configs_dir().join("fig1.cfg")).unwrap() else {
        panic!("fig1.cfg should carry an experiment table");
    };
    assert_eq!(spec.experiment.variable, SweepVariable::StrUsers);
    let expected: Vec<f64> = (4..=20).step_by(2).map(f64::from).collect();
    assert_eq!(spec.experiment.values, expected);
    assert_eq!(spec.base.users.voip, 10);
    assert_eq!(spec.base.users.be, 20);
    assert_eq!(spec.base.controller.d_max_s, 0.5);
}

#[test]
fn shipped_converge_config_loads() {
    let LoadedConfig::Experiment(spec) = load_config(&configs_dir().join("converge.cfg")).unwrap() else {
        panic!("converge.cfg should carry an experiment table");
    };
    assert_eq!(spec.experiment.d_max_values, vec![0.2, 0.3, 0.5]);
    assert_eq!(spec.base.users.streaming, 8);
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["sweep", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&[])), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[sim]\nslot_length_s = -1.0\n").unwrap();
    let out = run(&["--config", bad.to_str().unwrap(), "run"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("slot_length"));

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&["--config", missing.to_str().unwrap(), "run"])), 1);
}

#[test]
fn verify_needs_no_config_and_passes() {
    let out = run(&["--seed", "3", "verify", "--trials", "300"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failures"));
}

#[test]
fn verify_rejects_instances_too_large_to_enumerate() {
    assert_eq!(code(&run(&["verify", "--max-users", "5"])), 2);
}

#[test]
fn tiny_sweep_writes_rows_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "[users]\nvoip = 2\nbe = 3\n[experiment]\nvalues = [1, 2]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--slots",
        "400",
        "--runs",
        "1",
        "sweep",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("turning point"));

    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# schema: {SWEEP_SCHEMA}"));
    assert!(lines.next().unwrap().starts_with("sweep_value,scheduler"));
    assert_eq!(lines.count(), 4);

    // the echoed configuration reloads to what was run
    let echoed = load_config(&out_dir.join("resolved-config.toml")).unwrap();
    assert_eq!(echoed.sim_config().sim.num_slots, 400);
    assert_eq!(echoed.sim_config().users.voip, 2);
}

#[test]
fn single_case_converge_writes_one_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("conv");
    let out = run(&[
        "--out",
        out_dir.to_str().unwrap(),
        "--slots",
        "2000",
        "converge",
        "--d-max",
        "0.3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(out_dir.join("lambda-trace.csv")).unwrap();
    assert!(trace.starts_with(&format!("# schema: {LAMBDA_TRACE_SCHEMA}")));
    let slots: Vec<u64> = trace
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!slots.is_empty());
    assert!(slots.windows(2).all(|w| w[0] < w[1]));
    let conv = std::fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert!(conv.starts_with(&format!("# schema: {CONVERGENCE_SCHEMA}")));
    assert_eq!(conv.lines().count(), 3);
}

#[test]
fn runs_are_reproducible_under_a_seed() {
    let args = ["--seed", "11", "--slots", "1000", "--runs", "1", "run"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn calibrate_reports_the_target_mean() {
    let out = run(&["calibrate"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("achieved mean  180000.000"), "{text}");
}

#[test]
fn plots_are_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, "[users]\nvoip = 2\nbe = 2\n[experiment]\nvalues = [1, 2]\n").unwrap();
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--slots",
        "400",
        "--runs",
        "1",
        "--plots",
        "sweep",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["sweep-delay.svg", "sweep-be-throughput.svg"] {
        let svg = std::fs::read_to_string(out_dir.join(name)).unwrap();
        assert!(svg.contains("<svg"), "{name}");
    }

    let conv_dir = dir.path().join("conv");
    let out = run(&["--out", conv_dir.to_str().unwrap(), "--slots", "1000", "--plots", "converge", "--d-max", "0.2,0.5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(conv_dir.join("lambda-trace.svg")).unwrap().contains("<svg"));
}
