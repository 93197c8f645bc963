//! CSV sinks. Each file starts with a `# schema: <name>/<version>` comment
//! line followed by a header row; column order never changes within a
//! schema version.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scheduler::SchedulerKind;
use crate::sim::{RunSummary, TracePoint};

pub const SWEEP_SCHEMA: &str = "ofdma-sched/sweep/v1";
pub const LAMBDA_TRACE_SCHEMA: &str = "ofdma-sched/lambda-trace/v1";
pub const CONVERGENCE_SCHEMA: &str = "ofdma-sched/convergence/v1";

/// One scheduler at one sweep point, averaged over the runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub scheduler: SchedulerKind,
    pub runs: usize,
    pub voip_delay_s: f64,
    pub str_delay_s: f64,
    pub qos_delay_s: f64,
    pub be_throughput_bps: f64,
    pub voip_drop_rate: f64,
    pub str_drop_rate: f64,
}

impl SweepRow {
    pub fn new(sweep_value: f64, scheduler: SchedulerKind, s: &RunSummary) -> Self {
        SweepRow {
            sweep_value,
            scheduler,
            runs: s.runs,
            voip_delay_s: s.voip_delay_s,
            str_delay_s: s.str_delay_s,
            qos_delay_s: s.qos_delay_s,
            be_throughput_bps: s.be_throughput_bps,
            voip_drop_rate: s.voip_drop_rate,
            str_drop_rate: s.str_drop_rate,
        }
    }
}

const SWEEP_HEADER: [&str; 9] = [
    "sweep_value",
    "scheduler",
    "runs",
    "voip_delay_s",
    "str_delay_s",
    "qos_delay_s",
    "be_throughput_bps",
    "voip_drop_rate",
    "str_drop_rate",
];

#[derive(Serialize)]
struct TraceRow {
    d_max_s: f64,
    slot: u64,
    lambda: f64,
    lambda_normalized: f64,
    qos_ewma_delay_s: f64,
}

const TRACE_HEADER: [&str; 5] = ["d_max_s", "slot", "lambda", "lambda_normalized", "qos_ewma_delay_s"];

/// Outcome of one convergence case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub d_max_s: f64,
    /// Empty when `λ` never settled.
    pub convergence_slot: Option<u64>,
    pub final_lambda: f64,
    pub steady_ewma_delay_s: f64,
    pub voip_delay_s: f64,
    pub str_delay_s: f64,
    pub be_throughput_bps: f64,
}

const CONVERGENCE_HEADER: [&str; 7] = [
    "d_max_s",
    "convergence_slot",
    "final_lambda",
    "steady_ewma_delay_s",
    "voip_delay_s",
    "str_delay_s",
    "be_throughput_bps",
];

/// `λ` divided by its final value, so traces for different targets share a
/// scale that ends at one. A trace ending at zero is returned unchanged.
pub fn normalized_trace(trace: &[TracePoint], final_lambda: f64) -> Vec<f64> {
    let scale = if final_lambda != 0.0 { final_lambda } else { 1.0 };
    trace.iter().map(|p| p.lambda / scale).collect()
}

fn write_csv<W: Write, R: Serialize>(
    mut out: W,
    schema: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> std::result::Result<(), csv::Error> {
    writeln!(out, "# schema: {schema}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn to_file(path: &Path, f: impl FnOnce(std::fs::File) -> std::result::Result<(), csv::Error>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(file).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    to_file(path, |f| write_csv(f, SWEEP_SCHEMA, &SWEEP_HEADER, rows))
}

/// One block of rows per case: `(d_max, trace, final λ)`.
pub fn write_lambda_trace_csv(path: &Path, cases: &[(f64, &[TracePoint], f64)]) -> Result<()> {
    let rows = cases.iter().flat_map(|&(d_max_s, trace, last)| {
        trace
            .iter()
            .zip(normalized_trace(trace, last))
            .map(move |(p, n)| TraceRow {
                d_max_s,
                slot: p.slot,
                lambda: p.lambda,
                lambda_normalized: n,
                qos_ewma_delay_s: p.qos_ewma_delay_s,
            })
    });
    to_file(path, |f| write_csv(f, LAMBDA_TRACE_SCHEMA, &TRACE_HEADER, rows))
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    to_file(path, |f| write_csv(f, CONVERGENCE_SCHEMA, &CONVERGENCE_HEADER, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> RunSummary {
        RunSummary {
            runs: 2,
            voip_delay_s: 0.01,
            str_delay_s: 0.2,
            qos_delay_s: 0.1,
            voip_drop_rate: 0.0,
            str_drop_rate: 0.0,
            be_throughput_bps: 1.5e6,
            steady_ewma_delay_s: 0.1,
        }
    }

    fn lines(path: &Path) -> Vec<String> {
        std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&p, &[]).unwrap();
        assert_eq!(
            lines(&p),
            vec![format!("# schema: {SWEEP_SCHEMA}"), SWEEP_HEADER.join(",")]
        );
    }

    #[test]
    fn two_schedulers_nine_points_eighteen_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        let rows: Vec<SweepRow> = (0..9)
            .flat_map(|i| {
                [SchedulerKind::Proposed, SchedulerKind::Baseline]
                    .map(|s| SweepRow::new(4.0 + 2.0 * i as f64, s, &summary()))
            })
            .collect();
        write_sweep_csv(&p, &rows).unwrap();
        let l = lines(&p);
        assert_eq!(l.len(), 2 + 18);
        assert_eq!(l[2], "4.0,proposed,2,0.01,0.2,0.1,1500000.0,0.0,0.0");
    }

    #[test]
    fn trace_rows_are_normalized_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        let trace: Vec<TracePoint> = (0..5)
            .map(|i| TracePoint {
                slot: i * 100,
                lambda: 1.0 + i as f64,
                qos_ewma_delay_s: 0.0,
            })
            .collect();
        write_lambda_trace_csv(&p, &[(0.5, &trace, 5.0)]).unwrap();
        let l = lines(&p);
        assert_eq!(l.len(), 7);
        let slots: Vec<u64> = l[2..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(slots.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(l.last().unwrap(), "0.5,400,5.0,1.0,0.0");
    }

    #[test]
    fn missing_directory_reports_the_path() {
        let err = write_sweep_csv(Path::new("/nonexistent-dir/x.csv"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
