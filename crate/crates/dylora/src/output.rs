//! Report writers. Everything here is a pure function of its inputs: no
//! timestamps, no host details, fixed key order.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use dylora_core::bench::{Check, EvalReport};
use dylora_core::{StepCounters, TraceRecord};

use crate::error::{CliError, Result};

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `step,b,loss`; `b` is empty for steps that visited every rank.
pub fn trace_csv(trace: &[TraceRecord]) -> Vec<u8> {
    csv_bytes(
        &["step", "b", "loss"],
        trace.iter().map(|t| {
            vec![
                t.step.to_string(),
                t.rank.map(|b| b.to_string()).unwrap_or_default(),
                t.loss.to_string(),
            ]
        }),
    )
}

/// `rank,arm,seed,metric`, one row per evaluation.
pub fn report_csv(rows: impl Iterator<Item = (usize, String, u64, f64)>) -> Vec<u8> {
    csv_bytes(
        &["rank", "arm", "seed", "metric"],
        rows.map(|(rank, arm, seed, metric)| {
            vec![rank.to_string(), arm, seed.to_string(), metric.to_string()]
        }),
    )
}

pub fn sweep_rows(report: &EvalReport) -> impl Iterator<Item = (usize, String, u64, f64)> + '_ {
    report
        .rows
        .iter()
        .map(|r| (r.rank, r.arm.clone(), r.seed, r.metric))
}

pub fn counters_json(c: &StepCounters) -> Value {
    json!({
        "steps_run": c.steps_run,
        "truncated_passes": c.truncated_passes,
        "param_scalar_updates": c.param_scalar_updates,
    })
}

pub fn checks_json(checks: &[Check]) -> Value {
    checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "hard": c.hard,
                "outcome": c.outcome.name(),
                "detail": c.detail,
            })
        })
        .collect()
}

/// Per-arm, per-rank summary statistics of a sweep.
pub fn summary_json(report: &EvalReport) -> Value {
    report
        .arms
        .iter()
        .map(|a| {
            json!({
                "arm": a.name,
                "failure": a.failure,
                "counters": a.counters.iter().map(counters_json).collect::<Vec<_>>(),
                "ranks": a.stats.iter().map(|s| json!({
                    "rank": s.rank,
                    "mean": s.mean,
                    "stddev": s.stddev,
                    "median": s.median,
                })).collect::<Vec<_>>(),
            })
        })
        .collect()
}

pub fn manifest_bytes(manifest: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(manifest).expect("json serializes");
    out.push(b'\n');
    out
}

/// Writes every `(name, bytes)` pair under `dir`, creating it first.
pub fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_leaves_rank_blank_when_absent() {
        let t = [
            TraceRecord {
                step: 1,
                rank: Some(3),
                loss: 0.5,
            },
            TraceRecord {
                step: 2,
                rank: None,
                loss: 0.25,
            },
        ];
        assert_eq!(
            String::from_utf8(trace_csv(&t)).unwrap(),
            "step,b,loss\n1,3,0.5\n2,,0.25\n"
        );
    }

    #[test]
    fn report_header_is_fixed() {
        let out = report_csv(std::iter::once((2, "dylora".to_string(), 7, 0.125)));
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "rank,arm,seed,metric\n2,dylora,7,0.125\n"
        );
    }

    #[test]
    fn floats_round_trip_through_text() {
        let x = 0.1f64 + 0.2;
        let out = String::from_utf8(report_csv(std::iter::once((1, "a".into(), 1, x)))).unwrap();
        let field = out.lines().nth(1).unwrap().rsplit(',').next().unwrap();
        assert_eq!(field.parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
