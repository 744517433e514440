//! Tabular rendering of reports and the on-disk CSV and JSON-lines outputs.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::experiments::{
    run_convergence, run_correlator, run_gaps, run_oracle_compare, run_percolation,
    run_volume_convergence, ConvergenceReport, CorrelatorReport, GapReport, OracleReport,
    PercolationReport, RunInfo, VolumeReport,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Correlator(CorrelatorReport),
    Percolation(PercolationReport),
    Convergence(ConvergenceReport),
    VolumeConvergence(VolumeReport),
    OracleCompare(OracleReport),
    Gaps(GapReport),
}

/// Run the experiment selected in `cfg` (which must be validated).
pub fn run_experiment(cfg: &ExperimentConfig) -> Report {
    match cfg.experiment() {
        Experiment::Correlator => Report::Correlator(run_correlator(cfg)),
        Experiment::Percolation => Report::Percolation(run_percolation(cfg)),
        Experiment::Convergence => Report::Convergence(run_convergence(cfg)),
        Experiment::VolumeConvergence => Report::VolumeConvergence(run_volume_convergence(cfg)),
        Experiment::OracleCompare => Report::OracleCompare(run_oracle_compare(cfg)),
        Experiment::Gaps => Report::Gaps(run_gaps(cfg)),
    }
}

/// Shortest round-trip formatting, in exponent form outside `[1e-4, 1e15)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt(x: Option<f64>) -> serde_json::Value {
    x.map_or(serde_json::Value::Null, |v| json!(num(v)))
}

pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Scalar results, written as a trailing `#` comment.
    pub summary: serde_json::Value,
}

impl Report {
    pub fn info(&self) -> &RunInfo {
        match self {
            Report::Correlator(r) => &r.info,
            Report::Percolation(r) => &r.info,
            Report::Convergence(r) => &r.info,
            Report::VolumeConvergence(r) => &r.info,
            Report::OracleCompare(r) => &r.info,
            Report::Gaps(r) => &r.info,
        }
    }

    pub fn table(&self) -> Table {
        let info = self.info();
        let base = json!({
            "samples": info.samples,
            "failures": info.failures,
            "max_orth_residual": num(info.max_orth_residual),
        });
        let with = |extra: serde_json::Value| {
            let mut v = base.clone();
            if let (Some(m), Some(e)) = (v.as_object_mut(), extra.as_object()) {
                m.extend(e.clone());
            }
            v
        };
        match self {
            Report::Correlator(r) => Table {
                columns: vec!["distance", "mean", "stderr", "tail_frequency", "pairs"],
                rows: r
                    .rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.distance.to_string(),
                            num(x.mean),
                            num(x.stderr),
                            num(x.tail_frequency),
                            x.pairs.to_string(),
                        ]
                    })
                    .collect(),
                summary: with(json!({
                    "kappa": num(r.kappa),
                    "fitted_rate": num(r.fitted_rate),
                    "oracle_max_diff": num(r.oracle_max_diff),
                })),
            },
            Report::Percolation(r) => Table {
                columns: vec![
                    "scale",
                    "distance",
                    "frequency",
                    "stderr",
                    "events",
                    "pairs",
                ],
                rows: r
                    .rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.scale.to_string(),
                            x.distance.to_string(),
                            num(x.frequency),
                            num(x.stderr),
                            x.events.to_string(),
                            x.pairs.to_string(),
                        ]
                    })
                    .collect(),
                summary: base.clone(),
            },
            Report::Convergence(r) => Table {
                columns: vec![
                    "step",
                    "scale_length",
                    "median_max_offdiag",
                    "geomean_max_offdiag",
                    "predicted_bound",
                    "geomean_ratio",
                    "active_samples",
                ],
                rows: r
                    .rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.step.to_string(),
                            num(x.scale_length),
                            num(x.median_max_offdiag),
                            num(x.geomean_max_offdiag),
                            num(x.predicted_bound),
                            num(x.geomean_ratio),
                            x.active_samples.to_string(),
                        ]
                    })
                    .collect(),
                summary: with(json!({
                    "fitted_slope": opt(r.fitted_slope),
                    "reference_slope": num(r.reference_slope),
                    "nonresonant_samples": r.nonresonant_samples,
                    "first_step_violations": r.first_step_violations,
                })),
            },
            Report::VolumeConvergence(r) => Table {
                columns: vec![
                    "half_width",
                    "energy_diff_mean",
                    "energy_diff_stderr",
                    "vector_diff_mean",
                    "vector_diff_stderr",
                ],
                rows: r
                    .rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.half_width.to_string(),
                            num(x.energy_diff_mean),
                            num(x.energy_diff_stderr),
                            num(x.vector_diff_mean),
                            num(x.vector_diff_stderr),
                        ]
                    })
                    .collect(),
                summary: with(json!({
                    "energy_slope": opt(r.energy_slope),
                    "vector_slope": opt(r.vector_slope),
                })),
            },
            Report::OracleCompare(r) => Table {
                columns: vec![
                    "sample",
                    "spectrum_diff",
                    "max_residual",
                    "oracle_residual",
                    "labels_bijective",
                    "labels_at_argmax",
                    "argmax_all",
                    "block_history_empty",
                    "steps_used",
                    "cleanup_passes",
                    "orth_residual",
                    "status",
                ],
                rows: r
                    .rows
                    .iter()
                    .map(|x| {
                        vec![
                            x.sample.to_string(),
                            num(x.spectrum_diff),
                            num(x.max_residual),
                            num(x.oracle_residual),
                            x.labels_bijective.to_string(),
                            x.labels_at_argmax.to_string(),
                            x.argmax_all.to_string(),
                            x.block_history_empty.to_string(),
                            x.steps_used.to_string(),
                            x.cleanup_passes.to_string(),
                            num(x.orth_residual),
                            if x.passed() { "pass" } else { "fail" }.to_string(),
                        ]
                    })
                    .collect(),
                summary: with(json!({ "passed": r.passed })),
            },
            Report::Gaps(r) => Table {
                columns: vec!["quantity", "value"],
                rows: [
                    ("min", r.min),
                    ("q05", r.q05),
                    ("median", r.median),
                    ("q95", r.q95),
                    ("max", r.max),
                    ("zero_fraction", r.zero_fraction),
                ]
                .iter()
                .map(|(k, v)| vec![k.to_string(), num(*v)])
                .collect(),
                summary: base.clone(),
            },
        }
    }
}

/// Process exit code: `2` when the failed fraction exceeds the configured threshold.
pub fn exit_status(cfg: &ExperimentConfig, info: &RunInfo) -> u8 {
    if info.failure_fraction() > cfg.max_failure_fraction {
        2
    } else {
        0
    }
}

/// CSV text: config header line, column names, rows, then a summary comment line.
pub fn render_csv(cfg: &ExperimentConfig, report: &Report) -> String {
    let t = report.table();
    let mut out = format!("# {}\n", cfg.header_json());
    out.push_str(&t.columns.join(","));
    out.push('\n');
    for row in &t.rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.push_str(&format!("# summary {}\n", t.summary));
    out
}

/// One JSON object per sample.
pub fn render_traces(report: &Report) -> String {
    let mut out = String::new();
    for t in &report.info().traces {
        out.push_str(&serde_json::to_string(t).expect("traces serialize"));
        out.push('\n');
    }
    out
}

/// `report.csv` -> `report.traces.jsonl`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("traces.jsonl")
}

/// Write the CSV to `cfg.output` (or `sink` if unset) and the traces next to it.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    report: &Report,
    sink: &mut dyn Write,
) -> io::Result<()> {
    let csv = render_csv(cfg, report);
    match &cfg.output {
        Some(path) => {
            std::fs::write(path, csv)?;
            std::fs::write(sidecar_path(path), render_traces(report))
        }
        None => sink.write_all(csv.as_bytes()),
    }
}
