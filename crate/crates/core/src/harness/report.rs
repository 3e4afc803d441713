use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, OutputFormat, OutputSpec};
use super::experiment::{run_trials_detailed, ExperimentResult};
use super::HarnessError;
use crate::families::FamilyKind;

/// A config, its hash and the result it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
}

impl Report {
    pub fn new(config: ExperimentConfig, result: ExperimentResult) -> Self {
        Self {
            config_hash: config_hash(&config),
            config,
            result,
        }
    }
}

/// First 16 hex digits of SHA-256 over the config's JSON, ignoring where the
/// report is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.output = OutputSpec::default();
    let json = serde_json::to_vec(&cfg).expect("configs serialize");
    Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// `(metric, value)` for every scalar in the result; nested fields are joined with dots.
pub fn metric_rows(result: &ExperimentResult) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    flatten_json("", &serde_json::to_value(result).expect("results serialize"), &mut rows);
    rows
}

fn flatten_json(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, v, out);
            }
        }
        Value::Null => {}
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Long-format CSV: a header, then one `config_hash,metric,value` row per metric.
pub fn write_csv<W: Write>(mut w: W, report: &Report) -> std::io::Result<()> {
    writeln!(w, "config_hash,metric,value")?;
    for (metric, value) in metric_rows(&report.result) {
        writeln!(w, "{},{metric},{value}", report.config_hash)?;
    }
    w.flush()
}

/// Writes to `path`, or stdout when it is `None`.
pub fn emit_report(report: &Report, format: OutputFormat, path: Option<&Path>) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    match format {
        OutputFormat::Csv => write_csv(&mut buf, report).expect("writing to memory"),
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut buf, report)?;
            buf.push(b'\n');
        }
    }
    write_output(&buf, path)
}

pub fn write_output(buf: &[u8], path: Option<&Path>) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, buf).map_err(|e| HarnessError::io(p.display().to_string(), e)),
        None => std::io::stdout()
            .lock()
            .write_all(buf)
            .map_err(|e| HarnessError::io("<stdout>", e)),
    }
}

pub fn parse_json_report(text: &str) -> Result<Report, HarnessError> {
    Ok(serde_json::from_str(text)?)
}

/// Cartesian grid of domain sizes and distances; empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub ns: Vec<usize>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

/// One plot-ready row per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_hash: String,
    pub n: usize,
    pub epsilon: f64,
    pub c1: f64,
    pub s: usize,
    pub trials: u64,
    pub accept_rate: f64,
    pub reject_rate: f64,
    pub ci_radius: f64,
    pub mean_statistic: f64,
    pub mean_threshold: f64,
    pub oracle_expectation: Option<f64>,
    pub mean_samples_per_trial: f64,
    pub max_per_source: u64,
    pub master_seed: u64,
}

/// Runs `base` at every grid point. The tester's `ε` follows the grid, and so
/// does the family's unless the family is a completeness family.
pub fn run_sweep(
    base: &ExperimentConfig,
    grid: &SweepGrid,
    threads: Option<usize>,
) -> Result<Vec<SweepRow>, HarnessError> {
    let ns = if grid.ns.is_empty() {
        vec![base.family.n]
    } else {
        grid.ns.clone()
    };
    let eps = if grid.epsilons.is_empty() {
        vec![base.epsilon]
    } else {
        grid.epsilons.clone()
    };
    let mut rows = Vec::with_capacity(ns.len() * eps.len());
    for &n in &ns {
        for &e in &eps {
            let mut cfg = base.clone();
            cfg.family.n = n;
            cfg.epsilon = e;
            if cfg.family.kind != FamilyKind::Uniform {
                cfg.family.epsilon = e;
            }
            let (r, _) = run_trials_detailed(&cfg, threads)?;
            rows.push(SweepRow {
                config_hash: config_hash(&cfg),
                n,
                epsilon: e,
                c1: cfg.c1,
                s: r.s,
                trials: r.trials,
                accept_rate: r.accept_rate,
                reject_rate: r.reject_rate,
                ci_radius: r.ci_radius,
                mean_statistic: r.mean_statistic,
                mean_threshold: r.mean_threshold,
                oracle_expectation: r.oracle_expectation,
                mean_samples_per_trial: r.samples.mean_per_trial,
                max_per_source: r.samples.max_per_source,
                master_seed: r.master_seed,
            });
        }
    }
    Ok(rows)
}

/// Wide CSV with a header and one row per grid point.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| HarnessError::io("<csv>", e.into()))?;
    }
    wtr.flush().map_err(|e| HarnessError::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilySpec;
    use crate::harness::{run_trials, TesterKind};

    fn small() -> ExperimentConfig {
        ExperimentConfig::new(
            TesterKind::Uniformity,
            FamilySpec::new(FamilyKind::Uniform, 50, 0),
            0.5,
            20,
            3,
        )
    }

    #[test]
    fn csv_rows_carry_metric_and_value() {
        let cfg = small();
        let mut result = run_trials(&cfg).unwrap();
        result.accept_rate = 0.9;
        let report = Report::new(cfg, result);
        let mut buf = Vec::new();
        write_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .lines()
            .any(|l| l == format!("{},accept_rate,0.9", report.config_hash)));
        assert!(text.lines().any(|l| l.ends_with(",master_seed,3")));
        assert!(text.lines().any(|l| l.contains(",samples.max_per_source,")));
    }

    #[test]
    fn json_round_trip() {
        let cfg = small();
        let report = Report::new(cfg.clone(), run_trials(&cfg).unwrap());
        let text = serde_json::to_string(&report).unwrap();
        assert_eq!(parse_json_report(&text).unwrap(), report);
    }

    #[test]
    fn hash_ignores_output_and_tracks_seed() {
        let a = small();
        let mut b = a.clone();
        b.output.format = OutputFormat::Json;
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 16);
        b.master_seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn sweep_has_one_row_per_point() {
        let grid = SweepGrid {
            ns: vec![30, 60],
            epsilons: vec![0.5, 1.0],
        };
        let rows = run_sweep(&small(), &grid, Some(1)).unwrap();
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("config_hash,n,epsilon,"));
    }
}
