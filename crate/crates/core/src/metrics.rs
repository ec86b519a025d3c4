//! Tabular per-epoch metrics.
//!
//! Files are comma-separated with a fixed header. Reals are written with ten
//! significant digits in plain decimal notation, integers verbatim.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::coevolution::{EpochReport, Mode};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "run_id,mode,epoch,mean_agent_reward,mean_p_hat,mean_difficulty,\
filtered_fraction,eval_score,agent_pool_size,env_pool_size,wall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub mode: Mode,
    pub epoch: usize,
    pub mean_agent_reward: f64,
    pub mean_p_hat: f64,
    pub mean_difficulty: f64,
    pub filtered_fraction: f64,
    pub eval_score: f64,
    pub agent_pool_size: usize,
    pub env_pool_size: usize,
    pub wall_seconds: f64,
}

/// Formats `x` with ten significant digits, without an exponent.
pub fn format_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0.000000000".to_owned() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// The value `x` takes after a write/parse cycle.
pub fn quantize(x: f64) -> f64 {
    format_real(x).parse().expect("formatted reals parse")
}

impl MetricsRow {
    pub fn from_report(run_id: &str, mode: Mode, r: &EpochReport, wall_seconds: f64) -> Self {
        MetricsRow {
            run_id: run_id.to_owned(),
            mode,
            epoch: r.epoch,
            mean_agent_reward: r.mean_agent_reward,
            mean_p_hat: r.mean_p_hat,
            mean_difficulty: r.mean_difficulty,
            filtered_fraction: r.filtered_fraction,
            eval_score: r.eval_score,
            agent_pool_size: r.agent_pool_size,
            env_pool_size: r.env_pool_size,
            wall_seconds,
        }
    }

    fn deterministic_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.mode,
            self.epoch,
            format_real(self.mean_agent_reward),
            format_real(self.mean_p_hat),
            format_real(self.mean_difficulty),
            format_real(self.filtered_fraction),
            format_real(self.eval_score),
            self.agent_pool_size,
            self.env_pool_size,
        )
    }

    pub fn to_line(&self) -> String {
        format!("{},{}", self.deterministic_fields(), format_real(self.wall_seconds))
    }

    /// Hex SHA-256 of the row without its wall-clock column.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.deterministic_fields().as_bytes()))
    }

    /// The row as it reads back from a metrics file.
    pub fn quantized(&self) -> Self {
        MetricsRow {
            mean_agent_reward: quantize(self.mean_agent_reward),
            mean_p_hat: quantize(self.mean_p_hat),
            mean_difficulty: quantize(self.mean_difficulty),
            filtered_fraction: quantize(self.filtered_fraction),
            eval_score: quantize(self.eval_score),
            wall_seconds: quantize(self.wall_seconds),
            ..self.clone()
        }
    }

    fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(format!("expected 11 columns, found {}", cols.len()));
        }
        let real = |i: usize| -> std::result::Result<f64, String> {
            let v: f64 = cols[i].parse().map_err(|e| format!("column {}: {e}", i + 1))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("column {} is not finite", i + 1))
            }
        };
        let int = |i: usize| -> std::result::Result<usize, String> {
            cols[i].parse().map_err(|e| format!("column {}: {e}", i + 1))
        };
        Ok(MetricsRow {
            run_id: cols[0].to_owned(),
            mode: cols[1].parse().map_err(|e: Error| e.to_string())?,
            epoch: int(2)?,
            mean_agent_reward: real(3)?,
            mean_p_hat: real(4)?,
            mean_difficulty: real(5)?,
            filtered_fraction: real(6)?,
            eval_score: real(7)?,
            agent_pool_size: int(8)?,
            env_pool_size: int(9)?,
            wall_seconds: real(10)?,
        })
    }
}

pub fn render_metrics(rows: &[MetricsRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("no metrics rows to export"));
    }
    let mut out = String::with_capacity(128 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        if r.run_id.contains([',', '\n']) {
            return Err(Error::invalid(format!("run id `{}` contains a delimiter", r.run_id)));
        }
        writeln!(out, "{}", r.to_line()).expect("writing to a String");
    }
    Ok(out)
}

/// Writes header plus one row per epoch.
pub fn export_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_metrics(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics(text: &str, origin: &Path) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        _ => {
            return Err(Error::Format {
                path: origin.to_owned(),
                line: 1,
                message: "missing or unexpected header".into(),
            })
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            MetricsRow::parse_line(line).map_err(|message| Error::Format {
                path: origin.to_owned(),
                line: i + 2,
                message,
            })
        })
        .collect()
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text, path)
}
