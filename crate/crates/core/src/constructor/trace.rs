use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str =
    "L,scale,drawn,passing,best_margin,delta,train_rmse,test_rmse,elapsed_ms,fallback";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainStatus {
    ReachedTol,
    NodeBudget,
    Stalled,
}

impl fmt::Display for TrainStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainStatus::ReachedTol => "ReachedTol",
            TrainStatus::NodeBudget => "NodeBudget",
            TrainStatus::Stalled => "Stalled",
        })
    }
}

impl FromStr for TrainStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ReachedTol" => Ok(TrainStatus::ReachedTol),
            "NodeBudget" => Ok(TrainStatus::NodeBudget),
            "Stalled" => Ok(TrainStatus::Stalled),
            _ => Err(Error::Malformed(format!("unknown status {s:?}"))),
        }
    }
}

/// One row per installed node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Node count after this step.
    pub l: usize,
    pub scale: f64,
    pub drawn: usize,
    pub passing: usize,
    /// Summed margin of the installed candidate.
    pub best_margin: f64,
    /// Delta score of the installed candidate.
    pub delta: f64,
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
    /// Training wall time since the start of the run.
    pub elapsed_ms: f64,
    pub fallback: bool,
}

/// Per-step quantities kept in memory only.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub gamma: f64,
    /// Per-target `||e_q||^2` after the step.
    pub residual_norms_sq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub initial_rmse: f64,
    pub initial_norms_sq: Vec<f64>,
    pub records: Vec<TraceRecord>,
    /// Parallel to `records`; empty for traces read back from CSV.
    pub diagnostics: Vec<StepDiagnostics>,
    pub status: TrainStatus,
}

impl TrainTrace {
    pub fn final_rmse(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_rmse, |r| r.train_rmse)
    }

    /// First node count whose training RMSE is at or below `target`.
    pub fn nodes_to_reach(&self, target: f64) -> Option<usize> {
        if self.initial_rmse <= target {
            return Some(0);
        }
        self.records
            .iter()
            .find(|r| r.train_rmse <= target)
            .map(|r| r.l)
    }

    pub fn fallback_count(&self) -> usize {
        self.records.iter().filter(|r| r.fallback).count()
    }

    /// CSV with one row per node and a trailing `# status=` line. With
    /// `timing = false` every `elapsed_ms` is written as 0 so reruns are
    /// byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::new();
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let test = r.test_rmse.map(|v| v.to_string()).unwrap_or_default();
            let elapsed = if timing { r.elapsed_ms } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.l,
                r.scale,
                r.drawn,
                r.passing,
                r.best_margin,
                r.delta,
                r.train_rmse,
                test,
                elapsed,
                r.fallback
            );
        }
        let _ = writeln!(out, "# status={}", self.status);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, timing: bool) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(timing)).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<TrainTrace> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainTrace::parse_csv(&text)
    }

    /// Parses [`TrainTrace::to_csv`] output. The initial RMSE is not stored
    /// in the file and comes back as NaN.
    pub fn parse_csv(text: &str) -> Result<TrainTrace> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRACE_HEADER => {}
            other => {
                return Err(Error::Malformed(format!(
                    "trace header mismatch: {other:?}"
                )))
            }
        }
        let mut records = Vec::new();
        let mut status = None;
        for (i, line) in lines.enumerate() {
            let row = i + 2;
            if let Some(rest) = line.strip_prefix("# status=") {
                status = Some(rest.trim().parse()?);
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 10 {
                return Err(Error::Malformed(format!(
                    "trace row {row} has {} fields",
                    cells.len()
                )));
            }
            let bad = |c: usize| Error::Malformed(format!("trace row {row}, column {}", c + 1));
            let f = |c: usize| cells[c].parse::<f64>().map_err(|_| bad(c));
            let u = |c: usize| cells[c].parse::<usize>().map_err(|_| bad(c));
            records.push(TraceRecord {
                l: u(0)?,
                scale: f(1)?,
                drawn: u(2)?,
                passing: u(3)?,
                best_margin: f(4)?,
                delta: f(5)?,
                train_rmse: f(6)?,
                test_rmse: if cells[7].is_empty() {
                    None
                } else {
                    Some(f(7)?)
                },
                elapsed_ms: f(8)?,
                fallback: cells[9].parse().map_err(|_| bad(9))?,
            });
        }
        let status = status.ok_or_else(|| Error::Malformed("missing status line".into()))?;
        Ok(TrainTrace {
            initial_rmse: f64::NAN,
            initial_norms_sq: Vec::new(),
            records,
            diagnostics: Vec::new(),
            status,
        })
    }
}
