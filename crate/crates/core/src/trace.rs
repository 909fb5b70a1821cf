//! Per-iteration run records and their CSV form.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const TRACE_CSV_HEADER: [&str; 8] = [
    "iter",
    "time_s",
    "objective",
    "grad_norm",
    "rel_err",
    "kept_blocks",
    "solver_iters",
    "solver_residual",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub time_s: f64,
    pub objective: f64,
    pub grad_norm: f64,
    /// `|w_t - w*| / |w*|` when a reference solution is known.
    pub rel_err: Option<f64>,
    pub kept_blocks: usize,
    pub solver_iters: usize,
    pub solver_residual: f64,
    /// Diagnostics for the Hessian approximation that produced this iterate
    /// (recorded only by instrumented runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_c2: Option<f64>,
    /// Measured `|v - v*| / |v*|` of the subproblem solve that produced this iterate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: String,
    pub records: Vec<IterRecord>,
}

impl RunTrace {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: IterRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(record.iter > last.iter);
        }
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of outer iterations taken (records after the initial point).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// First iteration whose relative error is at most `tol`.
    pub fn first_iter_below(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_err.is_some_and(|e| e <= tol))
            .map(|r| r.iter)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().from_writer(out);
        wtr.write_record(TRACE_CSV_HEADER)?;
        for r in &self.records {
            wtr.write_record([
                r.iter.to_string(),
                num(r.time_s),
                num(r.objective),
                num(r.grad_norm),
                r.rel_err.map(num).unwrap_or_default(),
                r.kept_blocks.to_string(),
                r.solver_iters.to_string(),
                num(r.solver_residual),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip form, switching to exponent notation for extreme magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Wall clock for a run; guarantees non-decreasing readings.
#[derive(Debug)]
pub(crate) struct RunClock {
    start: Instant,
    last: f64,
}

impl RunClock {
    pub(crate) fn start() -> Self {
        Self {
            start: Instant::now(),
            last: 0.0,
        }
    }

    pub(crate) fn elapsed(&mut self) -> f64 {
        let t = self.start.elapsed().as_secs_f64().max(self.last);
        self.last = t;
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_empty_rel_err() {
        let mut t = RunTrace::new("gd");
        t.push(IterRecord {
            iter: 0,
            time_s: 0.0,
            objective: 1.5,
            grad_norm: 2.0,
            rel_err: None,
            kept_blocks: 0,
            solver_iters: 0,
            solver_residual: 3.5e-14,
            eps_c1: None,
            eps_c2: None,
            eps0: None,
        });
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter,time_s,objective,grad_norm,rel_err,kept_blocks,solver_iters,solver_residual"
        );
        assert_eq!(lines.next().unwrap(), "0,0.0,1.5,2.0,,0,0,3.5e-14");
    }
}
