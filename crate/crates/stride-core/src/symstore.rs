//! Trace plumbing shared by the iterative solvers: named-column iteration
//! records with elapsed timestamps and a CSV writer, plus small norm helpers
//! used across tests and drivers.

use std::io::{self, Write};
use std::time::Instant;

/// One logged iteration: the counter, the values for the trace's columns,
/// and seconds elapsed since the trace started.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iteration: usize,
    pub values: Vec<f64>,
    pub elapsed_sec: f64,
}

/// An append-only iteration log with fixed named columns. Iteration numbers
/// must strictly increase; each record is stamped with wall time on push.
#[derive(Debug)]
pub struct Trace {
    columns: Vec<String>,
    records: Vec<TraceRecord>,
    started: Instant,
}

impl Trace {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Trace {
        Trace {
            columns: columns.into_iter().map(Into::into).collect(),
            records: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Appends a record. Panics if the column count does not match or the
    /// iteration number does not increase.
    pub fn push(&mut self, iteration: usize, values: &[f64]) {
        assert_eq!(values.len(), self.columns.len(), "column count mismatch");
        if let Some(last) = self.records.last() {
            assert!(iteration > last.iteration, "iterations must increase");
        }
        self.records.push(TraceRecord {
            iteration,
            values: values.to_vec(),
            elapsed_sec: self.started.elapsed().as_secs_f64(),
        });
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the log as CSV: a header row, then one record per line.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        write!(out, "iteration")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",elapsed_sec")?;
        for r in &self.records {
            write!(out, "{}", r.iteration)?;
            for v in &r.values {
                write!(out, ",{v:.17e}")?;
            }
            writeln!(out, ",{:.6}", r.elapsed_sec)?;
        }
        Ok(())
    }
}

/// Euclidean norm of a slice.
pub fn vec_norm(s: &[f64]) -> f64 {
    s.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Relative difference `|a - b| / (1 + |a| + |b|)`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs() + b.abs())
}
