//! Result and certificate schemas written by the commands, plus the
//! iteration-trace CSV.

use serde::{Deserialize, Serialize};
use std::io::{self, Write};

use stride_core::relax::PopKind;
use stride_core::stride::{Certificate, IterRecord};
use stride_core::symstore::Trace;

/// Outcome of one solve, serialized as the result JSON. `wall_time_sec` is
/// the only field allowed to differ between runs of the same configuration
/// and seed; everything else is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub pop_kind: String,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n: usize,
    pub m: usize,
    pub solver: String,
    pub tol: f64,
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_g: f64,
    pub eta_s: f64,
    /// Objective of the final matrix iterate.
    pub obj_sdp: f64,
    /// Objective of the rounded point `x_hat` in the source problem.
    pub obj_pop: f64,
    pub x_hat: Vec<f64>,
    /// Final dual vector, kept so a certificate can be recomputed from this
    /// report alone.
    pub y: Vec<f64>,
    pub iters: usize,
    pub wall_time_sec: f64,
    /// Vertex ledger length: rank-one candidates adopted during the solve,
    /// counting a feasible warm-start seed.
    pub accepted_vertices: usize,
}

impl SolveReport {
    /// Largest KKT residue, the exit gate for the solve command.
    pub fn max_residue(&self) -> f64 {
        self.eta_p.max(self.eta_d).max(self.eta_g)
    }
}

/// Certificate JSON written by the certify command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_g: f64,
    pub eta_s: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl From<&Certificate> for CertificateReport {
    fn from(c: &Certificate) -> Self {
        CertificateReport {
            eta_p: c.eta_p,
            eta_d: c.eta_d,
            eta_g: c.eta_g,
            eta_s: c.eta_s,
            lower_bound: c.lower_bound,
            upper_bound: c.upper_bound,
        }
    }
}

/// Canonical command-line name of a problem family.
pub fn kind_name(kind: PopKind) -> &'static str {
    match kind {
        PopKind::Univariate => "univariate",
        PopKind::Bqp => "bqp",
        PopKind::QuarticSphere => "q4s",
    }
}

/// Writes the per-iteration records as CSV, one row per outer iteration.
/// Flags are encoded as 0/1 so every column stays numeric.
pub fn write_trace_csv<W: Write>(out: &mut W, records: &[IterRecord]) -> io::Result<()> {
    let mut trace = Trace::new(vec![
        "sigma",
        "eps",
        "eta_p",
        "eta_d",
        "eta_g",
        "objective",
        "primal_residual",
        "condition1",
        "dual_identity_residual",
        "complementarity",
        "x_norm",
        "y_norm",
        "s_norm",
        "proj_converged",
        "apg_iters",
        "lbfgs_iters",
        "accepted",
    ]);
    for r in records {
        trace.push(
            r.k,
            &[
                r.sigma,
                r.eps,
                r.eta_p,
                r.eta_d,
                r.eta_g,
                r.objective,
                r.primal_residual,
                f64::from(r.condition1),
                r.dual_identity_residual,
                r.complementarity,
                r.x_norm,
                r.y_norm,
                r.s_norm,
                f64::from(r.proj_converged),
                r.apg_iters as f64,
                r.lbfgs_iters as f64,
                f64::from(r.accepted),
            ],
        );
    }
    trace.write_csv(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> SolveReport {
        SolveReport {
            pop_kind: "bqp".into(),
            d: 4,
            seed: Some(7),
            n: 15,
            m: 46,
            solver: "stride".into(),
            tol: 1e-8,
            eta_p: 1e-10,
            eta_d: 2e-10,
            eta_g: 3e-11,
            eta_s: 4e-12,
            obj_sdp: -5.5,
            obj_pop: -5.5,
            x_hat: vec![1.0, -1.0, 1.0, 1.0],
            y: vec![0.0; 3],
            iters: 2,
            wall_time_sec: 0.25,
            accepted_vertices: 1,
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = sample_report();
        let text = serde_json::to_string_pretty(&report).unwrap();
        let back: SolveReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.x_hat, report.x_hat);
        assert_eq!(back.seed, report.seed);
        assert_eq!(back.max_residue(), 2e-10);
    }

    #[test]
    fn absent_seed_is_omitted_but_parses_back() {
        let mut report = sample_report();
        report.seed = None;
        let text = serde_json::to_string(&report).unwrap();
        assert!(!text.contains("seed"));
        let back: SolveReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, None);
    }

    #[test]
    fn trace_csv_has_header_and_one_row_per_record() {
        let record = IterRecord {
            k: 1,
            sigma: 0.5,
            eps: 1e-3,
            eta_p: 1e-4,
            eta_d: 2e-4,
            eta_g: 3e-4,
            objective: -1.0,
            primal_residual: 5e-4,
            condition1: true,
            dual_identity_residual: 1e-15,
            complementarity: 1e-12,
            x_norm: 2.0,
            y_norm: 3.0,
            s_norm: 4.0,
            proj_converged: true,
            apg_iters: 10,
            lbfgs_iters: 5,
            accepted: false,
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[record]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("iteration,sigma,eps,eta_p"));
        assert_eq!(lines.count(), 1);
    }
}
