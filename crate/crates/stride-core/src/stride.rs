//! Outer solver driver: projected-gradient backbone steps, relative KKT
//! certification, rounding/refinement acceleration, and a safeguarded
//! accept/reject policy over a ledger of visited rank-one vertices. The
//! accelerated iterate is adopted only on strict objective descent against
//! everything seen so far, so the driver inherits the backbone's global
//! convergence while the rounding supplies its finishing speed.

use crate::admm::admm_run;
use crate::ipgm::{ipgm_step, Schedule};
use crate::localsearch::{round_and_refine, Hypothesis};
use crate::relax::SdpProblem;
use crate::symcore::{min_eig, SymMat};
use crate::SolveError;
use nalgebra::DVector;
use std::collections::VecDeque;

/// Relative feasibility gate for ledger membership and policy acceptance.
pub const FEASIBILITY_REL: f64 = 1e-9;
/// Absolute eigenvalue slack when deciding whether a start is a usable
/// ledger seed.
const SEED_PSD_TOL: f64 = 1e-12;
/// Floor and relative weight of the strict-descent acceptance margin.
const EPS_POLICY_ABS: f64 = 1e-12;
const EPS_POLICY_REL: f64 = 1e-8;
/// Dual-growth monitor: warn when `‖y‖` grows by more than this factor over
/// a window of this many iterations (sustained growth suggests the bounded
/// multiplier hypothesis behind the convergence guarantee is failing).
const Y_GROWTH_RATIO: f64 = 10.0;
const Y_GROWTH_WINDOW: usize = 10;

/// How the acceleration interacts with the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelMode {
    /// Round, refine, lift, and adopt candidates that pass the policy.
    On,
    /// Compute candidates but never adopt them. The iterate sequence must
    /// match `Off` bit for bit; this mode exists to verify that reduction.
    ForcedReject,
    /// Skip the acceleration entirely (pure backbone).
    Off,
}

/// Initial triple source for a solve.
#[derive(Debug, Clone)]
pub enum WarmStart {
    /// Run the splitting method first and start from its triple.
    Admm { max_iter: usize, tol: f64 },
    /// Start from the all-zero triple.
    Zero,
    /// Lift a feasible point of the source problem; duals start at zero.
    Point(Vec<f64>),
    /// Caller-supplied triple.
    Given {
        x: SymMat,
        y: DVector<f64>,
        s: SymMat,
    },
}

/// Driver options. `schedule = None` derives scale-invariant defaults from
/// the problem; `eps_policy = None` uses a margin relative to the current
/// objective.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Number of leading eigenvectors rounded per acceleration attempt.
    pub hypotheses: usize,
    pub accel: AccelMode,
    pub schedule: Option<Schedule>,
    pub eps_policy: Option<f64>,
    pub warm: WarmStart,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 100,
            hypotheses: 3,
            accel: AccelMode::On,
            schedule: None,
            eps_policy: None,
            warm: WarmStart::Admm {
                max_iter: crate::admm::DEFAULT_MAX_ITER,
                tol: crate::admm::DEFAULT_TOL,
            },
        }
    }
}

/// A vertex adopted by the policy: rank-one lift and its objective value.
#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub vertex: SymMat,
    pub value: f64,
}

/// Everything measured during one outer iteration, in the order computed.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub k: usize,
    pub sigma: f64,
    pub eps: f64,
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_g: f64,
    /// `⟨C, X̄⟩` at the backbone iterate (before any acceleration).
    pub objective: f64,
    /// `‖A(X̄) − b‖`, compared against `eps` for the step-completion test.
    pub primal_residual: f64,
    pub condition1: bool,
    pub dual_identity_residual: f64,
    pub complementarity: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub s_norm: f64,
    pub proj_converged: bool,
    pub apg_iters: usize,
    pub lbfgs_iters: usize,
    /// Whether the policy adopted the rounded candidate this iteration.
    pub accepted: bool,
}

/// Mutable solver state plus the full iteration history.
#[derive(Debug)]
pub struct SolveState {
    pub x: SymMat,
    pub y: DVector<f64>,
    pub s: SymMat,
    pub vertex_ledger: Vec<LedgerEntry>,
    /// Outer iterations actually executed.
    pub k: usize,
    /// Best feasible candidate seen across all acceleration attempts.
    pub best_hypothesis: Option<Hypothesis>,
    pub converged: bool,
    /// Latched when the dual norm grew by 10x over a 10-iteration window.
    pub y_growth_warning: bool,
    pub records: Vec<IterRecord>,
}

/// Optimality evidence: relative KKT residues of the final triple plus the
/// explicit bound pair certifying the rounded point's suboptimality gap.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_g: f64,
    /// Relative gap between `upper_bound` and `lower_bound`.
    pub eta_s: f64,
    /// `⟨b,y⟩ + M_b·min(0, λ_min(C − A*y))`: a valid bound on the SDP value
    /// for any `y`, with the trace bound absorbing dual infeasibility.
    pub lower_bound: f64,
    /// Objective of the rounded feasible point.
    pub upper_bound: f64,
}

impl Certificate {
    /// Largest of the three KKT residues (the driver's stopping measure).
    pub fn max_residue(&self) -> f64 {
        self.eta_p.max(self.eta_d).max(self.eta_g)
    }
}

/// Relative KKT residues of a primal-dual triple:
/// `η_p = ‖A(X)−b‖/(1+‖b‖)`, `η_d = ‖A*y+S−C‖/(1+‖C‖)`, and
/// `η_g = |⟨C,X⟩−⟨b,y⟩|/(1+|⟨C,X⟩|+|⟨b,y⟩|)`.
pub fn kkt_residues(
    problem: &SdpProblem,
    x: &SymMat,
    y: &DVector<f64>,
    s: &SymMat,
) -> (f64, f64, f64) {
    let eta_p = (problem.map.apply(x) - &problem.b).norm() / (1.0 + problem.b.norm());
    let mut dual = problem.map.adjoint(y);
    dual.axpy(1.0, s);
    dual.axpy(-1.0, &problem.c);
    let eta_d = dual.norm() / (1.0 + problem.c.norm());
    let pobj = problem.c.inner(x);
    let dobj = problem.b.dot(y);
    let eta_g = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    (eta_p, eta_d, eta_g)
}

/// Builds the optimality certificate for a rounded point `x_hat` against the
/// dual vector `y`, attaching the KKT residues already measured for the
/// triple that produced `y`. The lower bound clamps the smallest eigenvalue
/// at zero: a strictly positive slack spectrum cannot raise the bound beyond
/// `⟨b,y⟩` because feasible traces may fall short of the trace cap.
pub fn subopt_gap(
    problem: &SdpProblem,
    x_hat: &[f64],
    y: &DVector<f64>,
    kkt: (f64, f64, f64),
) -> Result<Certificate, SolveError> {
    if !problem.pop.is_feasible(x_hat, FEASIBILITY_REL) {
        return Err(SolveError::InfeasibleHypothesis);
    }
    let upper = problem.pop.objective(x_hat);
    let mut slack = problem.c.clone();
    slack.axpy(-1.0, &problem.map.adjoint(y));
    let lambda = min_eig(&slack).min(0.0);
    let lower = problem.b.dot(y) + problem.pop.trace_bound * lambda;
    let eta_s = (upper - lower).abs() / (1.0 + upper.abs() + lower.abs());
    Ok(Certificate {
        eta_p: kkt.0,
        eta_d: kkt.1,
        eta_g: kkt.2,
        eta_s,
        lower_bound: lower,
        upper_bound: upper,
    })
}

/// Rounds and refines the top eigenvectors of `x_bar` into the best feasible
/// hypothesis and its rank-one lift.
pub fn accel_candidate(problem: &SdpProblem, x_bar: &SymMat, r: usize) -> (SymMat, Hypothesis) {
    let hyp = round_and_refine(&problem.pop, x_bar, r);
    let x_hat = problem.pop.lift(&hyp.x);
    (x_hat, hyp)
}

/// Strict-descent acceptance: adopt `x_hat` only when its objective beats
/// both the backbone iterate and every ledger entry by more than
/// `eps_policy`, and it is feasible. Returns whether the candidate was
/// adopted; the state's iterate becomes `x_hat` on acceptance and `x_bar`
/// otherwise.
pub fn policy_update(
    problem: &SdpProblem,
    state: &mut SolveState,
    x_bar: SymMat,
    x_hat: SymMat,
    eps_policy: f64,
) -> bool {
    let bar_obj = problem.c.inner(&x_bar);
    let ledger_min = state
        .vertex_ledger
        .iter()
        .map(|e| e.value)
        .fold(f64::INFINITY, f64::min);
    let hat_obj = problem.c.inner(&x_hat);
    let feasible = (problem.map.apply(&x_hat) - &problem.b).norm()
        <= FEASIBILITY_REL * (1.0 + problem.b.norm());
    if feasible && hat_obj < bar_obj.min(ledger_min) - eps_policy {
        state.vertex_ledger.push(LedgerEntry {
            vertex: x_hat.clone(),
            value: hat_obj,
        });
        state.x = x_hat;
        true
    } else {
        state.x = x_bar;
        false
    }
}

/// True when the window shows sustained growth: the newest norm exceeds the
/// oldest by the watch ratio, the window being full and its base nonzero.
fn sustained_growth(window: &VecDeque<f64>) -> bool {
    if window.len() < Y_GROWTH_WINDOW + 1 {
        return false;
    }
    let base = window[0];
    base > 1e-12 && window[window.len() - 1] > Y_GROWTH_RATIO * base
}

/// The shared outer loop. Both the pure backbone and the accelerated driver
/// run through this body; the acceleration mode only decides what happens
/// between the step and the bookkeeping, so disabling it reproduces the
/// backbone sequence exactly. `opts.warm` is ignored here: the caller has
/// already resolved the start into an explicit triple.
pub fn solve_loop(
    problem: &SdpProblem,
    x0: SymMat,
    y0: DVector<f64>,
    s0: SymMat,
    opts: &SolveOptions,
) -> Result<SolveState, SolveError> {
    assert_eq!(x0.n(), problem.n(), "primal start dimension mismatch");
    assert_eq!(y0.len(), problem.m(), "dual start dimension mismatch");
    let schedule = opts
        .schedule
        .clone()
        .unwrap_or_else(|| Schedule::defaults(problem, opts.tol));
    let b_norm = problem.b.norm();
    let mut state = SolveState {
        x: x0,
        y: y0,
        s: s0,
        vertex_ledger: Vec::new(),
        k: 0,
        best_hypothesis: None,
        converged: false,
        y_growth_warning: false,
        records: Vec::new(),
    };
    // A start that is already a feasible PSD point seeds the ledger, so the
    // policy must strictly beat it before adopting anything else.
    let seed_residual = (problem.map.apply(&state.x) - &problem.b).norm();
    if seed_residual <= FEASIBILITY_REL * (1.0 + b_norm) && min_eig(&state.x) >= -SEED_PSD_TOL {
        state.vertex_ledger.push(LedgerEntry {
            vertex: state.x.clone(),
            value: problem.c.inner(&state.x),
        });
    }
    let mut k_eff: usize = 1;
    let mut w_warm: Option<SymMat> = None;
    let mut y_norms: VecDeque<f64> = VecDeque::with_capacity(Y_GROWTH_WINDOW + 1);
    for k in 1..=opts.max_iter {
        state.k = k;
        let sigma = schedule.sigma(k_eff);
        let eps = schedule.eps(k_eff, b_norm);
        let step = ipgm_step(
            problem,
            &state.x,
            w_warm.as_ref(),
            sigma,
            eps,
            schedule.proj_tol,
        )?;
        let (eta_p, eta_d, eta_g) = kkt_residues(problem, &step.x, &step.y, &step.s);
        let objective = problem.c.inner(&step.x);
        y_norms.push_back(step.y.norm());
        if y_norms.len() > Y_GROWTH_WINDOW + 1 {
            y_norms.pop_front();
        }
        if sustained_growth(&y_norms) {
            state.y_growth_warning = true;
        }
        let mut record = IterRecord {
            k,
            sigma,
            eps,
            eta_p,
            eta_d,
            eta_g,
            objective,
            primal_residual: step.primal_residual,
            condition1: step.condition1,
            dual_identity_residual: step.dual_identity_residual,
            complementarity: step.complementarity,
            x_norm: step.x.norm(),
            y_norm: step.y.norm(),
            s_norm: step.s.norm(),
            proj_converged: step.proj.converged(),
            apg_iters: step.proj.iters_apg,
            lbfgs_iters: step.proj.iters_lbfgs,
            accepted: false,
        };
        if eta_p.max(eta_d).max(eta_g) <= opts.tol {
            state.x = step.x;
            state.y = step.y;
            state.s = step.s;
            state.converged = true;
            state.records.push(record);
            return Ok(state);
        }
        let complete = step.condition1;
        let x_bar = step.x;
        state.y = step.y;
        state.s = step.s;
        // The PSD block warm-starts the next projection whether or not the
        // candidate below is adopted; it stays a good starting guess either
        // way because accepted vertices are near the rounded iterate.
        w_warm = Some(step.proj.w);
        match opts.accel {
            AccelMode::Off => {
                state.x = x_bar;
            }
            AccelMode::On | AccelMode::ForcedReject => {
                let (x_hat, hyp) = accel_candidate(problem, &x_bar, opts.hypotheses);
                if state
                    .best_hypothesis
                    .as_ref()
                    .is_none_or(|best| hyp.value < best.value)
                {
                    state.best_hypothesis = Some(hyp);
                }
                if opts.accel == AccelMode::On {
                    let eps_policy = opts
                        .eps_policy
                        .unwrap_or_else(|| EPS_POLICY_ABS.max(EPS_POLICY_REL * (1.0 + objective.abs())));
                    record.accepted = policy_update(problem, &mut state, x_bar, x_hat, eps_policy);
                } else {
                    state.x = x_bar;
                }
            }
        }
        // An incomplete step keeps the step length where it is: the
        // projection could not certify this accuracy level, so demanding a
        // longer step next would compound the error.
        if complete {
            k_eff += 1;
        }
        state.records.push(record);
    }
    Ok(state)
}

/// Full solve: resolve the warm start, run the driver loop, fold a final
/// rounding of the terminal iterate into the best hypothesis, and certify
/// it against the final dual. Running out of iterations is reported through
/// `SolveState::converged`, not an error: the certificate remains valid
/// evidence either way.
pub fn stride_run(
    problem: &SdpProblem,
    opts: &SolveOptions,
) -> Result<(SolveState, Certificate), SolveError> {
    let (x0, y0, s0) = match &opts.warm {
        WarmStart::Admm { max_iter, tol } => {
            let ws = admm_run(problem, *max_iter, *tol)?;
            (ws.x, ws.y, ws.s)
        }
        WarmStart::Zero => (
            SymMat::zeros(problem.n()),
            DVector::zeros(problem.m()),
            SymMat::zeros(problem.n()),
        ),
        WarmStart::Point(x) => (
            problem.pop.lift(x),
            DVector::zeros(problem.m()),
            SymMat::zeros(problem.n()),
        ),
        WarmStart::Given { x, y, s } => (x.clone(), y.clone(), s.clone()),
    };
    let mut state = solve_loop(problem, x0, y0, s0, opts)?;
    let (_, final_hyp) = accel_candidate(problem, &state.x, opts.hypotheses);
    if state
        .best_hypothesis
        .as_ref()
        .is_none_or(|best| final_hyp.value < best.value)
    {
        state.best_hypothesis = Some(final_hyp);
    }
    let hyp = state
        .best_hypothesis
        .clone()
        .expect("final rounding always yields a hypothesis");
    let kkt = kkt_residues(problem, &state.x, &state.y, &state.s);
    let certificate = subopt_gap(problem, &hyp.x, &state.y, kkt)?;
    Ok((state, certificate))
}
