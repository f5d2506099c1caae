//! Inexact projected-gradient backbone: each step projects
//! `X_prev − σ_k C` back onto the feasible spectrahedron to a verifiable
//! accuracy, recovering a primal-dual triple whose inexactness conditions
//! are checked, not assumed.

use crate::projsolve::{project, ProjResult};
use crate::relax::SdpProblem;
use crate::stride::{solve_loop, AccelMode, SolveOptions, SolveState};
use crate::symcore::SymMat;
use crate::SolveError;
use nalgebra::DVector;

/// Step-length and inexactness schedule. The step length grows like the
/// square root of the effective iteration count; the per-step projection
/// accuracy requirement decays quadratically down to a floor at the
/// projection solver's requested tolerance, which keeps the error sequence
/// summable against the growing steps.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub sigma0: f64,
    pub eps0: f64,
    /// Relative tolerance requested from every projection solve; also the
    /// floor of the per-step requirement.
    pub proj_tol: f64,
}

impl Schedule {
    /// Scale-invariant defaults: `σ₀ = 10/‖C‖`, `ε₀ = 1e-2·(1+‖b‖)`, and a
    /// projection request one decade below the outer tolerance.
    pub fn defaults(problem: &SdpProblem, tol: f64) -> Schedule {
        Schedule {
            sigma0: 10.0 / problem.c.norm(),
            eps0: 1e-2 * (1.0 + problem.b.norm()),
            proj_tol: 0.1 * tol,
        }
    }

    /// `σ_k = σ₀·max(1, √k)`, non-decreasing in the effective count.
    pub fn sigma(&self, k_eff: usize) -> f64 {
        self.sigma0 * (k_eff as f64).sqrt().max(1.0)
    }

    /// `ε_k = max(proj_tol·(1+‖b‖), ε₀/k²)`.
    pub fn eps(&self, k_eff: usize, b_norm: f64) -> f64 {
        let decay = self.eps0 / (k_eff * k_eff) as f64;
        decay.max(self.proj_tol * (1.0 + b_norm))
    }
}

/// One backbone step with its verifiable inexactness report. The recovered
/// triple is `(X̄, y, S) = (Π(A*ξ+Z), ξ/σ, W/σ)` from the projection duals.
#[derive(Debug)]
pub struct IpgmStep {
    pub x: SymMat,
    pub y: DVector<f64>,
    pub s: SymMat,
    /// Raw projection result; its PSD block warm-starts the next step.
    pub proj: ProjResult,
    /// `‖A(X̄) − b‖`, the left-hand side of the primal inexactness test.
    pub primal_residual: f64,
    /// Whether the primal residual met the step's requirement `ε_k`.
    pub condition1: bool,
    /// `‖A*y + S − C − (X̄ − X_prev)/σ‖`; zero up to rounding because the
    /// recovery satisfies this identity algebraically.
    pub dual_identity_residual: f64,
    /// `⟨X̄, S⟩`; near zero because the pair has complementary eigenspaces.
    pub complementarity: f64,
}

impl IpgmStep {
    /// A flagged step: the projection gave up above the step requirement.
    /// The state is still usable, but the step length should not grow.
    pub fn incomplete(&self) -> bool {
        !self.condition1
    }
}

/// Computes one projected-gradient step `X̄ ≈ Π_F(X_prev − σC)` to the
/// requested relative tolerance, recovering duals and the inexactness
/// report. `w_warm` warm-starts the projection's PSD block.
pub fn ipgm_step(
    problem: &SdpProblem,
    x_prev: &SymMat,
    w_warm: Option<&SymMat>,
    sigma: f64,
    eps: f64,
    proj_tol: f64,
) -> Result<IpgmStep, SolveError> {
    assert!(sigma > 0.0, "step length must be positive");
    let mut z = x_prev.clone();
    z.axpy(-sigma, &problem.c);
    let proj = project(&problem.map, &problem.b, &z, proj_tol, w_warm, None)?;
    let x = proj.x.clone();
    let y = &proj.xi / sigma;
    let s = proj.w.scaled(1.0 / sigma);
    let primal_residual = proj.grad_norm();
    // A*y + S − C − (X̄ − X_prev)/σ; equals (A*ξ + W + Z − X̄)/σ, the Moreau
    // reconstruction error, so any excess signals a recovery bug.
    let mut identity = problem.map.adjoint(&y);
    identity.axpy(1.0, &s);
    identity.axpy(-1.0, &problem.c);
    identity.axpy(-1.0 / sigma, &x);
    identity.axpy(1.0 / sigma, x_prev);
    let dual_identity_residual = identity.norm();
    let complementarity = x.inner(&s);
    Ok(IpgmStep {
        x,
        y,
        s,
        proj,
        primal_residual,
        condition1: primal_residual <= eps,
        dual_identity_residual,
        complementarity,
    })
}

/// Pure backbone run from `x0` (no rounding acceleration): iterates
/// projected-gradient steps until `max{η_p, η_d, η_g} ≤ tol` or the budget
/// runs out; the returned state's `converged` flag distinguishes the two.
pub fn ipgm_run(
    problem: &SdpProblem,
    x0: SymMat,
    schedule: Schedule,
    tol: f64,
    max_iter: usize,
) -> Result<SolveState, SolveError> {
    let opts = SolveOptions {
        tol,
        max_iter,
        accel: AccelMode::Off,
        schedule: Some(schedule),
        ..SolveOptions::default()
    };
    let y0 = DVector::zeros(problem.m());
    let s0 = SymMat::zeros(problem.n());
    solve_loop(problem, x0, y0, s0, &opts)
}
