//! Semi-proximal ADMM on the dual SDP. One pass manufactures the warm-start
//! triple handed to the main solver; it is a workhorse for low accuracy,
//! not a certifying method.

use crate::relax::SdpProblem;
use crate::stride::kkt_residues;
use crate::symcore::{moreau_split, proj_psd, SymMat};
use crate::SolveError;
use nalgebra::DVector;

/// Over-relaxation factor; admissible range is (0, 2).
pub const DEFAULT_GAMMA: f64 = 1.95;
/// Default iteration budget and target for warm starts.
pub const DEFAULT_MAX_ITER: usize = 2000;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Penalty rebalancing: double sigma after this many consecutive iterations
/// with the primal residue dominating the dual one by the given ratio.
const REBALANCE_RATIO: f64 = 10.0;
const REBALANCE_PATIENCE: usize = 50;

/// Iterates of the splitting method. `s` stays PSD by construction (it is a
/// scaled projection residue); `x` is generally indefinite until the final
/// clean-up projection.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: SymMat,
    pub s: SymMat,
    /// Multiplier from the first half-step of the sweep.
    pub yhat: DVector<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
    pub gamma: f64,
    /// Relative KKT residues of the current iterate.
    pub residues: (f64, f64, f64),
}

impl AdmmState {
    /// Zero initial state.
    pub fn zeros(problem: &SdpProblem, sigma: f64, gamma: f64) -> AdmmState {
        assert!(sigma > 0.0, "penalty must be positive");
        assert!(
            gamma > 0.0 && gamma < 2.0,
            "over-relaxation factor must lie in (0, 2)"
        );
        let n = problem.n();
        let m = problem.m();
        AdmmState {
            x: SymMat::zeros(n),
            s: SymMat::zeros(n),
            yhat: DVector::zeros(m),
            y: DVector::zeros(m),
            sigma,
            gamma,
            residues: (f64::INFINITY, f64::INFINITY, f64::INFINITY),
        }
    }

    pub fn max_residue(&self) -> f64 {
        self.residues.0.max(self.residues.1).max(self.residues.2)
    }
}

/// One sweep of the splitting method:
///
/// ```text
/// ŷ  = (AA*)⁻¹(b/σ − A(X/σ + S − C))
/// S⁺ = (Π(M) − M)/σ          with M = X + σ(A*ŷ − C)
/// y⁺ = (AA*)⁻¹(b/σ − A(X/σ + S⁺ − C))
/// X⁺ = X + γσ(S⁺ + A*y⁺ − C)
/// ```
///
/// `S⁺` equals `Π(−M)/σ`, hence is PSD automatically. The residues stored on
/// the returned state are those of `(X⁺, y⁺, S⁺)`.
pub fn admm_step(problem: &SdpProblem, state: &mut AdmmState) -> Result<(), SolveError> {
    let map = &problem.map;
    let sigma = state.sigma;
    let rhs_of = |s_block: &SymMat, x: &SymMat| -> SymMat {
        // X/σ + S − C, the matrix whose image is subtracted from b/σ.
        let mut t = x.scaled(1.0 / sigma);
        t.axpy(1.0, s_block);
        t.axpy(-1.0, &problem.c);
        t
    };
    let b_over_sigma = &problem.b / sigma;
    state.yhat = map.solve_normal(&(&b_over_sigma - map.apply(&rhs_of(&state.s, &state.x))))?;
    // M = X + σ(A*ŷ − C); the Moreau complement of M is σ·S⁺.
    let mut m = map.adjoint(&state.yhat);
    m.axpy(-1.0, &problem.c);
    let mut m_scaled = state.x.clone();
    m_scaled.axpy(sigma, &m);
    let (_, w, _) = moreau_split(&m_scaled)?;
    state.s = w.scaled(1.0 / sigma);
    state.y = map.solve_normal(&(&b_over_sigma - map.apply(&rhs_of(&state.s, &state.x))))?;
    // X⁺ = X + γσ(S + A*y − C)
    let mut drift = map.adjoint(&state.y);
    drift.axpy(1.0, &state.s);
    drift.axpy(-1.0, &problem.c);
    state.x.axpy(state.gamma * sigma, &drift);
    state.residues = kkt_residues(problem, &state.x, &state.y, &state.s);
    Ok(())
}

/// Result of a warm-start run: the PSD-projected primal, the duals, and the
/// per-iteration residue history.
#[derive(Debug)]
pub struct AdmmWarmStart {
    pub x: SymMat,
    pub y: DVector<f64>,
    pub s: SymMat,
    pub iters: usize,
    pub converged: bool,
    pub residue_history: Vec<(f64, f64, f64)>,
}

/// Runs the splitting method from the zero state until
/// `max{η_p, η_d, η_g} ≤ tol` or the budget runs out, then projects the
/// primal onto the PSD cone. Exhausting the budget is not an error; a warm
/// start is a heuristic. With `max_iter = 0` the zero triple comes back.
pub fn admm_run(problem: &SdpProblem, max_iter: usize, tol: f64) -> Result<AdmmWarmStart, SolveError> {
    let mut state = AdmmState::zeros(problem, 1.0, DEFAULT_GAMMA);
    let mut history = Vec::new();
    let mut iters = 0;
    let mut converged = false;
    let mut unbalanced = 0;
    for k in 1..=max_iter {
        admm_step(problem, &mut state)?;
        history.push(state.residues);
        iters = k;
        if state.max_residue() <= tol {
            converged = true;
            break;
        }
        // Rebalance: a persistently dominant primal residue means the
        // penalty is too small to move X.
        let (ep, ed, _) = state.residues;
        if ep > REBALANCE_RATIO * ed {
            unbalanced += 1;
            if unbalanced >= REBALANCE_PATIENCE {
                state.sigma *= 2.0;
                unbalanced = 0;
            }
        } else {
            unbalanced = 0;
        }
    }
    let (x_psd, _) = proj_psd(&state.x)?;
    Ok(AdmmWarmStart {
        x: x_psd,
        y: state.y,
        s: state.s,
        iters,
        converged,
        residue_history: history,
    })
}
