//! Rounding eigenvectors of the moment matrix to feasible points and local
//! refinement: each candidate eigenvector is normalized, its degree-one
//! block is mapped (or descended) onto the feasible set, and the best
//! resulting objective wins.

use crate::relax::{monomials_up_to, Monomial, PopKind, PopModel};
use crate::symcore::{eig_sym, SymMat};
use nalgebra::DVector;

/// A feasible candidate with its objective value.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Feasible point.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub value: f64,
    /// Index of the eigenvector the candidate was rounded from (0 = leading),
    /// or `usize::MAX` when refined from a caller-supplied start.
    pub source: usize,
    /// True when the refiner stopped on its iteration cap rather than at a
    /// local optimum.
    pub iteration_capped: bool,
}

/// Sufficient-decrease constant shared by the Armijo backtracking loops.
const ARMIJO_C: f64 = 1e-4;
/// Iteration cap for the descent refiners.
const MAX_REFINE_ITERS: usize = 500;

/// Leading-entry threshold below which eigenvector normalization is skipped
/// (degenerate vectors with a vanishing constant-monomial coordinate).
const LEADING_ENTRY_MIN: f64 = 1e-8;

/// Maps an eigenvector of a moment matrix to a feasible point in one shot:
/// normalize by the leading entry when it is safely nonzero, extract the
/// degree-one block, then apply the model's feasibility rule (hypercube:
/// componentwise sign with ties to `+1`; sphere: scale to unit norm, zero
/// block to `e_1`; univariate demo: snap to the nearest constraint root).
pub fn round_vec(model: &PopModel, v: &DVector<f64>) -> Vec<f64> {
    let block = degree_one_block(model, v);
    match model.kind {
        PopKind::Bqp => block
            .iter()
            .map(|&t| if t >= 0.0 { 1.0 } else { -1.0 })
            .collect(),
        PopKind::QuarticSphere => normalize_or_e1(&block),
        PopKind::Univariate => vec![snap_to_root(block[0])],
    }
}

/// The degree-one coordinates of `v` after leading-entry normalization;
/// used directly (without snapping) as the refinement start.
pub fn degree_one_block(model: &PopModel, v: &DVector<f64>) -> Vec<f64> {
    let scale = if v[0].abs() > LEADING_ENTRY_MIN {
        1.0 / v[0]
    } else {
        1.0
    };
    (1..=model.d).map(|i| v[i] * scale).collect()
}

fn normalize_or_e1(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter().map(|t| t / norm).collect()
    } else {
        let mut e1 = vec![0.0; x.len()];
        e1[0] = 1.0;
        e1
    }
}

fn snap_to_root(t: f64) -> f64 {
    let mut best = -2.0;
    for r in [-1.0, 1.0, 2.0] {
        if (t - r).abs() < (t - best).abs() {
            best = r;
        }
    }
    best
}

/// Local refinement from `x0` (which need not be feasible) to a feasible
/// point whose objective does not exceed that of `x0`'s direct feasibility
/// mapping. Each family's method is monotone in the objective across its
/// own iterates:
///
/// - hypercube: greedy best-improvement single-coordinate flips from
///   `sign(x0)` until no flip improves;
/// - sphere: projected gradient descent with Armijo backtracking from
///   `x0 / ||x0||`;
/// - univariate demo: unconstrained Armijo gradient descent on the quartic
///   followed by a snap to the nearest constraint root, keeping the
///   descended snap only when it does not lose to snapping `x0` directly.
pub fn nlp_refine(model: &PopModel, x0: &[f64]) -> Hypothesis {
    assert_eq!(x0.len(), model.d, "start dimension mismatch");
    match model.kind {
        PopKind::Bqp => refine_bqp(model, x0),
        PopKind::QuarticSphere => refine_sphere(model, x0),
        PopKind::Univariate => refine_univariate(model, x0[0]),
    }
}

fn refine_bqp(model: &PopModel, x0: &[f64]) -> Hypothesis {
    let mut x: Vec<f64> = x0
        .iter()
        .map(|&t| if t >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let mut value = model.objective(&x);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..model.d {
            x[i] = -x[i];
            let v = model.objective(&x);
            x[i] = -x[i];
            if v < best.map_or(value, |b| b.1) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, v)) => {
                x[i] = -x[i];
                value = v;
            }
            None => break,
        }
    }
    Hypothesis {
        x,
        value,
        source: usize::MAX,
        iteration_capped: false,
    }
}

/// Gradient of the quartic objective; the sphere refiner projects it onto
/// the tangent space.
fn quartic_gradient(model: &PopModel, monos: &[Monomial], x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; model.d];
    for (mono, &c) in monos.iter().zip(&model.coeffs) {
        for pos in 0..mono.len() {
            let i = mono[pos] as usize - 1;
            let mut rest = 1.0;
            for (q, &vj) in mono.iter().enumerate() {
                if q != pos {
                    rest *= x[vj as usize - 1];
                }
            }
            g[i] += c * rest;
        }
    }
    g
}

fn refine_sphere(model: &PopModel, x0: &[f64]) -> Hypothesis {
    let monos = monomials_up_to(model.d, 4);
    let mut x = normalize_or_e1(x0);
    let mut value = model.objective(&x);
    let mut capped = true;
    for _ in 0..MAX_REFINE_ITERS {
        let g = quartic_gradient(model, &monos, &x);
        let radial: f64 = g.iter().zip(&x).map(|(gi, xi)| gi * xi).sum();
        let tangent: Vec<f64> = g
            .iter()
            .zip(&x)
            .map(|(gi, xi)| gi - radial * xi)
            .collect();
        let tnorm2: f64 = tangent.iter().map(|t| t * t).sum();
        if tnorm2.sqrt() <= 1e-12 * (1.0 + value.abs()) {
            capped = false;
            break;
        }
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..=60 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&tangent)
                .map(|(xi, ti)| xi - step * ti)
                .collect();
            let trial = normalize_or_e1(&trial);
            let tv = model.objective(&trial);
            if tv <= value - ARMIJO_C * step * tnorm2 {
                x = trial;
                value = tv;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            capped = false;
            break;
        }
    }
    Hypothesis {
        x,
        value,
        source: usize::MAX,
        iteration_capped: capped,
    }
}

fn refine_univariate(model: &PopModel, x0: f64) -> Hypothesis {
    let p = |t: f64| model.objective(&[t]);
    let dp = |t: f64| {
        model.coeffs[1]
            + 2.0 * model.coeffs[2] * t
            + 3.0 * model.coeffs[3] * t * t
            + 4.0 * model.coeffs[4] * t * t * t
    };
    let mut x = x0;
    let mut capped = true;
    for _ in 0..MAX_REFINE_ITERS {
        let g = dp(x);
        if g.abs() < 1e-12 {
            capped = false;
            break;
        }
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..=60 {
            if p(x - step * g) <= p(x) - ARMIJO_C * step * g * g {
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            capped = false;
            break;
        }
        x -= step * g;
    }
    // Descent is unconstrained; feasibility comes from snapping, and the
    // snapped descent result is kept only when it beats snapping the start.
    let descended = snap_to_root(x);
    let direct = snap_to_root(x0);
    let pick = if p(descended) <= p(direct) {
        descended
    } else {
        direct
    };
    Hypothesis {
        x: vec![pick],
        value: p(pick),
        source: usize::MAX,
        iteration_capped: capped,
    }
}

/// Rounds and refines the top `r` eigenvectors of `x_bar` and returns the
/// hypothesis with the lowest objective (ties broken by lowest eigenvector
/// index). Refinement starts from each eigenvector's raw degree-one block so
/// the descent can cross between rounding cells.
pub fn round_and_refine(model: &PopModel, x_bar: &SymMat, r: usize) -> Hypothesis {
    assert!(r >= 1, "need at least one hypothesis");
    let eig = eig_sym(x_bar).expect("iterate must stay finite");
    let mut best: Option<Hypothesis> = None;
    for idx in 0..r.min(x_bar.n()) {
        let v = eig.vectors.column(idx).clone_owned();
        let start = degree_one_block(model, &v);
        let mut hyp = nlp_refine(model, &start);
        hyp.source = idx;
        if best.as_ref().is_none_or(|b| hyp.value < b.value) {
            best = Some(hyp);
        }
    }
    best.expect("r >= 1 yields at least one hypothesis")
}
