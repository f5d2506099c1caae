//! Polynomial problem models and their dense second-order moment
//! relaxations.
//!
//! A problem over `x` in `R^d` is lifted to the moment matrix
//! `X = v(x) v(x)^T`, where `v(x)` is the vector of all monomials of degree
//! at most two (graded lexicographic order: `1`, `x_1 .. x_d`, `x_1^2`,
//! `x_1 x_2`, ..). Entries of `X` that represent the same monomial are tied
//! by equality constraints; problem-specific identities (`x_i^2 = 1` on the
//! hypercube, `||x||^2 = 1` on the sphere) are multiplied against every
//! basis monomial to produce localizing constraints. The result is a
//! standard-form SDP `min <C, X> s.t. A(X) = b, X >= 0` whose optimum is
//! attained at a rank-one matrix exactly when the relaxation is tight.

use crate::linmap::{LinMap, SparseRow};
use crate::symcore::{svec_index, SymMat, SQRT_2};
use nalgebra::DVector;
use std::collections::BTreeMap;
use thiserror::Error;

/// Errors from relaxation compilation.
#[derive(Debug, Error)]
pub enum BuildError {
    /// The objective coefficient vector has the wrong length.
    #[error("objective expects {expected} coefficients, got {got}")]
    CoefficientLength { expected: usize, got: usize },
}

/// Problem families with their rounding schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopKind {
    /// The built-in demo quartic `x^4 + (2/3)x^3 - 8x^2 - 8x` over the
    /// roots of `(x^2 - 4)(x^2 - 1)`.
    Univariate,
    /// `min <c, v2(x)>` over `x` in `{-1, +1}^d`.
    Bqp,
    /// `min <c, v4(x)>` over the unit sphere.
    QuarticSphere,
}

/// A monomial as its sorted list of (1-based) variable indices; the empty
/// list is the constant `1`. Graded lexicographic order is `(len, lex)`.
pub type Monomial = Vec<u8>;

fn mono_mul(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.sort_unstable();
    out
}

fn mono_eval(mono: &Monomial, x: &[f64]) -> f64 {
    mono.iter().map(|&i| x[i as usize - 1]).product()
}

/// All monomials of degree at most `deg` in `d` variables, graded
/// lexicographic: constant, then each degree in index-lexicographic order.
pub fn monomials_up_to(d: usize, deg: usize) -> Vec<Monomial> {
    let mut out = vec![Vec::new()];
    let mut current: Vec<Monomial> = vec![Vec::new()];
    for _ in 0..deg {
        let mut next = Vec::new();
        for mono in &current {
            let lo = mono.last().copied().unwrap_or(1);
            for i in lo..=(d as u8) {
                let mut m = mono.clone();
                m.push(i);
                next.push(m);
            }
        }
        out.extend(next.iter().cloned());
        current = next;
    }
    out
}

/// Binomial coefficient, exact in `usize` for the sizes used here.
pub fn choose(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut num: usize = 1;
    for i in 0..k {
        num = num * (n - i) / (i + 1);
    }
    num
}

/// Index maps between moment-matrix positions and canonical monomials for
/// the degree-two basis in `d` variables.
pub struct MonomialBasis {
    d: usize,
    basis: Vec<Monomial>,
    /// Product monomial of each `(i, j)` group, with the group's positions
    /// in upper-triangle scan order; groups sorted graded-lexicographically.
    groups: Vec<(Monomial, Vec<(usize, usize)>)>,
    /// Canonical (first-in-scan-order) position of each product monomial.
    canon: BTreeMap<Monomial, (usize, usize)>,
}

impl MonomialBasis {
    /// Builds the maps for the degree-two monomial basis.
    pub fn new(d: usize) -> Self {
        let basis = monomials_up_to(d, 2);
        let n = basis.len();
        let mut by_mono: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
        // Scan order mirrors the packed layout: column-major upper triangle,
        // so the first occurrence of a monomial has the smallest packed
        // index and becomes the group's canonical position.
        for j in 0..n {
            for i in 0..=j {
                by_mono
                    .entry(mono_mul(&basis[i], &basis[j]))
                    .or_default()
                    .push((i, j));
            }
        }
        let mut groups: Vec<(Monomial, Vec<(usize, usize)>)> = by_mono.into_iter().collect();
        groups.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        let canon = groups
            .iter()
            .map(|(mono, occ)| (mono.clone(), occ[0]))
            .collect();
        MonomialBasis {
            d,
            basis,
            groups,
            canon,
        }
    }

    /// Number of basis monomials (the moment-matrix side length).
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    /// True when the basis is empty (never for `d >= 1`).
    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Problem dimension.
    pub fn dimension(&self) -> usize {
        self.d
    }

    /// The basis monomials in graded lexicographic order.
    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    /// Duplicate-position groups, graded-lexicographically ordered by their
    /// product monomial.
    pub fn groups(&self) -> &[(Monomial, Vec<(usize, usize)>)] {
        &self.groups
    }

    /// Canonical moment-matrix position representing `mono`, if `mono` has
    /// degree at most four in range.
    pub fn position_of(&self, mono: &Monomial) -> Option<(usize, usize)> {
        self.canon.get(mono).copied()
    }

    /// Product monomial represented at position `(i, j)`.
    pub fn monomial_at(&self, i: usize, j: usize) -> Monomial {
        mono_mul(&self.basis[i], &self.basis[j])
    }

    /// Evaluates the basis monomials at `x`.
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.basis.len(), self.basis.iter().map(|m| mono_eval(m, x)))
    }
}

/// The source polynomial problem with evaluation, lifting, and feasibility
/// hooks.
pub struct PopModel {
    /// Problem family (also selects the rounding scheme).
    pub kind: PopKind,
    /// Number of variables (1 for the univariate demo).
    pub d: usize,
    /// Objective coefficients. Univariate: powers `x^0 .. x^4`. Bqp: one
    /// coefficient per degree-two basis monomial. QuarticSphere: one per
    /// monomial of degree at most four. Monomial order as in
    /// [`monomials_up_to`].
    pub coeffs: Vec<f64>,
    /// Trace cap on rank-one lifts of feasible points, used by the
    /// suboptimality certificate.
    pub trace_bound: f64,
}

impl PopModel {
    /// The monomial lifting vector `v(x)`: `(1, x, x^2)` for the univariate
    /// demo, the degree-two basis otherwise.
    pub fn lift_vector(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.d, "point dimension mismatch");
        match self.kind {
            PopKind::Univariate => DVector::from_vec(vec![1.0, x[0], x[0] * x[0]]),
            _ => {
                let basis = monomials_up_to(self.d, 2);
                DVector::from_iterator(basis.len(), basis.iter().map(|m| mono_eval(m, x)))
            }
        }
    }

    /// Rank-one lift `v(x) v(x)^T`.
    pub fn lift(&self, x: &[f64]) -> SymMat {
        SymMat::rank_one(&self.lift_vector(x))
    }

    /// Objective value `p(x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d, "point dimension mismatch");
        match self.kind {
            PopKind::Univariate => {
                let t = x[0];
                self.coeffs[0]
                    + self.coeffs[1] * t
                    + self.coeffs[2] * t * t
                    + self.coeffs[3] * t * t * t
                    + self.coeffs[4] * t * t * t * t
            }
            PopKind::Bqp => {
                let basis = monomials_up_to(self.d, 2);
                basis
                    .iter()
                    .zip(&self.coeffs)
                    .map(|(m, c)| c * mono_eval(m, x))
                    .sum()
            }
            PopKind::QuarticSphere => {
                let basis = monomials_up_to(self.d, 4);
                basis
                    .iter()
                    .zip(&self.coeffs)
                    .map(|(m, c)| c * mono_eval(m, x))
                    .sum()
            }
        }
    }

    /// Whether `x` satisfies the problem's equality constraints to `tol`.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.d {
            return false;
        }
        match self.kind {
            PopKind::Univariate => {
                let t = x[0];
                ((t * t - 4.0) * (t * t - 1.0)).abs() <= tol
            }
            PopKind::Bqp => x.iter().all(|&t| (t * t - 1.0).abs() <= tol),
            PopKind::QuarticSphere => {
                (x.iter().map(|&t| t * t).sum::<f64>() - 1.0).abs() <= tol
            }
        }
    }
}

/// A compiled standard-form SDP with its source model.
pub struct SdpProblem {
    /// Constraint operator.
    pub map: LinMap,
    /// Constraint right-hand side.
    pub b: DVector<f64>,
    /// Objective matrix.
    pub c: SymMat,
    /// Source problem.
    pub pop: PopModel,
}

impl SdpProblem {
    /// Cone side length.
    pub fn n(&self) -> usize {
        self.map.side()
    }

    /// Constraint count.
    pub fn m(&self) -> usize {
        self.map.m()
    }
}

/// Packed-coordinate coefficient that reads entry `(i, j)` with unit weight
/// (off-diagonal packed entries carry the `sqrt(2)` factor, so the matching
/// row coefficient is its inverse). Written as `0.5 * SQRT_2` rather than
/// `1.0 / SQRT_2` (they differ in the last bit) so that every coefficient
/// built from it is a correctly rounded multiple of `SQRT_2`, which the text
/// export format reproduces bit-for-bit.
fn entry_coeff(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.5 * SQRT_2
    }
}

/// Shared moment-constraint skeleton: the unit top-left entry plus one
/// chained difference per extra occurrence of each repeated monomial.
fn moment_rows(mb: &MonomialBasis) -> (Vec<SparseRow>, Vec<f64>) {
    let mut rows: Vec<SparseRow> = vec![vec![(svec_index(0, 0), 1.0)]];
    let mut b = vec![1.0];
    for (_, occ) in mb.groups() {
        for pair in occ.windows(2) {
            let (i0, j0) = pair[0];
            let (i1, j1) = pair[1];
            rows.push(vec![
                (svec_index(i0, j0), entry_coeff(i0, j0)),
                (svec_index(i1, j1), -entry_coeff(i1, j1)),
            ]);
            b.push(0.0);
        }
    }
    (rows, b)
}

/// Places polynomial coefficients into an objective matrix: coefficient
/// `c_w` of monomial `w` lands on `w`'s canonical moment-matrix position, so
/// `<C, lift(x)> = p(x)` for every `x`.
fn objective_matrix(mb: &MonomialBasis, monos: &[Monomial], coeffs: &[f64]) -> SymMat {
    let mut c = SymMat::zeros(mb.len());
    let data = c.svec_mut();
    for (mono, &cw) in monos.iter().zip(coeffs) {
        let (i, j) = mb
            .position_of(mono)
            .expect("objective monomial exceeds degree four");
        data[svec_index(i, j)] += cw * entry_coeff(i, j);
    }
    c
}

/// Compiles the built-in univariate demo: minimize
/// `x^4 + (2/3)x^3 - 8x^2 - 8x` over the roots of `(x^2 - 4)(x^2 - 1)`.
///
/// With moment vector `z = (x, x^2, x^3)` the relaxation's free entries are
/// tied by `X_00 = 1`, `X_11 = X_02`, and `X_22 = 5 X_02 - 4` (the constraint
/// polynomial eliminates `x^4`), and the objective reads
/// `(2/3) z_3 - 3 z_2 - 8 z_1 - 4` on that slice.
pub fn build_univariate() -> SdpProblem {
    let rows: Vec<SparseRow> = vec![
        vec![(svec_index(0, 0), 1.0)],
        vec![
            (svec_index(1, 1), 1.0),
            (svec_index(0, 2), -0.5 * SQRT_2),
        ],
        vec![
            (svec_index(2, 2), 1.0),
            (svec_index(0, 2), -2.5 * SQRT_2),
        ],
    ];
    let b = DVector::from_vec(vec![1.0, 0.0, -4.0]);
    let mut c = SymMat::zeros(3);
    c.set_entry(0, 0, -4.0);
    c.set_entry(0, 1, -4.0);
    c.set_entry(1, 1, -3.0);
    c.set_entry(1, 2, 1.0 / 3.0);
    let pop = PopModel {
        kind: PopKind::Univariate,
        d: 1,
        coeffs: vec![0.0, -8.0, -8.0, 2.0 / 3.0, 1.0],
        trace_bound: 21.0,
    };
    SdpProblem {
        map: LinMap::new(3, rows),
        b,
        c,
        pop,
    }
}

/// Compiles `min <c, v2(x)>` over the hypercube `{-1, +1}^d`.
///
/// `c` has one coefficient per degree-two basis monomial (length
/// `C(d+2, 2)`). Localizing rows equate `[x_i^2 mu] = [mu]` for every
/// variable `i` and basis monomial `mu`. Rows for `mu = x_j^2` with `j < i`
/// repeat constraints already implied by the moment rows and the symmetric
/// `(j, i)` identity; they are kept (the constraint count is part of the
/// relaxation's shape) but tagged so the normal-equation factorization uses
/// the independent complement.
pub fn build_bqp(c: &[f64], d: usize) -> Result<SdpProblem, BuildError> {
    assert!(d >= 1, "hypercube problems need d >= 1");
    let mb = MonomialBasis::new(d);
    let n = mb.len();
    if c.len() != n {
        return Err(BuildError::CoefficientLength {
            expected: n,
            got: c.len(),
        });
    }
    let (mut rows, mut b) = moment_rows(&mb);
    let mut redundant = Vec::new();
    for i in 1..=(d as u8) {
        for mu in mb.basis() {
            let hi = mono_mul(mu, &vec![i, i]);
            let (hi_i, hi_j) = mb.position_of(&hi).expect("degree <= 4");
            let (mu_i, mu_j) = mb.position_of(mu).expect("degree <= 2");
            if mu.len() == 2 && mu[0] == mu[1] && mu[0] < i {
                redundant.push(rows.len());
            }
            rows.push(vec![
                (svec_index(hi_i, hi_j), entry_coeff(hi_i, hi_j)),
                (svec_index(mu_i, mu_j), -entry_coeff(mu_i, mu_j)),
            ]);
            b.push(0.0);
        }
    }
    let basis_rows = complement(rows.len(), &redundant);
    let cmat = objective_matrix(&mb, mb.basis(), c);
    let pop = PopModel {
        kind: PopKind::Bqp,
        d,
        coeffs: c.to_vec(),
        trace_bound: n as f64,
    };
    Ok(SdpProblem {
        map: LinMap::with_basis(n, rows, basis_rows),
        b: DVector::from_vec(b),
        c: cmat,
        pop,
    })
}

/// Compiles `min <c, v4(x)>` over the unit sphere.
///
/// `c` has one coefficient per monomial of degree at most four (length
/// `C(d+4, 4)`). One localizing row per basis monomial `mu` encodes
/// `sum_i [x_i^2 mu] = [mu]`. On the sphere the lift's trace is
/// `1 + ||x||^2 + (sum_i x_i^2)^2 = 3`, which is the trace cap.
pub fn build_q4s(c: &[f64], d: usize) -> Result<SdpProblem, BuildError> {
    assert!(d >= 2, "sphere problems need d >= 2");
    let mb = MonomialBasis::new(d);
    let n = mb.len();
    let expected = choose(d + 4, 4);
    if c.len() != expected {
        return Err(BuildError::CoefficientLength {
            expected,
            got: c.len(),
        });
    }
    let (mut rows, mut b) = moment_rows(&mb);
    for mu in mb.basis() {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for i in 1..=(d as u8) {
            let hi = mono_mul(mu, &vec![i, i]);
            let (hi_i, hi_j) = mb.position_of(&hi).expect("degree <= 4");
            *acc.entry(svec_index(hi_i, hi_j)).or_insert(0.0) += entry_coeff(hi_i, hi_j);
        }
        let (mu_i, mu_j) = mb.position_of(mu).expect("degree <= 2");
        *acc.entry(svec_index(mu_i, mu_j)).or_insert(0.0) -= entry_coeff(mu_i, mu_j);
        rows.push(acc.into_iter().collect());
        b.push(0.0);
    }
    let monos = monomials_up_to(d, 4);
    let cmat = objective_matrix(&mb, &monos, c);
    let pop = PopModel {
        kind: PopKind::QuarticSphere,
        d,
        coeffs: c.to_vec(),
        trace_bound: 3.0,
    };
    Ok(SdpProblem {
        map: LinMap::new(n, rows),
        b: DVector::from_vec(b),
        c: cmat,
        pop,
    })
}

fn complement(m: usize, excluded: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; m];
    for &i in excluded {
        keep[i] = false;
    }
    (0..m).filter(|&i| keep[i]).collect()
}

/// Standard normal draws from a fixed, platform-independent stream, used for
/// reproducible random objectives.
///
/// The stream is SplitMix64 over the seed (state advances by
/// `0x9e3779b97f4a7c15`; output is the usual 30/27/31 xor-multiply mix),
/// mapped to uniforms in `(0, 1]` via `((z >> 11) + 1) * 2^-53`, then
/// transformed in pairs by Box-Muller (`sqrt(-2 ln u1) * {cos, sin}(2 pi
/// u2)`); for odd lengths the trailing sine draw is discarded.
pub fn gaussian_coeffs(seed: u64, len: usize) -> Vec<f64> {
    let mut state = seed;
    let mut next_uniform = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        ((z >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    };
    let mut out = Vec::with_capacity(len + 1);
    while out.len() < len {
        let u1 = next_uniform();
        let u2 = next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(len);
    out
}

/// Builds a random instance of the given family with coefficients drawn
/// from [`gaussian_coeffs`].
pub fn build_random(kind: PopKind, d: usize, seed: u64) -> Result<SdpProblem, BuildError> {
    match kind {
        PopKind::Univariate => Ok(build_univariate()),
        PopKind::Bqp => build_bqp(&gaussian_coeffs(seed, choose(d + 2, 2)), d),
        PopKind::QuarticSphere => build_q4s(&gaussian_coeffs(seed, choose(d + 4, 4)), d),
    }
}
