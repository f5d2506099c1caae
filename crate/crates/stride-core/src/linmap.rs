//! The linear constraint operator `A : S^n -> R^m`, its adjoint, and the
//! cached normal-equation solve `(A A*)^{-1}`.
//!
//! Rows are sparse vectors over packed symmetric coordinates (each row is
//! the packed form of a constraint matrix `A_i`), so `A(X)` is a batch of
//! sparse dot products and `A* y` is a sparse scatter.
//!
//! The moment-relaxation compilers can emit row sets with a known linear
//! dependency structure (binary-hypercube localizing rows repeat information
//! present in the moment rows). Those compilers tag the dependent rows, and
//! the normal-equation factorization is built on the complementary
//! independent subset; solutions are zero on the tagged rows. For a
//! right-hand side in the range of `A` (every solver call site), the
//! zero-filled solution satisfies the full normal equations, which is
//! asserted in debug builds.

use crate::symcore::{svec_len, SymMat};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::sync::OnceLock;
use thiserror::Error;

/// Errors from normal-equation factorization.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LinMapError {
    /// `A A*` is numerically rank deficient on the factorization subset.
    #[error("normal equations are singular (rank-deficient constraint rows)")]
    SingularNormalEquations,
}

/// Smallest acceptable ratio of extreme Cholesky pivots; below this the
/// factorization subset is treated as rank deficient.
const PIVOT_RATIO_MIN: f64 = 1e-10;

/// One sparse constraint row: `(packed index, coefficient)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

struct NormalFactor {
    chol: Cholesky<f64, Dyn>,
    /// Ratio of smallest to largest squared Cholesky diagonal.
    pivot_ratio: f64,
}

/// The constraint operator with a lazily built, cached factorization of
/// `A A*`. Immutable after construction; concurrent solves are safe.
pub struct LinMap {
    n: usize,
    rows: Vec<SparseRow>,
    /// Indices of rows included in the normal-equation factorization.
    basis: Vec<usize>,
    factor: OnceLock<Result<NormalFactor, LinMapError>>,
}

impl LinMap {
    /// Builds an operator over `S^n` whose rows are all treated as
    /// independent for factorization purposes.
    pub fn new(n: usize, rows: Vec<SparseRow>) -> Self {
        let basis = (0..rows.len()).collect();
        Self::with_basis(n, rows, basis)
    }

    /// Builds an operator whose factorization uses only the rows listed in
    /// `basis` (callers tag the remaining rows as linear combinations of
    /// basis rows).
    pub fn with_basis(n: usize, rows: Vec<SparseRow>, basis: Vec<usize>) -> Self {
        let len = svec_len(n);
        for row in &rows {
            for &(idx, _) in row {
                assert!(idx < len, "row index {idx} out of range for side {n}");
            }
        }
        assert!(
            basis.iter().all(|&i| i < rows.len()),
            "basis index out of range"
        );
        LinMap {
            n,
            rows,
            basis,
            factor: OnceLock::new(),
        }
    }

    /// Cone side length `n`.
    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of constraint rows `m`.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// The sparse rows (packed coordinates).
    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// `A(X)`: component `i` is the Frobenius inner product of row `i`'s
    /// constraint matrix with `X`.
    pub fn apply(&self, x: &SymMat) -> DVector<f64> {
        assert_eq!(x.n(), self.n, "side length mismatch");
        let data = x.svec();
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(idx, c)| c * data[idx]).sum()),
        )
    }

    /// `A* y = sum_i y_i A_i`.
    pub fn adjoint(&self, y: &DVector<f64>) -> SymMat {
        assert_eq!(y.len(), self.rows.len(), "row count mismatch");
        let mut out = SymMat::zeros(self.n);
        let data = out.svec_mut();
        for (row, &yi) in self.rows.iter().zip(y.iter()) {
            if yi != 0.0 {
                for &(idx, c) in row {
                    data[idx] += yi * c;
                }
            }
        }
        out
    }

    /// Forces the factorization; returns its error if the basis rows are
    /// numerically dependent.
    pub fn factorize(&self) -> Result<(), LinMapError> {
        self.factor().map(|_| ())
    }

    /// Ratio of smallest to largest pivot of the cached factorization.
    pub fn pivot_ratio(&self) -> Result<f64, LinMapError> {
        self.factor().map(|f| f.pivot_ratio)
    }

    fn factor(&self) -> Result<&NormalFactor, LinMapError> {
        self.factor
            .get_or_init(|| self.build_factor())
            .as_ref()
            .map_err(|e| e.clone())
    }

    fn build_factor(&self) -> Result<NormalFactor, LinMapError> {
        let mb = self.basis.len();
        // Position of each full row inside the basis, or usize::MAX.
        let mut pos = vec![usize::MAX; self.rows.len()];
        for (k, &i) in self.basis.iter().enumerate() {
            pos[i] = k;
        }
        // Accumulate the Gram matrix coordinate by coordinate: every packed
        // coordinate touches only a handful of rows, so summing outer
        // products of the per-coordinate row lists is linear in the total
        // number of nonzeros.
        let mut by_coord: Vec<Vec<(usize, f64)>> = vec![Vec::new(); svec_len(self.n)];
        for &i in &self.basis {
            for &(idx, c) in &self.rows[i] {
                by_coord[idx].push((pos[i], c));
            }
        }
        let mut gram = DMatrix::zeros(mb, mb);
        for list in &by_coord {
            for &(k, a) in list {
                for &(l, b) in list {
                    gram[(k, l)] += a * b;
                }
            }
        }
        let chol = Cholesky::new(gram).ok_or(LinMapError::SingularNormalEquations)?;
        let diag = chol.l_dirty().diagonal();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for d in diag.iter() {
            let p = d * d;
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let pivot_ratio = lo / hi;
        // Negated form on purpose: a NaN ratio (all-zero rows) must land in
        // the error branch too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(pivot_ratio > PIVOT_RATIO_MIN) {
            return Err(LinMapError::SingularNormalEquations);
        }
        Ok(NormalFactor { chol, pivot_ratio })
    }

    /// Solves `A A* xi = rhs`.
    ///
    /// `rhs` must lie in the range of `A` (all solver right-hand sides are
    /// of the form `A(something) + t*b` with `b` itself in the range); the
    /// residual is then bounded by `1e-12 * (1 + ||rhs||)` and asserted in
    /// debug builds. The factorization is built on first use and cached.
    pub fn solve_normal(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, LinMapError> {
        assert_eq!(rhs.len(), self.rows.len(), "row count mismatch");
        let factor = self.factor()?;
        let compressed =
            DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&i| rhs[i]));
        let sol = factor.chol.solve(&compressed);
        let mut xi = DVector::zeros(self.rows.len());
        for (k, &i) in self.basis.iter().enumerate() {
            xi[i] = sol[k];
        }
        #[cfg(debug_assertions)]
        {
            let residual = (self.apply(&self.adjoint(&xi)) - rhs).norm();
            debug_assert!(
                residual <= 1e-12 * (1.0 + rhs.norm()),
                "normal-equation residual {residual:.3e} out of tolerance \
                 (right-hand side outside the operator range?)"
            );
        }
        Ok(xi)
    }
}
