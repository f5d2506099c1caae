//! Packed symmetric-matrix arithmetic, symmetric eigendecomposition, and
//! projection onto the PSD cone.
//!
//! [`SymMat`] stores an `n x n` symmetric matrix as its upper triangle packed
//! column-major into a length `n(n+1)/2` vector, with off-diagonal entries
//! scaled by `sqrt(2)`. Under that scaling the Euclidean dot product of two
//! packed vectors equals the Frobenius inner product of the matrices, so
//! constraint operators become plain sparse rows over packed coordinates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Off-diagonal packing scale.
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Errors from the symmetric kernel.
#[derive(Debug, Error)]
pub enum SymError {
    /// Input contained a NaN or infinity.
    #[error("matrix contains a non-finite entry")]
    InvalidInput,
}

/// Packed length of the upper triangle of an `n x n` symmetric matrix.
#[inline]
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed position of entry `(i, j)` with `i <= j` (column-major upper
/// triangle: all entries of column `j` precede those of column `j + 1`).
#[inline]
pub fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Symmetric `n x n` matrix in packed scaled-vector form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    n: usize,
    data: Vec<f64>,
}

impl SymMat {
    /// The zero matrix of side length `n`.
    pub fn zeros(n: usize) -> Self {
        SymMat {
            n,
            data: vec![0.0; svec_len(n)],
        }
    }

    /// The identity matrix of side length `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[svec_index(i, i)] = 1.0;
        }
        m
    }

    /// Builds from a packed scaled vector. The inverse of [`SymMat::svec`];
    /// the round trip is exact because no arithmetic is performed.
    pub fn smat(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), svec_len(n), "packed length mismatch");
        SymMat { n, data }
    }

    /// The packed scaled vector (off-diagonals carry the `sqrt(2)` factor).
    pub fn svec(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the packed vector.
    pub fn svec_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Builds from a dense matrix, symmetrizing via `(A + A^T) / 2`.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
        let n = a.nrows();
        let mut data = Vec::with_capacity(svec_len(n));
        for j in 0..n {
            for i in 0..=j {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                data.push(if i == j { v } else { v * SQRT_2 });
            }
        }
        SymMat { n, data }
    }

    /// Expands to a dense matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in 0..=j {
                let v = self.entry(i, j);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    /// The rank-one matrix `v v^T`.
    pub fn rank_one(v: &DVector<f64>) -> Self {
        let n = v.len();
        let mut data = Vec::with_capacity(svec_len(n));
        for j in 0..n {
            for i in 0..=j {
                let p = v[i] * v[j];
                data.push(if i == j { p } else { p * SQRT_2 });
            }
        }
        SymMat { n, data }
    }

    /// Side length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Matrix entry `(i, j)` (unscaled; symmetric access).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let v = self.data[svec_index(i, j)];
        if i == j {
            v
        } else {
            v / SQRT_2
        }
    }

    /// Sets matrix entry `(i, j)` (and its mirror) to `v`.
    pub fn set_entry(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.data[svec_index(i, j)] = if i == j { v } else { v * SQRT_2 };
    }

    /// Adds `v` to matrix entry `(i, j)` (and its mirror).
    pub fn add_to_entry(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.data[svec_index(i, j)] += if i == j { v } else { v * SQRT_2 };
    }

    /// Frobenius inner product; equals the packed dot product by the
    /// `sqrt(2)` scaling convention.
    pub fn inner(&self, other: &SymMat) -> f64 {
        assert_eq!(self.n, other.n, "side length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Trace (sum of diagonal entries).
    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[svec_index(i, i)]).sum()
    }

    /// In-place `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &SymMat) {
        assert_eq!(self.n, x.n, "side length mismatch");
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    /// Returns `self * alpha`.
    pub fn scaled(&self, alpha: f64) -> SymMat {
        SymMat {
            n: self.n,
            data: self.data.iter().map(|a| a * alpha).collect(),
        }
    }

    /// True if every packed entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

impl std::ops::Add<&SymMat> for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.n, rhs.n, "side length mismatch");
        SymMat {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl std::ops::Sub<&SymMat> for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.n, rhs.n, "side length mismatch");
        SymMat {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Full spectral decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    /// Eigenvalues sorted non-increasing.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, column `k` paired with `values[k]`.
    pub vectors: DMatrix<f64>,
}

/// Full symmetric eigendecomposition with eigenvalues sorted non-increasing.
pub fn eig_sym(a: &SymMat) -> Result<EigDecomp, SymError> {
    if !a.is_finite() {
        return Err(SymError::InvalidInput);
    }
    let dense = a.to_dense();
    let se = dense.symmetric_eigen();
    let n = a.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[j]
            .partial_cmp(&se.eigenvalues[i])
            .expect("eigenvalues are finite")
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    Ok(EigDecomp { values, vectors })
}

/// Projection onto the PSD cone: clips negative eigenvalues to zero.
/// Also returns the decomposition so callers can reuse the eigenpairs.
pub fn proj_psd(a: &SymMat) -> Result<(SymMat, EigDecomp), SymError> {
    let eig = eig_sym(a)?;
    Ok((psd_part(&eig), eig))
}

/// Assembles the PSD part `sum_i max(lambda_i, 0) v_i v_i^T` from a
/// decomposition.
pub fn psd_part(eig: &EigDecomp) -> SymMat {
    let n = eig.values.len();
    // Eigenvalues are sorted non-increasing, so the positive part is a
    // leading block; skip the multiply entirely when it is empty.
    let npos = eig.values.iter().take_while(|&&l| l > 0.0).count();
    if npos == 0 {
        return SymMat::zeros(n);
    }
    let vpos = eig.vectors.columns(0, npos);
    let mut scaled = vpos.clone_owned();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= eig.values[k];
    }
    let dense = &scaled * vpos.transpose();
    SymMat::from_dense(&dense)
}

/// Moreau decomposition of `a` off a single eigendecomposition:
/// returns `(x, w, eig)` with `x` the PSD projection of `a` and
/// `w = x - a` elementwise, so `a = x - w` holds to one rounding error per
/// entry and `w` equals the PSD projection of `-a` up to roundoff.
pub fn moreau_split(a: &SymMat) -> Result<(SymMat, SymMat, EigDecomp), SymError> {
    let (x, eig) = proj_psd(a)?;
    let w = &x - a;
    Ok((x, w, eig))
}

/// Smallest eigenvalue.
pub fn min_eig(a: &SymMat) -> f64 {
    let eig = eig_sym(a).expect("min_eig requires a finite matrix");
    eig.values[eig.values.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_sym(n: usize, seed: u64) -> SymMat {
        // Cheap deterministic fill; statistical quality is irrelevant here.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let mut a = SymMat::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                a.set_entry(i, j, next());
            }
        }
        a
    }

    #[test]
    fn svec_smat_round_trip_is_exact() {
        let a = random_sym(7, 3);
        let b = SymMat::smat(7, a.svec().to_vec());
        assert_eq!(a, b);
    }

    #[test]
    fn packed_dot_equals_frobenius_inner_product() {
        let a = random_sym(6, 1);
        let b = random_sym(6, 2);
        let da = a.to_dense();
        let db = b.to_dense();
        let frob = (da.transpose() * db).trace();
        assert_relative_eq!(a.inner(&b), frob, max_relative = 1e-14);
    }

    #[test]
    fn eig_diagonal_matrix() {
        let mut a = SymMat::zeros(2);
        a.set_entry(0, 0, 3.0);
        a.set_entry(1, 1, 1.0);
        let eig = eig_sym(&a).unwrap();
        assert_relative_eq!(eig.values[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(eig.values[1], 1.0, epsilon = 1e-14);
        // Eigenvectors of a diagonal matrix are signed unit vectors.
        for k in 0..2 {
            let col = eig.vectors.column(k);
            assert_relative_eq!(col.amax(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eig_exchange_matrix() {
        let mut a = SymMat::zeros(2);
        a.set_entry(0, 1, 1.0);
        let eig = eig_sym(&a).unwrap();
        assert_relative_eq!(eig.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(eig.values[1], -1.0, epsilon = 1e-14);
        let s = 1.0 / SQRT_2;
        let v0 = eig.vectors.column(0);
        assert_relative_eq!(v0[0].abs(), s, epsilon = 1e-12);
        assert_relative_eq!(v0[1].abs(), s, epsilon = 1e-12);
        assert_relative_eq!(v0[0] * v0[1], 0.5, epsilon = 1e-12);
        let v1 = eig.vectors.column(1);
        assert_relative_eq!(v1[0] * v1[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn eig_reconstruction_and_orthonormality() {
        for seed in 0..20 {
            let a = random_sym(5, 100 + seed);
            let eig = eig_sym(&a).unwrap();
            let recon =
                &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
            let err = (recon - a.to_dense()).norm();
            assert!(err <= 1e-12 * (1.0 + a.norm()), "reconstruction {err}");
            let orth = (eig.vectors.transpose() * &eig.vectors - DMatrix::identity(5, 5)).norm();
            assert!(orth <= 1e-12 * 5.0, "orthonormality {orth}");
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let mut a = SymMat::zeros(3);
        a.set_entry(0, 1, f64::NAN);
        assert!(matches!(eig_sym(&a), Err(SymError::InvalidInput)));
    }

    #[test]
    fn proj_psd_clips_negative_eigenvalues() {
        let mut a = SymMat::zeros(2);
        a.set_entry(0, 0, 1.0);
        a.set_entry(1, 1, -1.0);
        let (p, _) = proj_psd(&a).unwrap();
        assert_relative_eq!(p.entry(0, 0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.entry(1, 1), 0.0, epsilon = 1e-14);
        assert_relative_eq!(p.entry(0, 1), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn proj_psd_fixes_psd_matrices() {
        // v v^T + small identity is strictly PD.
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut a = SymMat::rank_one(&v);
        for i in 0..3 {
            a.add_to_entry(i, i, 0.1);
        }
        let (p, _) = proj_psd(&a).unwrap();
        assert!((&p - &a).norm() <= 1e-12 * (1.0 + a.norm()));
    }

    #[test]
    fn moreau_identity_holds() {
        for seed in 0..10 {
            let a = random_sym(6, 200 + seed);
            let (pa, _) = proj_psd(&a).unwrap();
            let (pna, _) = proj_psd(&a.scaled(-1.0)).unwrap();
            let diff = &(&pa - &pna) - &a;
            assert!(diff.norm() <= 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn moreau_split_is_exact_and_complementary() {
        for seed in 0..10 {
            let a = random_sym(6, 300 + seed);
            let (x, w, _) = moreau_split(&a).unwrap();
            // Only one subtraction separates a from x - w, so the identity
            // holds to a unit of roundoff rather than the eigensolver's
            // reconstruction error.
            let back = &x - &w;
            assert!((&back - &a).norm() <= 1e-15 * (1.0 + a.norm()));
            assert!(min_eig(&x) >= -1e-12 * (1.0 + x.norm()));
            assert!(min_eig(&w) >= -1e-10 * (1.0 + w.norm()));
            let comp = x.inner(&w).abs();
            assert!(comp <= 1e-10 * (1.0 + x.norm() * w.norm()), "comp {comp}");
        }
    }

    #[test]
    fn projection_is_nonexpansive() {
        for seed in 0..10 {
            let a = random_sym(5, 400 + seed);
            let b = random_sym(5, 500 + seed);
            let (pa, _) = proj_psd(&a).unwrap();
            let (pb, _) = proj_psd(&b).unwrap();
            assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-13);
        }
    }

    #[test]
    fn min_eig_matches_full_decomposition() {
        let mut a = SymMat::zeros(2);
        a.set_entry(0, 0, 2.0);
        a.set_entry(1, 1, -3.0);
        assert_relative_eq!(min_eig(&a), -3.0, epsilon = 1e-14);
        assert_relative_eq!(min_eig(&SymMat::identity(4)), 1.0, epsilon = 1e-14);
        let r = random_sym(5, 600);
        let eig = eig_sym(&r).unwrap();
        assert_relative_eq!(min_eig(&r), eig.values[4], epsilon = 1e-12);
    }

    #[test]
    fn trace_and_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let x = SymMat::rank_one(&v);
        assert_relative_eq!(x.trace(), 21.0, epsilon = 1e-13);
        assert_relative_eq!(x.entry(0, 2), 4.0, epsilon = 1e-13);
        assert_relative_eq!(x.entry(2, 1), 8.0, epsilon = 1e-13);
    }
}
