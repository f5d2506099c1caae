//! Shared fixtures for the integration suites: a slow-but-simple alternating
//! projection oracle, deterministic random projection instances, and small
//! measurement helpers.

#![allow(dead_code)] // shared across test binaries; each uses a subset

use nalgebra::DVector;
use stride_core::linmap::{LinMap, SparseRow};
use stride_core::relax::gaussian_coeffs;
use stride_core::symcore::{proj_psd, svec_len, SymMat};

/// Splitmix64 step: drives the deterministic fixture layout (row supports,
/// sizes) so instances are reproducible across runs and platforms.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reference projection of `z` onto `{X ⪰ 0 : A(X) = b}` by alternating the
/// affine projection `X ← X + A*(AA*)⁻¹(b − A(X))` with the PSD projection,
/// the latter carrying the usual correction term (the affine step needs
/// none: corrections in a subspace's normal directions are annihilated by
/// the next subspace projection).
///
/// Runs `iters` rounds, stopping early once the iterate has been moving by
/// no more than `1e-13·(1+‖X‖)` per round for 64 consecutive rounds: at
/// that amplitude the sequence is bouncing inside its floating-point noise
/// ball, and measured against full budgets the early iterate agrees with
/// the budget-`iters` one to ~5e-14 relative, eight orders below any
/// tolerance this oracle is consulted at. Kept out of the library on
/// purpose: convergence is far too slow for production use, which is what
/// makes it an independent check on the two-phase projection solver.
pub fn dykstra_project(z: &SymMat, map: &LinMap, b: &DVector<f64>, iters: usize) -> SymMat {
    assert!(iters >= 1, "at least one round");
    const CALM_REL: f64 = 1e-13;
    const CALM_ROUNDS: usize = 64;
    let mut x = z.clone();
    let mut q = SymMat::zeros(z.n());
    let mut calm = 0usize;
    for _ in 0..iters {
        let mut affine = x.clone();
        let residual = b - map.apply(&affine);
        let xi = map.solve_normal(&residual).expect("normal solve");
        affine.axpy(1.0, &map.adjoint(&xi));
        let mut shifted = affine;
        shifted.axpy(1.0, &q);
        let (projected, _) = proj_psd(&shifted).expect("eigendecomposition");
        let mut q_next = shifted;
        q_next.axpy(-1.0, &projected);
        let mut step = projected.clone();
        step.axpy(-1.0, &x);
        let drift = step.norm();
        x = projected;
        q = q_next;
        if drift <= CALM_REL * (1.0 + x.norm()) {
            calm += 1;
            if calm >= CALM_ROUNDS {
                break;
            }
        } else {
            calm = 0;
        }
    }
    x
}

/// One random projection instance: independent sparse rows, a strictly
/// positive definite point satisfying them, and a query point at a
/// controlled offset whose projection the tests compute two ways.
pub struct ProjInstance {
    pub map: LinMap,
    pub b: DVector<f64>,
    /// The strictly feasible point the right-hand side was built from.
    pub interior: SymMat,
    /// Query point: `interior` plus a symmetric offset of relative size
    /// `noise`; past ~0.5 the query usually leaves the cone, so both
    /// constraint sets are genuinely active in the projection.
    pub z: SymMat,
}

/// Builds a deterministic instance with `m` sparse rows on `n×n` symmetric
/// matrices. Row supports and values come from fixed streams seeded by
/// `seed`; the rare dependent draw is discarded and rebuilt with a salt.
pub fn random_projection_instance(n: usize, m: usize, noise: f64, seed: u64) -> ProjInstance {
    assert!(m <= svec_len(n), "more rows than packed coordinates");
    for salt in 0..32u64 {
        let mut layout = seed
            .wrapping_add(salt)
            .wrapping_mul(0xD129_0E4F_B0B2_C2A5)
            .wrapping_add(0x0BAD_5EED_0BAD_5EED);
        let len = svec_len(n);
        let mut rows: Vec<SparseRow> = Vec::with_capacity(m);
        let values = gaussian_coeffs(seed.wrapping_add(salt * 7919 + 1), 8 * m);
        let mut next_value = values.into_iter();
        for _ in 0..m {
            let nnz = (3 + (splitmix64(&mut layout) % 4) as usize).min(len);
            let mut support = Vec::with_capacity(nnz);
            while support.len() < nnz {
                let idx = (splitmix64(&mut layout) % len as u64) as usize;
                if !support.contains(&idx) {
                    support.push(idx);
                }
            }
            let row: SparseRow = support
                .into_iter()
                .map(|idx| (idx, next_value.next().expect("value stream")))
                .collect();
            rows.push(row);
        }
        let map = LinMap::new(n, rows);
        if map.factorize().is_err() {
            continue;
        }
        let mut interior = SymMat::identity(n);
        let spread = gaussian_coeffs(seed.wrapping_add(salt * 7919 + 2), 3 * n);
        for k in 0..3 {
            let v = DVector::from_column_slice(&spread[k * n..(k + 1) * n]);
            interior.axpy(1.0 / n as f64, &SymMat::rank_one(&v));
        }
        let b = map.apply(&interior);
        let offset_raw = gaussian_coeffs(seed.wrapping_add(salt * 7919 + 3), len);
        let offset = SymMat::smat(n, offset_raw);
        let mut z = interior.clone();
        z.axpy(noise * interior.norm() / offset.norm(), &offset);
        return ProjInstance {
            map,
            b,
            interior,
            z,
        };
    }
    unreachable!("32 salted draws in a row were rank deficient");
}

/// Relative Frobenius gap `‖a − b‖ / (1 + ‖a‖)` between two matrices.
pub fn rel_gap(a: &SymMat, b: &SymMat) -> f64 {
    let mut diff = a.clone();
    diff.axpy(-1.0, b);
    diff.norm() / (1.0 + a.norm())
}

/// Relative affine residual `‖A(x) − b‖ / (1 + ‖b‖)`.
pub fn affine_residual(map: &LinMap, b: &DVector<f64>, x: &SymMat) -> f64 {
    (map.apply(x) - b).norm() / (1.0 + b.norm())
}
