//! Dense numerics shared by the model and certificate modules: matrix
//! exponential, discrete Lyapunov solves, spectral helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix exponential by Pade(13) approximation with scaling and squaring.
///
/// The degree-13 approximant is accurate to machine precision once the
/// 1-norm of the scaled matrix is below ~5.37; the input is scaled by a
/// power of two to get there and the result squared back up.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const THETA_13: f64 = 5.371_920_351_148_152;
    #[rustfmt::skip]
    const B: [f64; 14] = [
        64_764_752_532_480_000.0, 32_382_376_266_240_000.0, 7_771_770_303_897_600.0,
        1_187_353_796_428_800.0, 129_060_195_264_000.0, 10_559_470_521_600.0,
        670_442_572_800.0, 33_522_128_640.0, 1_323_241_920.0, 40_840_800.0,
        960_960.0, 16_380.0, 182.0, 1.0,
    ];

    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");

    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);

    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &eye;
    let u = &a * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &eye;

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is singular");

    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Solves the discrete Lyapunov equation `A^T X A - X = -Q` by
/// vectorization: `(A^T (x) A^T - I) vec(X) = -vec(Q)`.
///
/// Intended for the small systems in this crate (n <= 4, so at most a
/// 16x16 solve). Returns the symmetrized solution and fails if the solve
/// leaves a residual above `1e-8 * (1 + ||Q||)`, which happens when A has
/// reciprocal eigenvalue pairs.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(q.nrows(), n);
    assert_eq!(q.ncols(), n);

    let at = a.transpose();
    let sys = at.kronecker(&at) - DMatrix::<f64>::identity(n * n, n * n);
    let rhs = DVector::<f64>::from_column_slice(q.as_slice()).scale(-1.0);
    let x_vec = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("discrete Lyapunov system is singular".into()))?;

    let x = DMatrix::<f64>::from_column_slice(n, n, x_vec.as_slice());
    let x = (&x + x.transpose()) * 0.5;

    let residual = &at * &x * a - &x + q;
    let scale = 1.0 + one_norm(q);
    if one_norm(&residual) > 1e-8 * scale {
        return Err(Error::Numerical(format!(
            "discrete Lyapunov residual {:.3e} too large",
            one_norm(&residual)
        )));
    }
    Ok(x)
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().fold(0.0, |m, l| m.max(l.norm()))
}

/// Eigenvalue range of a symmetric matrix. The input is symmetrized first
/// so callers can pass matrices that are symmetric up to rounding.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eigs.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

/// True when `(a, b)` is controllable: the Krylov matrix
/// `[b, Ab, ..., A^{n-1}b]` has full rank (smallest singular value above
/// `1e-10` relative to the largest).
pub fn is_controllable(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    let n = a.nrows();
    let mut krylov = DMatrix::<f64>::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        krylov.set_column(j, &col);
        col = a * &col;
    }
    let sv = krylov.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-10 * max
}

/// Induced 1-norm (maximum absolute column sum).
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Scaled Taylor-series exponential, independent of the Pade path.
    fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = one_norm(a);
        let s = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as i32
        } else {
            0
        };
        let b = a / 2f64.powi(s);
        let mut sum = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..=30 {
            term = &term * &b / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let e = expm(&z);
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0, 0.3]));
        let e = expm(&a);
        for (i, &d) in [1.0f64, -2.0, 0.3].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], d.exp(), max_relative = 1e-14);
        }
        assert!(e[(0, 1)].abs() < 1e-16);
    }

    #[test]
    fn expm_nilpotent_jordan_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_relative_eq!(e, want, epsilon = 1e-15);
    }

    #[test]
    fn expm_matches_taylor_oracle_on_random_matrices() {
        let mut rng = StdRng::seed_from_u64(0x5eed_0001);
        for _ in 0..50 {
            let n = rng.gen_range(2..=5);
            let scale = 10f64.powf(rng.gen_range(-1.0..1.5));
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * scale);
            let e = expm(&a);
            let t = taylor_expm(&a);
            let err = one_norm(&(&e - &t)) / one_norm(&t).max(1.0);
            assert!(err < 1e-12, "expm mismatch {err:.3e} at scale {scale:.2}");
        }
    }

    #[test]
    fn dlyap_scalar_case() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = dlyap(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 4.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn dlyap_random_stable_systems() {
        let mut rng = StdRng::seed_from_u64(0x5eed_0002);
        for _ in 0..30 {
            let n = rng.gen_range(2..=4);
            // Random matrix scaled well inside the unit circle.
            let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let a = &raw * (0.9 / spectral_radius(&raw).max(1e-6));
            let q = DMatrix::<f64>::identity(n, n);
            let x = dlyap(&a, &q).unwrap();
            let residual = a.transpose() * &x * &a - &x + &q;
            assert!(one_norm(&residual) < 1e-10);
            let (lo, _) = sym_eig_range(&x);
            assert!(lo > 0.0, "Lyapunov solution must be positive definite");
        }
    }

    #[test]
    fn dlyap_rejects_marginally_stable_input() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!(dlyap(&a, &q).is_err());
    }

    #[test]
    fn spectral_radius_of_scaled_rotation() {
        let th = 0.7f64;
        let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.9;
        assert_relative_eq!(spectral_radius(&a), 0.9, max_relative = 1e-12);
    }

    #[test]
    fn controllability_detects_uncontrollable_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]);
        let b_good = DVector::from_vec(vec![1.0, 1.0]);
        let b_bad = DVector::from_vec(vec![1.0, 0.0]);
        assert!(is_controllable(&a, &b_good));
        assert!(!is_controllable(&a, &b_bad));
    }
}
