//! Stability certificates for the per-axis MPC.
//!
//! The axis model is marginally stable: one simple unit eigenvalue (the
//! position integrator) and the rest strictly inside the unit circle.
//! For such systems a saturated linear feedback `u = sat(Kx)` is globally
//! stabilizing when the gain comes from a small-gain argument on a
//! Lyapunov metric `M_c` that the open loop does not expand. The weighted
//! blend
//!
//! ```text
//!   W(x) = x' M_q x + lambda (x' M_c x)^(3/2)
//! ```
//!
//! then decreases by at least `||x||^2` along the saturated closed loop,
//! and `V = theta * W` is a terminal cost that makes the finite-horizon
//! MPC globally stabilizing for every horizon length, with no terminal
//! constraint. This module synthesizes `M_c`, `M_q`, the gain, and the
//! scalar coefficients, and provides numeric checks for each claim.
//!
//! All synthesis routines take dynamically sized matrices so they apply
//! to reduced test systems as well as the 4-state axis model;
//! [`CertificateSet::synthesize`] wraps them for one axis.

use nalgebra::{DMatrix, DVector, Matrix4, RowVector4, Vector4};

use crate::error::{Error, Result};
use crate::model::DiscreteAxisModel;
use crate::numeric;

/// Everything the per-axis MPC needs from the offline synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateSet {
    /// Metric the open loop does not expand: `A' M_c A - M_c <= 0`.
    pub m_c: Matrix4<f64>,
    /// Strict metric for the saturated closed loop:
    /// `(A+BK)' M_q (A+BK) - M_q = -I`.
    pub m_q: Matrix4<f64>,
    /// Stabilizing feedback row `K = -kappa B' M_c A`.
    pub k_gain: RowVector4<f64>,
    /// Small-gain scalar, `kappa B' M_c B < 1`.
    pub kappa: f64,
    /// Weight of the cubic term in `W`.
    pub lambda: f64,
    /// Scaling that dominates the stage cost: `V = theta W`.
    pub theta: f64,
    /// Saturation slope bound used in `lambda`; `l_u * delta_star > 1`.
    pub l_u: f64,
    /// Uniform lower bound on the admissible input level along the
    /// schedule, from the shrink-rate analysis.
    pub delta_star: f64,
}

impl CertificateSet {
    /// Runs the full synthesis chain for one axis against a bound
    /// schedule covering the whole run.
    pub fn synthesize(
        model: &DiscreteAxisModel,
        q: &Matrix4<f64>,
        r: f64,
        schedule: &[f64],
    ) -> Result<Self> {
        let a = model.a_dyn();
        let b = model.b_dyn();
        let m_c = solve_mc(&a)?;
        let (kappa, k) = small_gain(&a, &b, &m_c)?;
        let m_q = solve_mq(&a, &b, &k)?;
        let delta_star = delta_star(schedule, model.alpha, model.beta)?;
        // Any slope above 1/delta_star works; 1.1 leaves a uniform margin
        // without inflating lambda.
        let l_u = 1.1 / delta_star;
        let lambda = lambda_coeff(&a, &b, &m_q, &m_c, kappa, l_u)?;
        let q_dyn = DMatrix::from_fn(4, 4, |i, j| q[(i, j)]);
        let theta = theta_coeff(&a, &b, &m_c, kappa, &q_dyn, r)?;

        Ok(Self {
            m_c: fixed4(&m_c),
            m_q: fixed4(&m_q),
            k_gain: RowVector4::from_fn(|_, j| k[(0, j)]),
            kappa,
            lambda,
            theta,
            l_u,
            delta_star,
        })
    }

    /// Terminal cost `V(x) = theta [x' M_q x + lambda (x' M_c x)^(3/2)]`
    /// with analytic gradient and Hessian.
    ///
    /// The cubic term is continuously twice differentiable away from the
    /// origin; at `x = 0` its Hessian contribution vanishes, so the
    /// returned Hessian is `2 theta M_q` there.
    pub fn terminal_cost(&self, x: &Vector4<f64>) -> (f64, Vector4<f64>, Matrix4<f64>) {
        let tc = self.terminal();
        let xd = DVector::from_column_slice(x.as_slice());
        let (v, g, h) = tc.eval_grad_hess(&xd);
        (
            v,
            Vector4::from_fn(|i, _| g[i]),
            Matrix4::from_fn(|i, j| h[(i, j)]),
        )
    }

    /// Dynamic-size view of the terminal cost for the solver.
    pub fn terminal(&self) -> TerminalCost {
        TerminalCost {
            m_q: DMatrix::from_fn(4, 4, |i, j| self.m_q[(i, j)]),
            m_c: DMatrix::from_fn(4, 4, |i, j| self.m_c[(i, j)]),
            lambda: self.lambda,
            theta: self.theta,
        }
    }

    /// Decrease of the unscaled blend `W` along one step of the
    /// saturated feedback at level `delta_star`. Negative by at least
    /// `||x||^2` for every state.
    pub fn lyapunov_decrease(&self, model: &DiscreteAxisModel, x: &Vector4<f64>) -> f64 {
        let u = (self.k_gain * x)[0].clamp(-self.delta_star, self.delta_star);
        let x_next = model.a_d * x + model.b_d * u;
        self.w_value(&x_next) - self.w_value(x)
    }

    /// Unscaled blend `W(x) = x' M_q x + lambda (x' M_c x)^(3/2)`.
    pub fn w_value(&self, x: &Vector4<f64>) -> f64 {
        let q = (x.transpose() * self.m_q * x)[0];
        let c = (x.transpose() * self.m_c * x)[0];
        q + self.lambda * c.max(0.0).powf(1.5)
    }
}

fn fixed4(m: &DMatrix<f64>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[(i, j)])
}

/// Finds `M_c > 0` with `A' M_c A - M_c <= 0` for a marginally stable
/// `A`: one simple unit eigenvalue, all others strictly inside the unit
/// circle.
///
/// The unit mode is split off by a similarity built from its right
/// eigenvector and a basis of the invariant complement (the orthogonal
/// complement of the left eigenvector); the stable block gets a strict
/// Lyapunov solution, the unit direction weight 1.
pub fn solve_mc(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());

    let eigs = a.complex_eigenvalues();
    let unit_count = eigs.iter().filter(|l| (*l - 1.0).norm() < 1e-8).count();
    if unit_count != 1 {
        return Err(Error::UnsupportedSpectrum(format!(
            "need exactly one unit eigenvalue, found {unit_count}"
        )));
    }
    for l in eigs.iter() {
        if (l - 1.0).norm() >= 1e-8 && l.norm() >= 1.0 - 1e-10 {
            return Err(Error::UnsupportedSpectrum(format!(
                "eigenvalue {l} is not strictly inside the unit circle"
            )));
        }
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let v = null_vector(&(a - &eye))?;
    let w = null_vector(&(a.transpose() - &eye))?;
    if w.dot(&v).abs() < 1e-8 {
        return Err(Error::UnsupportedSpectrum(
            "unit eigenvalue appears defective (left/right eigenvectors orthogonal)".into(),
        ));
    }

    // T = [v | basis of w-perp]; both blocks are A-invariant, so T^-1 A T
    // is block diagonal with the unit mode isolated in the (0,0) slot.
    let mut t = DMatrix::<f64>::zeros(n, n);
    t.set_column(0, &v);
    for (j, col) in orthonormal_complement(&w).iter().enumerate() {
        t.set_column(j + 1, col);
    }
    let t_lu = t.clone().lu();
    let t_inv = t_lu
        .try_inverse()
        .ok_or_else(|| Error::Numerical("similarity transform is singular".into()))?;
    let lam = &t_inv * a * &t;

    // Off-diagonal blocks vanish in exact arithmetic.
    let mut off = 0.0f64;
    for i in 1..n {
        off = off.max(lam[(i, 0)].abs()).max(lam[(0, i)].abs());
    }
    if off > 1e-7 * numeric::one_norm(a).max(1.0) {
        return Err(Error::Numerical(format!(
            "unit-mode split failed, off-block magnitude {off:.3e}"
        )));
    }

    let mut blk = DMatrix::<f64>::zeros(n, n);
    blk[(0, 0)] = 1.0;
    if n > 1 {
        let a_s = lam.view((1, 1), (n - 1, n - 1)).into_owned();
        let m_s = numeric::dlyap(&a_s, &DMatrix::identity(n - 1, n - 1))?;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                blk[(i + 1, j + 1)] = m_s[(i, j)];
            }
        }
    }

    let m = t_inv.transpose() * blk * &t_inv;
    let m = (&m + m.transpose()) * 0.5;

    let (lo, _) = numeric::sym_eig_range(&m);
    if lo <= 0.0 {
        return Err(Error::Numerical(format!(
            "metric lost positive definiteness (min eigenvalue {lo:.3e})"
        )));
    }
    let residual = a.transpose() * &m * a - &m;
    let (_, hi) = numeric::sym_eig_range(&residual);
    if hi > 1e-9 {
        return Err(Error::Numerical(format!(
            "metric residual max eigenvalue {hi:.3e} above 1e-9"
        )));
    }
    Ok(m)
}

/// Right null vector via SVD (singular vector of the smallest singular
/// value), normalized.
fn null_vector(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let n = m.ncols();
    let mut idx = 0;
    let mut smallest = f64::INFINITY;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s < smallest {
            smallest = s;
            idx = i;
        }
    }
    if smallest > 1e-6 * svd.singular_values.max().max(1.0) {
        return Err(Error::Numerical(format!(
            "matrix has no null direction (smallest singular value {smallest:.3e})"
        )));
    }
    let mut v = DVector::<f64>::zeros(n);
    for j in 0..n {
        v[j] = v_t[(idx, j)];
    }
    Ok(v.normalize())
}

/// Orthonormal basis of the orthogonal complement of `w` (n-1 vectors),
/// built by Gram-Schmidt over the coordinate directions.
fn orthonormal_complement(w: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = w.len();
    let wn = w.normalize();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        if basis.len() == n - 1 {
            break;
        }
        let mut e = DVector::<f64>::zeros(n);
        e[i] = 1.0;
        let mut v = &e - &wn * wn.dot(&e);
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Small-gain feedback: `kappa = 0.99 / (B' M_c B)` keeps
/// `kappa B' M_c B` strictly below one, and `K = -kappa B' M_c A`.
pub fn small_gain(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    m_c: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    if !numeric::is_controllable(a, b) {
        return Err(Error::InvalidParameter(
            "axis model is uncontrollable; no stabilizing gain exists".into(),
        ));
    }
    let s = (b.transpose() * m_c * b)[(0, 0)];
    if s <= 1e-14 {
        return Err(Error::InvalidParameter(format!(
            "input direction has no weight in the metric (B' M_c B = {s:.3e})"
        )));
    }
    let kappa = 0.99 / s;
    let k_row = (b.transpose() * m_c * a).scale(-kappa);
    let n = a.ncols();
    let k = DMatrix::from_fn(1, n, |_, j| k_row[(0, j)]);
    Ok((kappa, k))
}

/// Strict Lyapunov metric for the unsaturated closed loop:
/// `(A+BK)' M_q (A+BK) - M_q = -I`.
pub fn solve_mq(a: &DMatrix<f64>, b: &DVector<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a_cl = a + b * k;
    let radius = numeric::spectral_radius(&a_cl);
    if radius >= 1.0 {
        return Err(Error::UnsupportedSpectrum(format!(
            "closed loop is not Schur (spectral radius {radius:.6})"
        )));
    }
    let n = a.nrows();
    let m_q = numeric::dlyap(&a_cl, &DMatrix::identity(n, n))?;
    let residual = a_cl.transpose() * &m_q * &a_cl - &m_q + DMatrix::<f64>::identity(n, n);
    if numeric::one_norm(&residual) > 1e-9 {
        return Err(Error::Numerical(format!(
            "closed-loop Lyapunov residual {:.3e} above 1e-9",
            numeric::one_norm(&residual)
        )));
    }
    Ok(m_q)
}

/// Uniform input level available along a bound schedule.
///
/// Three quantities limit how much input headroom every step is
/// guaranteed to have once the filter bounds are converted to set-point
/// bounds: the shrink margin through the double filter, the shrink margin
/// through the single filter, and the raw bound itself. The schedule is
/// admissible only if the double-filter margin stays positive, i.e.
/// `Delta(k+1) > (alpha + beta) Delta(k)` for all k.
pub fn delta_star(schedule: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    validate_weights(alpha, beta)?;
    if schedule.len() < 2 {
        return Err(Error::InvalidParameter(
            "schedule needs at least two entries".into(),
        ));
    }
    if let Some(bad) = schedule.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "schedule entry {bad} must be positive and finite"
        )));
    }

    let mut m_double = f64::INFINITY;
    let mut m_single = f64::INFINITY;
    let mut m_raw = schedule[0];
    for w in schedule.windows(2) {
        m_double = m_double.min(w[1] - (alpha + beta) * w[0]);
        m_single = m_single.min(w[1] - alpha * w[0]);
        m_raw = m_raw.min(w[1]);
    }
    if m_double <= 0.0 {
        return Err(Error::FeasibilityViolated(format!(
            "schedule shrinks faster than the filter decay: min margin {m_double:.6e}"
        )));
    }
    if m_single <= 0.0 || m_raw <= 0.0 {
        return Err(Error::FeasibilityViolated(
            "schedule admits no positive uniform input level".into(),
        ));
    }
    let tilde = m_double / (1.0 - alpha - beta);
    let bar = m_single / (1.0 - alpha);
    Ok(tilde.min(bar).min(m_raw))
}

/// Cubic-term weight: large enough that the saturated feedback still
/// shrinks the blend when the quadratic part alone cannot.
pub fn lambda_coeff(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    m_q: &DMatrix<f64>,
    m_c: &DMatrix<f64>,
    kappa: f64,
    l_u: f64,
) -> Result<f64> {
    let (lo, _) = numeric::sym_eig_range(m_c);
    if lo <= 0.0 {
        return Err(Error::InvalidParameter(
            "metric must be positive definite".into(),
        ));
    }
    let cross = a.transpose() * m_q * b;
    Ok(2.0 * kappa * l_u * cross.norm() / lo.sqrt())
}

/// Terminal scaling: `theta = lambda_max(Q + kappa^2 A' M_c B R B' M_c A)`
/// dominates the stage cost along the saturated feedback.
pub fn theta_coeff(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    m_c: &DMatrix<f64>,
    kappa: f64,
    q: &DMatrix<f64>,
    r: f64,
) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::InvalidParameter(format!("input weight r = {r} must be > 0")));
    }
    let m = a.transpose() * m_c * b;
    let mat = q + (&m * m.transpose()).scale(kappa * kappa * r);
    let (_, hi) = numeric::sym_eig_range(&mat);
    Ok(hi)
}

/// Shrink-rate admissibility of a bound schedule for sampling period `h`
/// and filter constant `gamma`: `Delta(k+1) > e^(-h/gamma)(1 + h/gamma)
/// Delta(k)` for every step. Returns the verdict and the worst margin.
pub fn feasibility_condition(schedule: &[f64], h: f64, gamma: f64) -> Result<(bool, f64)> {
    if !(h > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need h > 0 and gamma > 0, got h={h}, gamma={gamma}"
        )));
    }
    if schedule.len() < 2 {
        return Err(Error::InvalidParameter(
            "schedule needs at least two entries".into(),
        ));
    }
    let hg = h / gamma;
    let rate = (-hg).exp() * (1.0 + hg);
    let mut margin = f64::INFINITY;
    for w in schedule.windows(2) {
        margin = margin.min(w[1] - rate * w[0]);
    }
    Ok((margin > 0.0, margin))
}

fn validate_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && beta > 0.0 && alpha + beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "filter weights alpha={alpha}, beta={beta} must be positive with alpha+beta < 1"
        )));
    }
    Ok(())
}

/// Terminal cost over dynamically sized states, used by the solver and
/// by reduced test systems.
#[derive(Debug, Clone)]
pub struct TerminalCost {
    pub m_q: DMatrix<f64>,
    pub m_c: DMatrix<f64>,
    pub lambda: f64,
    pub theta: f64,
}

impl TerminalCost {
    /// Value, gradient and Hessian at `x`:
    ///
    /// ```text
    ///   V    = theta (x'M_q x + lambda s^3),        s = sqrt(x'M_c x)
    ///   dV   = theta (2 M_q x + 3 lambda s M_c x)
    ///   d2V  = theta (2 M_q + 3 lambda [s M_c + (M_c x)(M_c x)'/s])
    /// ```
    ///
    /// with the `1/s` term dropped at the origin where it vanishes in the
    /// limit.
    pub fn eval_grad_hess(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mq_x = &self.m_q * x;
        let mc_x = &self.m_c * x;
        let q = x.dot(&mq_x);
        let c = x.dot(&mc_x).max(0.0);
        let s = c.sqrt();

        let value = self.theta * (q + self.lambda * c * s);
        let grad = (mq_x.scale(2.0) + mc_x.scale(3.0 * self.lambda * s)).scale(self.theta);
        let mut hess = self.m_q.scale(2.0) + self.m_c.scale(3.0 * self.lambda * s);
        if s > 1e-300 {
            let outer = (&mc_x * mc_x.transpose()).scale(3.0 * self.lambda / s);
            hess += outer;
        }
        hess.scale_mut(self.theta);
        debug_assert_eq!(hess.nrows(), n);
        (value, grad, hess)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let q = x.dot(&(&self.m_q * x));
        let c = x.dot(&(&self.m_c * x)).max(0.0);
        self.theta * (q + self.lambda * c * c.sqrt())
    }
}
