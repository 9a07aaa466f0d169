//! Per-axis translational error model and thrust-derived acceleration
//! bounds.
//!
//! Each translational axis of the error dynamics is the fourth-order
//! chain
//!
//! ```text
//!   p'   = v
//!   v'   = -d v + a
//!   a'   = -(a - eta) / gamma
//!   eta' = -(eta - u) / gamma
//! ```
//!
//! with drag coefficient `d`, filter time constant `gamma`, and commanded
//! set-point `u`. The two first-order filters between `u` and `a` make
//! the realized acceleration command twice differentiable, which the
//! attitude loop needs, and give the exact inter-sample form of `a` as a
//! convex combination of past states and the held input. Discretization
//! under a zero-order hold is exact.
//!
//! The acceleration command on each axis must stay inside a bound
//! `Delta(t)` derived from the reference thrust profile: the margin to
//! the top of the actuator envelope and to a positive thrust floor,
//! shared equally across the three axes by inscribing a cube in the
//! margin sphere.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::numeric;

/// Continuous-time single-axis model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousAxisModel {
    /// Drag coefficient (1/s), strictly positive.
    pub d: f64,
    /// Smoothing filter time constant (s), strictly positive.
    pub gamma: f64,
}

impl ContinuousAxisModel {
    pub fn new(d: f64, gamma: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidParameter(format!("drag d = {d} must be > 0")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "filter constant gamma = {gamma} must be > 0"
            )));
        }
        Ok(Self { d, gamma })
    }

    /// State matrix for state `(p, v, a, eta)`.
    pub fn a_matrix(&self) -> Matrix4<f64> {
        let g = 1.0 / self.gamma;
        #[rustfmt::skip]
        let a = Matrix4::new(
            0.0, 1.0,     0.0, 0.0,
            0.0, -self.d, 1.0, 0.0,
            0.0, 0.0,     -g,  g,
            0.0, 0.0,     0.0, -g,
        );
        a
    }

    /// Input vector: the set-point enters through the second filter.
    pub fn b_vector(&self) -> Vector4<f64> {
        Vector4::new(0.0, 0.0, 0.0, 1.0 / self.gamma)
    }
}

/// Exact zero-order-hold discretization of [`ContinuousAxisModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteAxisModel {
    pub a_d: Matrix4<f64>,
    pub b_d: Vector4<f64>,
    /// Sampling period (s).
    pub h: f64,
    /// `exp(-h/gamma)`: filter decay over one period.
    pub alpha: f64,
    /// `(h/gamma) exp(-h/gamma)`: cross-coupling of the filter pair.
    pub beta: f64,
    /// Continuous parameters kept for inter-sample evaluation.
    pub d: f64,
    pub gamma: f64,
}

/// Exact ZOH discretization. Uses closed-form entries except near the
/// removable singularity `d * gamma = 1`, where it falls back to the
/// exponential of the augmented `[A B; 0 0]` system. Both paths agree to
/// well below 1e-10.
pub fn discretize_axis(cont: &ContinuousAxisModel, h: f64) -> Result<DiscreteAxisModel> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("period h = {h} must be > 0")));
    }
    let (d, gamma) = (cont.d, cont.gamma);
    let hg = h / gamma;
    let alpha = (-hg).exp();
    let beta = hg * alpha;

    let (a_d, b_d) = if (d * gamma - 1.0).abs() < 1e-6 {
        discretize_by_expm(cont, h)
    } else {
        discretize_closed_form(cont, h)
    };

    Ok(DiscreteAxisModel {
        a_d,
        b_d,
        h,
        alpha,
        beta,
        d,
        gamma,
    })
}

fn discretize_closed_form(cont: &ContinuousAxisModel, h: f64) -> (Matrix4<f64>, Vector4<f64>) {
    let (d, gamma) = (cont.d, cont.gamma);
    let dh = d * h;
    let hg = h / gamma;
    let dg = d * gamma;
    let ed = (-dh).exp();
    let eg = (-hg).exp();
    let m1 = dg - 1.0;
    let m2 = m1 * m1;

    let a01 = (1.0 - ed) / d;
    let a02 = gamma * (ed + dg - dg * eg - 1.0) / (d * m1);
    let a03 = gamma
        * (1.0 - ed - 2.0 * dg + dg * dg + 2.0 * dg * eg + dh * eg - dg * dg * eg - dg * dh * eg)
        / (d * m2);
    let a12 = gamma * (eg - ed) / m1;
    let a13 = (gamma * ed - gamma * eg - h * eg + dg * h * eg) / m2;

    #[rustfmt::skip]
    let a_d = Matrix4::new(
        1.0, a01, a02,     a03,
        0.0, ed,  a12,     a13,
        0.0, 0.0, eg,      hg * eg,
        0.0, 0.0, 0.0,     eg,
    );

    let b0 = (ed + dh + 3.0 * dg * dg - 2.0 * dg * dg * dg + dg * dg * dh
        - 3.0 * dg * dg * eg
        + 2.0 * dg * dg * dg * eg
        - 2.0 * dg * dh
        + dg * dg * dh * eg
        - dg * dh * eg
        - 1.0)
        / (d * d * m2);
    let b1 = (1.0 - ed - 2.0 * dg + dg * dg + 2.0 * dg * eg + dh * eg - dg * dg * eg
        - dg * dh * eg)
        / (d * m2);
    let b2 = 1.0 - eg - hg * eg;
    let b3 = 1.0 - eg;

    (a_d, Vector4::new(b0, b1, b2, b3))
}

fn discretize_by_expm(cont: &ContinuousAxisModel, h: f64) -> (Matrix4<f64>, Vector4<f64>) {
    let a = cont.a_matrix();
    let b = cont.b_vector();
    let mut aug = DMatrix::<f64>::zeros(5, 5);
    for i in 0..4 {
        for j in 0..4 {
            aug[(i, j)] = a[(i, j)] * h;
        }
        aug[(i, 4)] = b[i] * h;
    }
    let e = numeric::expm(&aug);
    let mut a_d = Matrix4::<f64>::zeros();
    let mut b_d = Vector4::<f64>::zeros();
    for i in 0..4 {
        for j in 0..4 {
            a_d[(i, j)] = e[(i, j)];
        }
        b_d[i] = e[(i, 4)];
    }
    (a_d, b_d)
}

impl DiscreteAxisModel {
    pub fn a_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_fn(4, 4, |i, j| self.a_d[(i, j)])
    }

    pub fn b_dyn(&self) -> DVector<f64> {
        DVector::from_column_slice(self.b_d.as_slice())
    }
}

/// Admissible thrust envelope of the platform.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ThrustEnvelope {
    /// Maximum total thrust (mass-normalized, m/s^2).
    pub t_max: f64,
    /// Floor margin: commanded thrust must stay above `delta`.
    pub delta: f64,
    /// Reference thrust must stay above `eps1` (> `delta`).
    pub eps1: f64,
    /// Reference thrust must stay below `t_max - eps2`.
    pub eps2: f64,
}

impl ThrustEnvelope {
    pub fn new(t_max: f64, delta: f64, eps1: f64, eps2: f64) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_max = {t_max} must be > 0")));
        }
        if !(delta > 0.0 && eps1 > delta && eps2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta < eps1 and eps2 > 0, got delta={delta}, eps1={eps1}, eps2={eps2}"
            )));
        }
        if eps1 >= t_max - eps2 {
            return Err(Error::InvalidParameter(format!(
                "admissible band [eps1, t_max - eps2] = [{eps1}, {}] is empty",
                t_max - eps2
            )));
        }
        Ok(Self {
            t_max,
            delta,
            eps1,
            eps2,
        })
    }
}

/// Spherical thrust margin around the reference thrust `t_bar`: distance
/// to the floor `delta` and to the ceiling `t_max`, whichever is smaller.
pub fn rho(t_bar: f64, env: &ThrustEnvelope) -> Result<f64> {
    if !(t_bar >= env.eps1 && t_bar <= env.t_max - env.eps2) {
        return Err(Error::InfeasibleReference(format!(
            "reference thrust {t_bar:.6} outside admissible band [{}, {}]",
            env.eps1,
            env.t_max - env.eps2
        )));
    }
    Ok((t_bar - env.delta).min(env.t_max - t_bar))
}

/// Per-axis acceleration bound: side of the largest cube inscribed in
/// the margin sphere of radius `rho`, so any per-axis commands within
/// `+-Delta` keep total thrust inside the envelope.
pub fn delta_bound(t_bar: f64, env: &ThrustEnvelope) -> Result<f64> {
    Ok(rho(t_bar, env)? / 3f64.sqrt())
}

/// Closed-form response of the set-point filter pair at offset `s`
/// into a sampling interval, under the constant input `u` applied at
/// the interval start.
///
/// With `a_s = exp(-s/gamma)` and `b_s = (s/gamma) exp(-s/gamma)`:
///
/// ```text
///   a(s)   = a_s a + b_s eta + (1 - a_s - b_s) u
///   eta(s) = a_s eta         + (1 - a_s) u
/// ```
///
/// Both are convex combinations of `(a, eta, u)`, so bounds that hold
/// at the interval endpoints and on `u` hold in between. At `s = h`
/// this reproduces the discrete filter rows exactly.
pub fn filter_response(a: f64, eta: f64, u: f64, gamma: f64, s: f64) -> (f64, f64) {
    let a_s = (-s / gamma).exp();
    let b_s = (s / gamma) * a_s;
    (
        a_s * a + b_s * eta + (1.0 - a_s - b_s) * u,
        a_s * eta + (1.0 - a_s) * u,
    )
}

/// Lower bounds of `Delta(t)` over consecutive sampling intervals.
///
/// Entry `i` is the minimum of `delta_bound` over `[t_(k0+i), t_(k0+i+1)]`,
/// sampled at `oversample + 1` uniform points. Using interval minima (not
/// point samples) keeps the bound valid between samples, and evaluating
/// the same interval at different control steps reproduces the same grid,
/// so consecutive horizons agree on shared intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSchedule {
    deltas: Vec<f64>,
}

impl ConstraintSchedule {
    /// Wraps precomputed interval minima. All entries must be positive
    /// and finite.
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::InvalidParameter("empty constraint schedule".into()));
        }
        if let Some(bad) = deltas.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "schedule entry {bad} must be positive and finite"
            )));
        }
        Ok(Self { deltas })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Interval minima of the acceleration bound along a reference thrust
/// profile, for `n + 1` intervals starting at step `k0`.
///
/// `profile` maps absolute time to reference thrust. Any grid point with
/// thrust outside the admissible band fails the whole schedule.
pub fn horizon_bounds<F>(
    profile: F,
    k0: usize,
    n: usize,
    h: f64,
    oversample: usize,
    env: &ThrustEnvelope,
) -> Result<ConstraintSchedule>
where
    F: Fn(f64) -> f64,
{
    if oversample == 0 {
        return Err(Error::InvalidParameter("oversample must be >= 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("period h = {h} must be > 0")));
    }
    let mut deltas = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t0 = (k0 + i) as f64 * h;
        let mut lo = f64::INFINITY;
        for j in 0..=oversample {
            let t = t0 + h * j as f64 / oversample as f64;
            let db = delta_bound(profile(t), env)?;
            lo = lo.min(db);
        }
        deltas.push(lo);
    }
    ConstraintSchedule::new(deltas)
}
