//! Nonlinear quadcopter rigid-body model and the inner attitude loop.
//!
//! World frame is north-east-down: gravity points along `+e3`, altitude
//! is negative `z`, and thrust in acceleration units pulls along the
//! negative body `z` axis. The translational model carries linear drag,
//! the rotational model carries gyroscopic coupling, a constant
//! gyroscopic bias torque, a velocity-coupled moment and rotational
//! damping:
//!
//! ```text
//!   dp = v
//!   dv = g e3 - T R e3 - D v
//!   dR = R S(w)
//!   dw = J^-1 (S(Jw) w - tau_g - A R'v - C w + tau)
//! ```
//!
//! The inner loop is a geometric attitude tracker on the rotation group:
//! it decomposes the attitude target into the flat reference frame and a
//! relative rotation that realizes the outer loop's acceleration
//! set-point, then cancels the model drift so the attitude error obeys
//! a damped rotational spring law exactly.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

/// Physical and environment parameters of one vehicle.
///
/// Thrust and drag are normalized by mass (accelerations), moments act
/// on the true inertia.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadParams {
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
    /// Inertia matrix, kg m^2.
    pub j: Matrix3<f64>,
    /// Linear drag gain on world velocity, 1/s.
    pub d_drag: Matrix3<f64>,
    /// Moment coupling to body-frame velocity.
    pub a_flow: Matrix3<f64>,
    /// Rotational damping moment gain.
    pub c_damp: Matrix3<f64>,
    /// Constant gyroscopic bias torque, N m.
    pub tau_g: Vector3<f64>,
    /// Largest available thrust, acceleration units.
    pub t_max: f64,
    #[serde(skip)]
    j_inv: Matrix3<f64>,
}

impl QuadParams {
    pub fn new(
        g: f64,
        j: Matrix3<f64>,
        d_drag: Matrix3<f64>,
        a_flow: Matrix3<f64>,
        c_damp: Matrix3<f64>,
        tau_g: Vector3<f64>,
        t_max: f64,
    ) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParameter(format!("gravity g = {g} must be > 0")));
        }
        if t_max <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "thrust limit t_max = {t_max} must be > 0"
            )));
        }
        let sym_err = (j - j.transpose()).abs().max();
        if sym_err > 1e-12 {
            return Err(Error::InvalidParameter("inertia must be symmetric".into()));
        }
        if j.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidParameter(
                "inertia must be positive definite".into(),
            ));
        }
        let j_inv = j
            .try_inverse()
            .ok_or_else(|| Error::Numerical("inertia not invertible".into()))?;
        Ok(Self {
            g,
            j,
            d_drag,
            a_flow,
            c_damp,
            tau_g,
            t_max,
            j_inv,
        })
    }

    pub fn j_inv(&self) -> &Matrix3<f64> {
        &self.j_inv
    }
}

/// Full rigid-body state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadState {
    /// World position, m.
    pub p: Vector3<f64>,
    /// World velocity, m/s.
    pub v: Vector3<f64>,
    /// Body-to-world rotation.
    pub r: Matrix3<f64>,
    /// Body angular rate, rad/s.
    pub w: Vector3<f64>,
}

/// Cross-product matrix: `skew(a) * b == a x b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] after antisymmetrizing its argument.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    let a = (m - m.transpose()) * 0.5;
    Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
}

/// Time derivative of the full state under constant thrust and torque.
pub fn dynamics_deriv(
    params: &QuadParams,
    state: &QuadState,
    thrust: f64,
    torque: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>, Vector3<f64>) {
    let e3 = Vector3::z();
    let dp = state.v;
    let dv = params.g * e3 - thrust * (state.r * e3) - params.d_drag * state.v;
    let dr = state.r * skew(&state.w);
    let jw = params.j * state.w;
    let dw = params.j_inv
        * (skew(&jw) * state.w
            - params.tau_g
            - params.a_flow * (state.r.transpose() * state.v)
            - params.c_damp * state.w
            + torque);
    (dp, dv, dr, dw)
}

/// Nearest rotation matrix in the Frobenius sense (polar factor).
fn project_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 requested with u");
    let vt = svd.v_t.expect("svd of 3x3 requested with v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // Flip the weakest direction to stay in the rotation group.
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * vt;
    }
    r
}

/// One classical Runge-Kutta step with inputs held constant, followed by
/// re-projection of the integrated rotation onto the rotation group so
/// orthonormality cannot drift over long runs.
pub fn rk4_step(
    params: &QuadParams,
    state: &QuadState,
    thrust: f64,
    torque: &Vector3<f64>,
    dt: f64,
) -> QuadState {
    let eval = |s: &QuadState| dynamics_deriv(params, s, thrust, torque);
    let blend = |s: &QuadState,
                 k: &(Vector3<f64>, Vector3<f64>, Matrix3<f64>, Vector3<f64>),
                 scale: f64| QuadState {
        p: s.p + k.0 * scale,
        v: s.v + k.1 * scale,
        r: s.r + k.2 * scale,
        w: s.w + k.3 * scale,
    };

    let k1 = eval(state);
    let k2 = eval(&blend(state, &k1, dt / 2.0));
    let k3 = eval(&blend(state, &k2, dt / 2.0));
    let k4 = eval(&blend(state, &k3, dt));

    let sixth = dt / 6.0;
    let r_raw = state.r + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * sixth;
    QuadState {
        p: state.p + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * sixth,
        v: state.v + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * sixth,
        r: project_rotation(&r_raw),
        w: state.w + (k1.3 + k2.3 * 2.0 + k3.3 * 2.0 + k4.3) * sixth,
    }
}

/// Clamps a thrust command into the physically realizable range.
pub fn clamp_thrust(t: f64, t_max: f64) -> f64 {
    t.clamp(0.0, t_max)
}

/// Total thrust realizing the acceleration set-point on top of the
/// reference thrust vector.
///
/// The thrust term enters the translational dynamics with a minus
/// sign, so commanding the deviation `a_d` means tilting the thrust
/// vector the opposite way: `T z_B = T_bar z_bar - a_d`, giving the
/// error dynamics their `+a_d` forcing.
pub fn thrust_command(a_d: &Vector3<f64>, t_bar: f64, z_bar: &Vector3<f64>) -> f64 {
    (z_bar * t_bar - a_d).norm()
}

/// Relative rotation that tilts the reference body frame onto the
/// commanded thrust direction, keeping the body `x` axis as close to
/// the reference heading as the tilt allows.
///
/// `a_d` is the world-frame acceleration set-point, `t_bar` and `r_bar`
/// the reference thrust and attitude. Fails when the commanded thrust
/// direction is orthogonal to the reference body `z` axis (a 90-degree
/// relative tilt), where this parametrization is singular.
pub fn desired_attitude(
    a_d: &Vector3<f64>,
    t_bar: f64,
    r_bar: &Matrix3<f64>,
) -> Result<Matrix3<f64>> {
    let e3 = Vector3::z();
    let dir = e3 * t_bar - r_bar.transpose() * a_d;
    let norm = dir.norm();
    if norm < 1e-9 {
        return Err(Error::AttitudeSingularity(
            "commanded thrust vector vanishes".into(),
        ));
    }
    let z = dir / norm;
    let planar = (z.y * z.y + z.z * z.z).sqrt();
    if planar < 1e-9 {
        return Err(Error::AttitudeSingularity(format!(
            "commanded thrust along the body x axis (z = {:?})",
            z
        )));
    }
    let y = Vector3::new(0.0, z.z / planar, -z.y / planar);
    let x = Vector3::new(planar, -z.x * z.y / planar, -z.x * z.z / planar);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Body angular rate of a smooth rotation trajectory by central
/// difference: `w = vee(R' dR/dt)`.
pub fn rotation_rate<F>(f: &F, t: f64, step: f64) -> Vector3<f64>
where
    F: Fn(f64) -> Matrix3<f64>,
{
    let dr = (f(t + step) - f(t - step)) / (2.0 * step);
    vee(&(f(t).transpose() * dr))
}

/// Body angular acceleration of a smooth rotation trajectory: central
/// difference of [`rotation_rate`].
pub fn rotation_accel<F>(f: &F, t: f64, step: f64) -> Vector3<f64>
where
    F: Fn(f64) -> Matrix3<f64>,
{
    (rotation_rate(f, t + step, step) - rotation_rate(f, t - step, step)) / (2.0 * step)
}

/// Inner-loop gains. The rate and attitude gains scale the inertia so
/// the error dynamics are uniform across axes; `k_axes` weights the
/// per-axis attitude error terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerLoopGains {
    pub k_w: Matrix3<f64>,
    pub k_r: Matrix3<f64>,
    pub k_axes: Vector3<f64>,
}

impl InnerLoopGains {
    pub fn new(k_w: Matrix3<f64>, k_r: Matrix3<f64>, k_axes: Vector3<f64>) -> Result<Self> {
        for (name, m) in [("rate gain", &k_w), ("attitude gain", &k_r)] {
            if m.symmetric_eigenvalues().min() <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive definite"
                )));
            }
        }
        if k_axes.min() <= 0.0 {
            return Err(Error::InvalidParameter(
                "axis weights must be positive".into(),
            ));
        }
        Ok(Self { k_w, k_r, k_axes })
    }
}

/// Attitude-loop references for one control instant.
#[derive(Debug, Clone)]
pub struct AttitudeRefs {
    /// Reference attitude, body rate, body-rate derivative.
    pub r_bar: Matrix3<f64>,
    pub w_bar: Vector3<f64>,
    pub dw_bar: Vector3<f64>,
    /// Reference velocity and feedforward torque.
    pub v_bar: Vector3<f64>,
    pub tau_bar: Vector3<f64>,
    /// Relative desired rotation with its rate and rate derivative.
    pub r_d: Matrix3<f64>,
    pub w_d: Vector3<f64>,
    pub dw_d: Vector3<f64>,
}

/// Attitude tracking errors: the rotation still to go after reference
/// and relative-desired attitudes are accounted for, and the body-rate
/// error in that frame.
pub fn attitude_error(
    state: &QuadState,
    refs: &AttitudeRefs,
) -> (Matrix3<f64>, Vector3<f64>) {
    let r_tilde = refs.r_bar.transpose() * state.r;
    let r_e = refs.r_d.transpose() * r_tilde;
    let w_e = state.w - r_tilde.transpose() * refs.w_bar - r_e.transpose() * refs.w_d;
    (r_e, w_e)
}

/// Geometric attitude tracking torque.
///
/// Feedback is a damped rotational spring in the error frame; the
/// remaining terms cancel the rigid-body drift, replay the reference
/// torque through the relative rotation and account for the moving
/// target frames, so the closed-loop error dynamics reduce exactly to
///
/// ```text
///   J dw_e = -K_w w_e + K_r sum_i k_i (e_i x R_e' e_i)
/// ```
pub fn inner_loop_torque(
    params: &QuadParams,
    gains: &InnerLoopGains,
    state: &QuadState,
    refs: &AttitudeRefs,
) -> Vector3<f64> {
    let (r_e, w_e) = attitude_error(state, refs);
    let r_tilde = refs.r_bar.transpose() * state.r;

    let mut spring = Vector3::zeros();
    for i in 0..3 {
        let e_i = Vector3::ith(i, 1.0);
        spring += gains.k_axes[i] * e_i.cross(&(r_e.transpose() * e_i));
    }

    let jw = params.j * state.w;
    let drift = skew(&jw) * state.w
        - params.tau_g
        - params.a_flow * (state.r.transpose() * state.v)
        - params.c_damp * state.w;

    let jw_bar = params.j * refs.w_bar;
    let ref_dyn = skew(&jw_bar) * refs.w_bar
        - params.tau_g
        - params.a_flow * (refs.r_bar.transpose() * refs.v_bar)
        - params.c_damp * refs.w_bar
        + refs.tau_bar;

    let frame_motion = (skew(&state.w) * r_tilde.transpose()
        - r_tilde.transpose() * skew(&refs.w_bar))
        * refs.w_bar
        + skew(&w_e) * (r_e.transpose() * refs.w_d)
        - r_e.transpose() * refs.dw_d;

    -gains.k_w * w_e + gains.k_r * spring - drift
        + params.j * (r_tilde.transpose() * (params.j_inv * ref_dyn))
        - params.j * frame_motion
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn bench_params() -> QuadParams {
        QuadParams::new(
            9.81,
            Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.1e-3, 4.3e-3)),
            Matrix3::from_diagonal(&Vector3::new(0.26, 0.28, 0.42)),
            Matrix3::identity() * 0.1,
            Matrix3::identity() * 0.5,
            Vector3::zeros(),
            45.21,
        )
        .unwrap()
    }

    fn random_rotation(rng: &mut StdRng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-3.0..3.0);
        rodrigues(&axis.normalize(), angle)
    }

    fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let k = skew(axis);
        Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
    }

    #[test]
    fn skew_and_vee_are_inverse_and_match_cross_product() {
        let a = Vector3::new(1.0, -2.0, 3.0);
        let b = Vector3::new(-0.5, 0.7, 2.0);
        assert_relative_eq!(skew(&a) * b, a.cross(&b));
        assert_relative_eq!(vee(&skew(&a)), a);
    }

    #[test]
    fn dynamics_match_componentwise_reference_implementation() {
        // Same equations written out in scalars with no shared code.
        let params = QuadParams::new(
            9.81,
            Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.1e-3, 4.3e-3)),
            Matrix3::from_diagonal(&Vector3::new(0.26, 0.28, 0.42)),
            Matrix3::identity() * 0.1,
            Matrix3::identity() * 0.5,
            Vector3::new(1e-3, -2e-3, 3e-3),
            45.21,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(0x5eed_0040);
        for _ in 0..50 {
            let state = QuadState {
                p: Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0)),
                v: Vector3::from_fn(|_, _| rng.gen_range(-8.0..8.0)),
                r: random_rotation(&mut rng),
                w: Vector3::from_fn(|_, _| rng.gen_range(-20.0..20.0)),
            };
            let thrust = rng.gen_range(0.0..45.0);
            let torque = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));

            let (dp, dv, dr, dw) = dynamics_deriv(&params, &state, thrust, &torque);

            for i in 0..3 {
                assert_relative_eq!(dp[i], state.v[i]);
            }
            // dv_i = g [i==2] - T r_i3 - d_i v_i.
            let d = [0.26, 0.28, 0.42];
            for i in 0..3 {
                let grav = if i == 2 { 9.81 } else { 0.0 };
                let want = grav - thrust * state.r[(i, 2)] - d[i] * state.v[i];
                assert_relative_eq!(dv[i], want, epsilon = 1e-14, max_relative = 1e-14);
            }
            // dr = R S(w) columnwise.
            for i in 0..3 {
                for j in 0..3 {
                    let s = [
                        [0.0, -state.w.z, state.w.y],
                        [state.w.z, 0.0, -state.w.x],
                        [-state.w.y, state.w.x, 0.0],
                    ];
                    let mut want = 0.0;
                    for k in 0..3 {
                        want += state.r[(i, k)] * s[k][j];
                    }
                    assert_relative_eq!(dr[(i, j)], want, epsilon = 1e-14, max_relative = 1e-14);
                }
            }
            // dw from the moment balance, scalar form.
            let jd = [2.5e-3, 2.1e-3, 4.3e-3];
            let jw = [
                jd[0] * state.w.x,
                jd[1] * state.w.y,
                jd[2] * state.w.z,
            ];
            let gyro = [
                jw[1] * state.w.z - jw[2] * state.w.y,
                jw[2] * state.w.x - jw[0] * state.w.z,
                jw[0] * state.w.y - jw[1] * state.w.x,
            ];
            // S(Jw) w = Jw x w.
            let gyro = [-gyro[0], -gyro[1], -gyro[2]];
            let body_v = state.r.transpose() * state.v;
            let tau_g = [1e-3, -2e-3, 3e-3];
            for i in 0..3 {
                let want = (-gyro[i] - tau_g[i] - 0.1 * body_v[i] - 0.5 * state.w[i]
                    + torque[i])
                    / jd[i];
                assert_relative_eq!(dw[i], want, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn hover_with_gravity_thrust_is_an_equilibrium() {
        let params = QuadParams::new(
            9.81,
            Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.1e-3, 4.3e-3)),
            Matrix3::from_diagonal(&Vector3::new(0.26, 0.28, 0.42)),
            Matrix3::identity() * 0.1,
            Matrix3::identity() * 0.5,
            Vector3::new(1e-3, 2e-3, -1e-3),
            45.21,
        )
        .unwrap();
        let state = QuadState {
            p: Vector3::new(1.0, 2.0, -10.0),
            v: Vector3::zeros(),
            r: Matrix3::identity(),
            w: Vector3::zeros(),
        };
        // Torque must hold off the constant bias for a true equilibrium.
        let (_, dv, dr, dw) =
            dynamics_deriv(&params, &state, params.g, &Vector3::new(1e-3, 2e-3, -1e-3));
        assert!(dv.norm() < 1e-15);
        assert!(dr.norm() < 1e-15);
        assert!(dw.norm() < 1e-15);
    }

    #[test]
    fn rk4_matches_exact_rigid_body_solution() {
        // Zero gravity, zero damping, torque balancing the gyroscopic
        // term: the body spins at constant rate and drifts in a straight
        // line, with the exact rotation given by the axis-angle formula.
        let params = QuadParams::new(
            1e-30, // effectively zero; the constructor requires positive
            Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.1e-3, 4.3e-3)),
            Matrix3::zeros(),
            Matrix3::zeros(),
            Matrix3::zeros(),
            Vector3::zeros(),
            45.21,
        )
        .unwrap();
        let w = Vector3::new(0.7, -1.3, 2.1);
        let jw = params.j * w;
        let torque = -(skew(&jw) * w);
        let r0 = {
            let mut rng = StdRng::seed_from_u64(0x5eed_0041);
            random_rotation(&mut rng)
        };
        let mut state = QuadState {
            p: Vector3::new(1.0, 0.0, -5.0),
            v: Vector3::new(0.3, -0.2, 0.1),
            r: r0,
            w,
        };
        let dt = 1e-3;
        for _ in 0..1000 {
            state = rk4_step(&params, &state, 0.0, &torque, dt);
        }
        let t = 1.0;
        let angle = w.norm() * t;
        let exact_r = r0 * rodrigues(&(w / w.norm()), angle);
        assert!((state.r - exact_r).abs().max() < 1e-9);
        assert!((state.p - Vector3::new(1.3, -0.2, -4.9)).norm() < 1e-12);
        assert_relative_eq!(state.w, w, epsilon = 1e-10);
    }

    #[test]
    fn rotational_energy_is_conserved_without_damping() {
        let params = QuadParams::new(
            9.81,
            Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.1e-3, 4.3e-3)),
            Matrix3::zeros(),
            Matrix3::zeros(),
            Matrix3::zeros(),
            Vector3::zeros(),
            45.21,
        )
        .unwrap();
        let mut state = QuadState {
            p: Vector3::zeros(),
            v: Vector3::zeros(),
            r: Matrix3::identity(),
            w: Vector3::new(3.0, -2.0, 5.0),
        };
        let energy = |s: &QuadState| (s.w.transpose() * params.j * s.w)[0];
        let e0 = energy(&state);
        for _ in 0..2000 {
            state = rk4_step(&params, &state, 12.0, &Vector3::zeros(), 1e-3);
        }
        assert_relative_eq!(energy(&state), e0, max_relative = 1e-8);
    }

    #[test]
    fn rotation_stays_orthonormal_over_long_runs() {
        let params = bench_params();
        let mut rng = StdRng::seed_from_u64(0x5eed_0042);
        let mut state = QuadState {
            p: Vector3::zeros(),
            v: Vector3::zeros(),
            r: Matrix3::identity(),
            w: Vector3::new(5.0, 5.0, 5.0),
        };
        for _ in 0..5000 {
            let torque = Vector3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
            state = rk4_step(&params, &state, 15.0, &torque, 1e-3);
            debug_assert!(state.p.iter().all(|x| x.is_finite()));
        }
        let defect = (state.r.transpose() * state.r - Matrix3::identity()).abs().max();
        assert!(defect < 1e-13, "orthonormality defect {defect}");
        assert_relative_eq!(state.r.determinant(), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn thrust_clamp_limits_both_ends() {
        assert_eq!(clamp_thrust(-3.0, 45.0), 0.0);
        assert_eq!(clamp_thrust(50.0, 45.0), 45.0);
        assert_eq!(clamp_thrust(12.0, 45.0), 12.0);
    }

    #[test]
    fn desired_attitude_identity_at_zero_setpoint() {
        let mut rng = StdRng::seed_from_u64(0x5eed_0043);
        let r_bar = random_rotation(&mut rng);
        let r_d = desired_attitude(&Vector3::zeros(), 12.0, &r_bar).unwrap();
        assert!((r_d - Matrix3::identity()).abs().max() < 1e-14);
    }

    #[test]
    fn desired_attitude_is_a_rotation_aligned_with_the_command() {
        let mut rng = StdRng::seed_from_u64(0x5eed_0044);
        for _ in 0..100 {
            let r_bar = random_rotation(&mut rng);
            let a_d = Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0));
            let t_bar = rng.gen_range(8.0..20.0);
            let r_d = match desired_attitude(&a_d, t_bar, &r_bar) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let defect = (r_d.transpose() * r_d - Matrix3::identity()).abs().max();
            assert!(defect < 1e-12);
            assert_relative_eq!(r_d.determinant(), 1.0, max_relative = 1e-12);
            // Third column carries the commanded direction.
            let dir = Vector3::z() * t_bar - r_bar.transpose() * a_d;
            assert_relative_eq!(
                r_d * Vector3::z(),
                dir / dir.norm(),
                epsilon = 1e-12
            );
            // Realized thrust reproduces the set-point on top of the
            // reference vector.
            let t = thrust_command(&a_d, t_bar, &(r_bar * Vector3::z()));
            assert_relative_eq!(t, dir.norm(), max_relative = 1e-12);
            // Realized deviation equals the set-point: the whole point
            // of the construction.
            let realized = (r_bar * Vector3::z()) * t_bar - (r_bar * r_d * Vector3::z()) * t;
            assert_relative_eq!(realized, a_d, epsilon = 1e-10);
        }
    }

    #[test]
    fn desired_attitude_rejects_sideways_thrust() {
        // Command that tilts the thrust direction onto the body x axis.
        let r_bar = Matrix3::identity();
        let a_d = Vector3::new(-5.0, 0.0, 12.0);
        match desired_attitude(&a_d, 12.0, &r_bar) {
            Err(Error::AttitudeSingularity(_)) => {}
            other => panic!("expected attitude singularity, got {other:?}"),
        }
    }

    #[test]
    fn rotation_rate_recovers_constant_body_rate() {
        let mut rng = StdRng::seed_from_u64(0x5eed_0045);
        let r0 = random_rotation(&mut rng);
        let w = Vector3::new(0.8, -0.4, 1.9);
        let axis = w / w.norm();
        let f = |t: f64| r0 * rodrigues(&axis, w.norm() * t);
        let got = rotation_rate(&f, 0.37, 1e-5);
        assert!((got - w).norm() < 1e-8, "rate error {}", (got - w).norm());
    }

    #[test]
    fn rotation_accel_recovers_swinging_axis_rate() {
        // Fixed axis, sinusoidal angle: w = angle' axis, dw = angle'' axis.
        let axis = Vector3::new(1.0, 2.0, -1.0).normalize();
        let f = |t: f64| rodrigues(&axis, (1.3 * t).sin());
        let t = 0.81f64;
        let dangle = 1.3 * (1.3 * t).cos();
        let ddangle = -1.3 * 1.3 * (1.3 * t).sin();
        let got_w = rotation_rate(&f, t, 1e-5);
        let got_dw = rotation_accel(&f, t, 1e-5);
        assert!((got_w - axis * dangle).norm() < 1e-8);
        assert!((got_dw - axis * ddangle).norm() < 1e-5);
    }

    #[test]
    fn torque_law_reduces_error_dynamics_to_the_spring_form() {
        // Independent check of the algebraic cancellation: propagate the
        // physical rate error derivative under the control torque and
        // compare with the designed spring-damper right-hand side.
        let params = QuadParams::new(
            9.81,
            Matrix3::from_diagonal(&Vector3::new(2.5e-3, 2.1e-3, 4.3e-3)),
            Matrix3::from_diagonal(&Vector3::new(0.26, 0.28, 0.42)),
            Matrix3::identity() * 0.1,
            Matrix3::identity() * 0.5,
            Vector3::new(2e-3, -1e-3, 5e-4),
            45.21,
        )
        .unwrap();
        let gains = InnerLoopGains::new(
            params.j * 30.0,
            params.j * 70.0,
            Vector3::new(4.5, 5.0, 5.5),
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(0x5eed_0046);
        for _ in 0..50 {
            let state = QuadState {
                p: Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)),
                v: Vector3::from_fn(|_, _| rng.gen_range(-6.0..6.0)),
                r: random_rotation(&mut rng),
                w: Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0)),
            };
            let w_bar = Vector3::from_fn(|_, _| rng.gen_range(-4.0..4.0));
            let dw_bar = Vector3::from_fn(|_, _| rng.gen_range(-8.0..8.0));
            let v_bar = Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0));
            let r_bar = random_rotation(&mut rng);
            // Reference torque consistent with the reference motion.
            let jw_bar = params.j * w_bar;
            let tau_bar = params.j * dw_bar - skew(&jw_bar) * w_bar
                + params.tau_g
                + params.a_flow * (r_bar.transpose() * v_bar)
                + params.c_damp * w_bar;
            let refs = AttitudeRefs {
                r_bar,
                w_bar,
                dw_bar,
                v_bar,
                tau_bar,
                r_d: random_rotation(&mut rng),
                w_d: Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0)),
                dw_d: Vector3::from_fn(|_, _| rng.gen_range(-6.0..6.0)),
            };

            let tau = inner_loop_torque(&params, &gains, &state, &refs);
            let (r_e, w_e) = attitude_error(&state, &refs);

            // Physical side: dw from the plant under tau, minus the
            // transport terms of the two moving reference frames.
            let (_, _, _, dw) = dynamics_deriv(&params, &state, 10.0, &tau);
            let r_tilde = refs.r_bar.transpose() * state.r;
            let transport_bar = (-skew(&state.w) * r_tilde.transpose()
                + r_tilde.transpose() * skew(&refs.w_bar))
                * refs.w_bar
                + r_tilde.transpose() * refs.dw_bar;
            let transport_d =
                -skew(&w_e) * (r_e.transpose() * refs.w_d) + r_e.transpose() * refs.dw_d;
            let dw_e_physical = dw - transport_bar - transport_d;

            // Designed side: damped spring in the error frame.
            let mut spring = Vector3::zeros();
            for i in 0..3 {
                let e_i = Vector3::ith(i, 1.0);
                spring += gains.k_axes[i] * e_i.cross(&(r_e.transpose() * e_i));
            }
            let dw_e_designed = params.j_inv() * (-gains.k_w * w_e + gains.k_r * spring);

            assert!(
                (dw_e_physical - dw_e_designed).norm() < 1e-10,
                "cancellation residual {}",
                (dw_e_physical - dw_e_designed).norm()
            );
        }
    }

    #[test]
    fn closed_inner_loop_tracks_a_tumbling_start() {
        // Hover reference, identity relative rotation, vehicle starting
        // nearly upside down: the attitude error must contract.
        let params = bench_params();
        let gains = InnerLoopGains::new(
            params.j * 30.0,
            params.j * 70.0,
            Vector3::new(4.5, 5.0, 5.5),
        )
        .unwrap();
        let refs = AttitudeRefs {
            r_bar: Matrix3::identity(),
            w_bar: Vector3::zeros(),
            dw_bar: Vector3::zeros(),
            v_bar: Vector3::zeros(),
            tau_bar: params.tau_g,
            r_d: Matrix3::identity(),
            w_d: Vector3::zeros(),
            dw_d: Vector3::zeros(),
        };
        let tilt = rodrigues(&Vector3::x_axis(), 170f64.to_radians());
        let mut state = QuadState {
            p: Vector3::zeros(),
            v: Vector3::zeros(),
            r: tilt,
            w: Vector3::zeros(),
        };
        let mut err0 = None;
        for step in 0..4000 {
            let tau = inner_loop_torque(&params, &gains, &state, &refs);
            state = rk4_step(&params, &state, params.g, &tau, 1e-3);
            if step == 0 {
                err0 = Some((state.r - Matrix3::identity()).norm());
            }
        }
        let err = (state.r - Matrix3::identity()).norm();
        assert!(err < 1e-3, "attitude error {err} after 4 s");
        assert!(err < err0.unwrap());
        assert!(state.w.norm() < 1e-2);
    }
}
