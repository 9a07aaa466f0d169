//! Analytic reference trajectories and the flat map to full vehicle
//! references.
//!
//! The position trajectory and heading determine every other reference
//! quantity: the thrust vector follows from the translational dynamics
//! solved for the thrust term, the attitude from the thrust direction
//! and the heading, body rates and their derivatives from differencing
//! the attitude, and the feedforward torque from the moment balance at
//! the reference motion. Trajectories are given in closed form so the
//! chain is exact up to the differencing steps.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{delta_bound, ThrustEnvelope};
use crate::quadsim::{rotation_accel, rotation_rate, skew, QuadParams};

/// Differencing step for attitude rates; squared-step truncation and
/// roundoff amplification balance near this size.
const FD_STEP: f64 = 1e-5;

/// Closed-form reference trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FlatTrajectory {
    /// Fixed position and heading.
    Hover { p: Vector3<f64>, heading: f64 },
    /// Horizontal circle with optional vertical oscillation and a
    /// steadily turning heading:
    ///
    /// ```text
    ///   p(t) = (radius cos(omega_xy t),
    ///           radius sin(omega_xy t),
    ///           z0 + z_amp sin(omega_z t)),
    ///   heading(t) = heading_rate t
    /// ```
    Orbit {
        radius: f64,
        omega_xy: f64,
        z0: f64,
        z_amp: f64,
        omega_z: f64,
        heading_rate: f64,
    },
}

impl FlatTrajectory {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FlatTrajectory::Hover { p, heading } => {
                if !(p.iter().all(|x| x.is_finite()) && heading.is_finite()) {
                    return Err(Error::InvalidParameter("hover target not finite".into()));
                }
            }
            FlatTrajectory::Orbit {
                radius,
                omega_xy,
                z0,
                z_amp,
                omega_z,
                heading_rate,
            } => {
                let all = [radius, omega_xy, z0, z_amp, omega_z, heading_rate];
                if !all.iter().all(|x| x.is_finite()) {
                    return Err(Error::InvalidParameter("orbit parameters not finite".into()));
                }
                if radius < 0.0 || z_amp < 0.0 {
                    return Err(Error::InvalidParameter(
                        "orbit radius and vertical amplitude must be nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        match *self {
            FlatTrajectory::Hover { p, .. } => p,
            FlatTrajectory::Orbit {
                radius,
                omega_xy,
                z0,
                z_amp,
                omega_z,
                ..
            } => Vector3::new(
                radius * (omega_xy * t).cos(),
                radius * (omega_xy * t).sin(),
                z0 + z_amp * (omega_z * t).sin(),
            ),
        }
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        match *self {
            FlatTrajectory::Hover { .. } => Vector3::zeros(),
            FlatTrajectory::Orbit {
                radius,
                omega_xy,
                z_amp,
                omega_z,
                ..
            } => Vector3::new(
                -radius * omega_xy * (omega_xy * t).sin(),
                radius * omega_xy * (omega_xy * t).cos(),
                z_amp * omega_z * (omega_z * t).cos(),
            ),
        }
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        match *self {
            FlatTrajectory::Hover { .. } => Vector3::zeros(),
            FlatTrajectory::Orbit {
                radius,
                omega_xy,
                z_amp,
                omega_z,
                ..
            } => Vector3::new(
                -radius * omega_xy * omega_xy * (omega_xy * t).cos(),
                -radius * omega_xy * omega_xy * (omega_xy * t).sin(),
                -z_amp * omega_z * omega_z * (omega_z * t).sin(),
            ),
        }
    }

    pub fn heading(&self, t: f64) -> f64 {
        match *self {
            FlatTrajectory::Hover { heading, .. } => heading,
            FlatTrajectory::Orbit { heading_rate, .. } => heading_rate * t,
        }
    }

    pub fn heading_rate(&self) -> f64 {
        match *self {
            FlatTrajectory::Hover { .. } => 0.0,
            FlatTrajectory::Orbit { heading_rate, .. } => heading_rate,
        }
    }
}

/// Everything the two control loops need about the reference at one
/// instant.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    /// Reference attitude (body to world).
    pub r: Matrix3<f64>,
    /// Reference body rate and its derivative.
    pub w: Vector3<f64>,
    pub dw: Vector3<f64>,
    /// Reference thrust magnitude, acceleration units.
    pub t_bar: f64,
    /// Reference thrust direction in the world frame (third attitude
    /// column).
    pub z_b: Vector3<f64>,
    /// Feedforward torque of the reference motion.
    pub tau_bar: Vector3<f64>,
}

/// Reference thrust magnitude: the translational dynamics solved for
/// the thrust term, `|g e3 - a - D v|`.
pub fn reference_thrust(traj: &FlatTrajectory, t: f64, params: &QuadParams) -> f64 {
    let f = Vector3::z() * params.g - traj.acceleration(t) - params.d_drag * traj.velocity(t);
    f.norm()
}

/// Reference attitude from thrust direction and heading.
///
/// The body `z` axis carries the thrust direction; the heading fixes
/// the rotation about it by keeping the body `y` axis orthogonal to the
/// horizontal heading vector. Fails when the thrust vector vanishes or
/// aligns with the heading direction.
pub fn reference_attitude(
    traj: &FlatTrajectory,
    t: f64,
    params: &QuadParams,
) -> Result<Matrix3<f64>> {
    let f = Vector3::z() * params.g - traj.acceleration(t) - params.d_drag * traj.velocity(t);
    let t_bar = f.norm();
    if t_bar < 1e-9 {
        return Err(Error::SingularReference(format!(
            "reference thrust vanishes at t = {t}"
        )));
    }
    let z_b = f / t_bar;
    let psi = traj.heading(t);
    let x_c = Vector3::new(psi.cos(), psi.sin(), 0.0);
    let y_raw = z_b.cross(&x_c);
    let n = y_raw.norm();
    if n < 1e-6 {
        return Err(Error::SingularReference(format!(
            "reference thrust aligns with the heading direction at t = {t}"
        )));
    }
    let y_b = y_raw / n;
    let x_b = y_b.cross(&z_b);
    Ok(Matrix3::from_columns(&[x_b, y_b, z_b]))
}

/// Full reference sample at time `t`: kinematics, attitude, body rates
/// by central differences of the attitude map, and the feedforward
/// torque from the moment balance.
pub fn sample_reference(
    traj: &FlatTrajectory,
    t: f64,
    params: &QuadParams,
) -> Result<ReferenceSample> {
    let p = traj.position(t);
    let v = traj.velocity(t);
    let a = traj.acceleration(t);
    let r = reference_attitude(traj, t, params)?;
    let t_bar = reference_thrust(traj, t, params);

    // The differencing stencil evaluates the attitude map near t; any
    // singularity inside the stencil surfaces as an error here.
    for dt in [-2.0 * FD_STEP, -FD_STEP, FD_STEP, 2.0 * FD_STEP] {
        reference_attitude(traj, t + dt, params)?;
    }
    let att = |s: f64| reference_attitude(traj, s, params).expect("stencil checked above");
    let w = rotation_rate(&att, t, FD_STEP);
    let dw = rotation_accel(&att, t, FD_STEP);

    let jw = params.j * w;
    let tau_bar = params.j * dw - skew(&jw) * w
        + params.tau_g
        + params.a_flow * (r.transpose() * v)
        + params.c_damp * w;

    Ok(ReferenceSample {
        t,
        p,
        v,
        a,
        r,
        w,
        dw,
        t_bar,
        z_b: r * Vector3::z(),
        tau_bar,
    })
}

/// Range summary of a feasibility sweep along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub t_bar_min: f64,
    pub t_bar_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Grid points checked.
    pub samples: usize,
}

/// Sweeps the reference thrust over `[0, duration]` on a uniform grid
/// and verifies it stays inside the admissible band everywhere; also
/// probes the attitude construction at every grid point.
///
/// Fails with the first infeasible or singular instant.
pub fn check_reference_feasibility(
    traj: &FlatTrajectory,
    duration: f64,
    step: f64,
    params: &QuadParams,
    env: &ThrustEnvelope,
) -> Result<FeasibilityReport> {
    traj.validate()?;
    if !(duration > 0.0 && step > 0.0 && step <= duration) {
        return Err(Error::InvalidParameter(format!(
            "sweep needs 0 < step <= duration, got step {step}, duration {duration}"
        )));
    }
    let n = (duration / step).ceil() as usize;
    let mut report = FeasibilityReport {
        t_bar_min: f64::INFINITY,
        t_bar_max: f64::NEG_INFINITY,
        delta_min: f64::INFINITY,
        delta_max: f64::NEG_INFINITY,
        samples: n + 1,
    };
    for i in 0..=n {
        let t = (i as f64 * step).min(duration);
        let t_bar = reference_thrust(traj, t, params);
        let delta = delta_bound(t_bar, env)?;
        reference_attitude(traj, t, params)?;
        report.t_bar_min = report.t_bar_min.min(t_bar);
        report.t_bar_max = report.t_bar_max.max(t_bar);
        report.delta_min = report.delta_min.min(delta);
        report.delta_max = report.delta_max.max(delta);
    }
    Ok(report)
}
