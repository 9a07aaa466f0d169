//! Plain-text scenario files: flat `key = value` lines describing a
//! vehicle, a reference trajectory, controller tuning and a simulation
//! window.
//!
//! `#` starts a comment (full line or trailing), blank lines are
//! skipped, keys may not repeat and unknown keys are rejected so typos
//! fail loudly. Vector-valued entries take whitespace-separated
//! numbers; gain entries accept one number (a scale) or three (a
//! diagonal).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flatness::FlatTrajectory;
use crate::model::ThrustEnvelope;
use crate::quadsim::{InnerLoopGains, QuadParams};

/// Which bound schedule the outer loop receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Time-varying interval minima along the reference.
    Tv,
    /// One constant bound, the minimum over the whole run.
    Ti,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Tv => "tv",
            Variant::Ti => "ti",
        }
    }
}

/// Overrides for the simulation start; anything left unset starts on
/// the reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InitialConditions {
    pub p: Option<Vector3<f64>>,
    pub v: Option<Vector3<f64>>,
    /// Attitude as a product of axis rotations applied in x, y, z
    /// order, degrees.
    pub att_deg: Option<Vector3<f64>>,
    pub w: Option<Vector3<f64>>,
    /// Uniform random offset amplitude added to the initial position
    /// and velocity, drawn from the run seed.
    pub jitter: f64,
}

/// One fully specified benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub params: QuadParams,
    pub env: ThrustEnvelope,
    pub traj: FlatTrajectory,
    /// Outer-loop sampling period and set-point filter constant.
    pub h: f64,
    pub gamma: f64,
    /// Horizon length.
    pub n: usize,
    pub q: Matrix4<f64>,
    pub r: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub oversample: usize,
    pub gains: InnerLoopGains,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Write zeros into the per-row solve-time column so repeated runs
    /// are byte-identical.
    pub fixed_timing: bool,
    pub variant: Variant,
    pub init: InitialConditions,
}

impl Scenario {
    /// Inner ticks per outer control step.
    pub fn ticks_per_ctrl(&self) -> usize {
        (self.h / self.dt).round() as usize
    }

    /// Total inner ticks in the run.
    pub fn total_ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Total outer control steps in the run.
    pub fn total_ctrl_steps(&self) -> usize {
        (self.duration / self.h).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.traj.validate()?;
        if !(self.dt > 0.0 && self.h > 0.0 && self.duration > 0.0) {
            return Err(Error::Scenario(
                "sim.dt, ctrl.h and sim.duration must be positive".into(),
            ));
        }
        let ratio = self.h / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(Error::Scenario(format!(
                "ctrl.h = {} must be an integer multiple of sim.dt = {}",
                self.h, self.dt
            )));
        }
        let steps = self.duration / self.h;
        if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
            return Err(Error::Scenario(format!(
                "sim.duration = {} must be an integer multiple of ctrl.h = {}",
                self.duration, self.h
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Scenario("ctrl.gamma must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::Scenario("ctrl.N must be at least 1".into()));
        }
        if self.oversample == 0 {
            return Err(Error::Scenario("ctrl.oversample must be at least 1".into()));
        }
        if self.r <= 0.0 {
            return Err(Error::Scenario("ctrl.R must be positive".into()));
        }
        if self.init.jitter < 0.0 {
            return Err(Error::Scenario("init.jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Parses a scenario from file contents. See the module docs for the
/// format; [`load_scenario`] reads from a path.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Scenario(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Scenario(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
    }
    build_scenario(&mut map)
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn build_scenario(map: &mut BTreeMap<String, String>) -> Result<Scenario> {
    let mut take = |key: &str| map.remove(key);

    let g = req_f64(&mut take, "quad.g")?;
    let j_diag = req_vec3(&mut take, "quad.J")?;
    let d_diag = req_vec3(&mut take, "quad.D")?;
    let a_flow = scale_or_diag(&mut take, "quad.A")?;
    let c_damp = scale_or_diag(&mut take, "quad.C")?;
    let tau_g = opt_vec3(&mut take, "quad.tau_g")?.unwrap_or_else(Vector3::zeros);
    let t_max = req_f64(&mut take, "quad.Tmax")?;
    let j = Matrix3::from_diagonal(&j_diag);
    let params = QuadParams::new(
        g,
        j,
        Matrix3::from_diagonal(&d_diag),
        a_flow,
        c_damp,
        tau_g,
        t_max,
    )?;

    let env = ThrustEnvelope::new(
        t_max,
        req_f64(&mut take, "env.delta")?,
        req_f64(&mut take, "env.eps1")?,
        req_f64(&mut take, "env.eps2")?,
    )?;

    let kind = req_str(&mut take, "traj.kind")?;
    let traj = match kind.as_str() {
        "hover" => FlatTrajectory::Hover {
            p: req_vec3(&mut take, "traj.p")?,
            heading: opt_f64(&mut take, "traj.heading")?.unwrap_or(0.0),
        },
        "orbit" => FlatTrajectory::Orbit {
            radius: req_f64(&mut take, "traj.radius")?,
            omega_xy: req_f64(&mut take, "traj.omega_xy")?,
            z0: req_f64(&mut take, "traj.z0")?,
            z_amp: opt_f64(&mut take, "traj.z_amp")?.unwrap_or(0.0),
            omega_z: opt_f64(&mut take, "traj.omega_z")?.unwrap_or(0.0),
            heading_rate: opt_f64(&mut take, "traj.heading_rate")?.unwrap_or(0.0),
        },
        other => {
            return Err(Error::Scenario(format!(
                "traj.kind must be `hover` or `orbit`, got `{other}`"
            )))
        }
    };
    traj.validate()?;

    let h = req_f64(&mut take, "ctrl.h")?;
    let gamma = req_f64(&mut take, "ctrl.gamma")?;
    let n = req_f64(&mut take, "ctrl.N")? as usize;
    let q_diag = req_vec4(&mut take, "ctrl.Q")?;
    let r = req_f64(&mut take, "ctrl.R")?;
    let kkt_tol = opt_f64(&mut take, "ctrl.kkt_tol")?.unwrap_or(1e-8);
    let max_iter = opt_f64(&mut take, "ctrl.max_iter")?.unwrap_or(100.0) as usize;
    let oversample = opt_f64(&mut take, "ctrl.oversample")?.unwrap_or(20.0) as usize;

    let k_w = gain_matrix(&mut take, "inner.Kw", &j)?;
    let k_r = gain_matrix(&mut take, "inner.KR", &j)?;
    let k_axes = req_vec3(&mut take, "inner.k")?;
    let gains = InnerLoopGains::new(k_w, k_r, k_axes)?;

    let duration = req_f64(&mut take, "sim.duration")?;
    let dt = req_f64(&mut take, "sim.dt")?;
    let seed = opt_f64(&mut take, "sim.seed")?.unwrap_or(0.0) as u64;
    let fixed_timing = opt_bool(&mut take, "sim.fixed_timing")?.unwrap_or(false);

    let variant = match opt_str(&mut take, "variant")?.as_deref() {
        None | Some("tv") => Variant::Tv,
        Some("ti") => Variant::Ti,
        Some(other) => {
            return Err(Error::Scenario(format!(
                "variant must be `tv` or `ti`, got `{other}`"
            )))
        }
    };

    let init = InitialConditions {
        p: opt_vec3(&mut take, "init.p")?,
        v: opt_vec3(&mut take, "init.v")?,
        att_deg: opt_vec3(&mut take, "init.att_deg")?,
        w: opt_vec3(&mut take, "init.w")?,
        jitter: opt_f64(&mut take, "init.jitter")?.unwrap_or(0.0),
    };

    if let Some(key) = map.keys().next() {
        return Err(Error::Scenario(format!("unknown key `{key}`")));
    }

    let scenario = Scenario {
        params,
        env,
        traj,
        h,
        gamma,
        n,
        q: Matrix4::from_diagonal(&q_diag),
        r,
        kkt_tol,
        max_iter,
        oversample,
        gains,
        duration,
        dt,
        seed,
        fixed_timing,
        variant,
        init,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn parse_numbers(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Scenario(format!("{key}: `{tok}` is not a number")))
        })
        .collect()
}

fn req_str(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<String> {
    take(key).ok_or_else(|| Error::Scenario(format!("missing required key `{key}`")))
}

fn opt_str(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<Option<String>> {
    Ok(take(key))
}

fn req_f64(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<f64> {
    let v = req_str(take, key)?;
    let nums = parse_numbers(key, &v)?;
    if nums.len() != 1 {
        return Err(Error::Scenario(format!("{key}: expected one number")));
    }
    Ok(nums[0])
}

fn opt_f64(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<Option<f64>> {
    match take(key) {
        None => Ok(None),
        Some(v) => {
            let nums = parse_numbers(key, &v)?;
            if nums.len() != 1 {
                return Err(Error::Scenario(format!("{key}: expected one number")));
            }
            Ok(Some(nums[0]))
        }
    }
}

fn opt_bool(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<Option<bool>> {
    match take(key).as_deref() {
        None => Ok(None),
        Some("true") => Ok(Some(true)),
        Some("false") => Ok(Some(false)),
        Some(other) => Err(Error::Scenario(format!(
            "{key}: expected `true` or `false`, got `{other}`"
        ))),
    }
}

fn req_vec3(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<Vector3<f64>> {
    let v = req_str(take, key)?;
    let nums = parse_numbers(key, &v)?;
    if nums.len() != 3 {
        return Err(Error::Scenario(format!("{key}: expected three numbers")));
    }
    Ok(Vector3::new(nums[0], nums[1], nums[2]))
}

fn opt_vec3(
    take: &mut impl FnMut(&str) -> Option<String>,
    key: &str,
) -> Result<Option<Vector3<f64>>> {
    match take(key) {
        None => Ok(None),
        Some(v) => {
            let nums = parse_numbers(key, &v)?;
            if nums.len() != 3 {
                return Err(Error::Scenario(format!("{key}: expected three numbers")));
            }
            Ok(Some(Vector3::new(nums[0], nums[1], nums[2])))
        }
    }
}

fn req_vec4(take: &mut impl FnMut(&str) -> Option<String>, key: &str) -> Result<Vector4<f64>> {
    let v = req_str(take, key)?;
    let nums = parse_numbers(key, &v)?;
    if nums.len() != 4 {
        return Err(Error::Scenario(format!("{key}: expected four numbers")));
    }
    Ok(Vector4::new(nums[0], nums[1], nums[2], nums[3]))
}

/// One number scales the identity, three give a diagonal.
fn scale_or_diag(
    take: &mut impl FnMut(&str) -> Option<String>,
    key: &str,
) -> Result<Matrix3<f64>> {
    let v = req_str(take, key)?;
    let nums = parse_numbers(key, &v)?;
    match nums.len() {
        1 => Ok(Matrix3::identity() * nums[0]),
        3 => Ok(Matrix3::from_diagonal(&Vector3::new(
            nums[0], nums[1], nums[2],
        ))),
        _ => Err(Error::Scenario(format!(
            "{key}: expected one number (scale) or three (diagonal)"
        ))),
    }
}

/// One number scales the inertia (uniform error dynamics across axes),
/// three give an absolute diagonal gain.
fn gain_matrix(
    take: &mut impl FnMut(&str) -> Option<String>,
    key: &str,
    j: &Matrix3<f64>,
) -> Result<Matrix3<f64>> {
    let v = req_str(take, key)?;
    let nums = parse_numbers(key, &v)?;
    match nums.len() {
        1 => Ok(j * nums[0]),
        3 => Ok(Matrix3::from_diagonal(&Vector3::new(
            nums[0], nums[1], nums[2],
        ))),
        _ => Err(Error::Scenario(format!(
            "{key}: expected one number (inertia scale) or three (diagonal)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FULL: &str = r#"
# benchmark vehicle
quad.g = 9.81
quad.J = 2.5e-3 2.1e-3 4.3e-3
quad.D = 0.26 0.28 0.42
quad.A = 0.1
quad.C = 0.5
quad.Tmax = 45.21

env.delta = 0.1
env.eps1 = 0.5
env.eps2 = 0.5

traj.kind = orbit
traj.radius = 2.0
traj.omega_xy = 4.0
traj.z0 = -10.0
traj.z_amp = 2.0
traj.omega_z = 2.0
traj.heading_rate = 0.2

ctrl.h = 0.05
ctrl.gamma = 0.1
ctrl.N = 20
ctrl.Q = 100 1 1 1
ctrl.R = 0.01

inner.Kw = 30
inner.KR = 70
inner.k = 4.5 5.0 5.5

sim.duration = 25.0
sim.dt = 0.001

init.p = 3 0 -10
init.v = 0 8 4
init.att_deg = 170 30 20
"#;

    #[test]
    fn full_scenario_parses_with_defaults() {
        let sc = parse_scenario(FULL).unwrap();
        assert_relative_eq!(sc.params.g, 9.81);
        assert_relative_eq!(sc.params.j[(2, 2)], 4.3e-3);
        assert_relative_eq!(sc.params.a_flow[(1, 1)], 0.1);
        assert_relative_eq!(sc.params.tau_g.norm(), 0.0);
        assert_eq!(sc.n, 20);
        assert_relative_eq!(sc.q[(0, 0)], 100.0);
        assert_relative_eq!(sc.kkt_tol, 1e-8);
        assert_eq!(sc.max_iter, 100);
        assert_eq!(sc.oversample, 20);
        assert_eq!(sc.variant, Variant::Tv);
        assert!(!sc.fixed_timing);
        assert_eq!(sc.seed, 0);
        // Scaled gains follow the inertia.
        assert_relative_eq!(sc.gains.k_w[(0, 0)], 30.0 * 2.5e-3);
        assert_relative_eq!(sc.gains.k_r[(2, 2)], 70.0 * 4.3e-3);
        assert_eq!(sc.ticks_per_ctrl(), 50);
        assert_eq!(sc.total_ticks(), 25000);
        assert_eq!(sc.total_ctrl_steps(), 500);
        assert_eq!(sc.init.p.unwrap(), Vector3::new(3.0, 0.0, -10.0));
        assert_eq!(sc.init.att_deg.unwrap(), Vector3::new(170.0, 30.0, 20.0));
        assert!(sc.init.w.is_none());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{FULL}\nctrl.QQ = 1\n");
        match parse_scenario(&text) {
            Err(Error::Scenario(msg)) => assert!(msg.contains("ctrl.QQ")),
            other => panic!("expected scenario error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let text = format!("{FULL}\nquad.g = 1.0\n");
        match parse_scenario(&text) {
            Err(Error::Scenario(msg)) => assert!(msg.contains("duplicate")),
            other => panic!("expected scenario error, got {other:?}"),
        }
    }

    #[test]
    fn missing_required_key_is_reported() {
        let text = FULL.replace("quad.Tmax = 45.21", "");
        match parse_scenario(&text) {
            Err(e) => {
                let msg = e.to_string();
                assert!(msg.contains("quad.Tmax"), "got: {msg}");
            }
            other => panic!("expected error, got {other:?}"),
        }
    }

    #[test]
    fn hover_scenario_and_variant_parse() {
        let text = FULL
            .replace(
                "traj.kind = orbit",
                "traj.kind = hover\ntraj.p = 0 0 -5\nvariant = ti",
            )
            .replace("traj.radius = 2.0", "")
            .replace("traj.omega_xy = 4.0", "")
            .replace("traj.z0 = -10.0", "")
            .replace("traj.z_amp = 2.0", "")
            .replace("traj.omega_z = 2.0", "")
            .replace("traj.heading_rate = 0.2", "");
        let sc = parse_scenario(&text).unwrap();
        assert_eq!(sc.variant, Variant::Ti);
        match sc.traj {
            FlatTrajectory::Hover { p, heading } => {
                assert_eq!(p, Vector3::new(0.0, 0.0, -5.0));
                assert_eq!(heading, 0.0);
            }
            other => panic!("expected hover, got {other:?}"),
        }
    }

    #[test]
    fn misaligned_periods_are_rejected() {
        let text = FULL.replace("ctrl.h = 0.05", "ctrl.h = 0.0507");
        match parse_scenario(&text) {
            Err(Error::Scenario(msg)) => assert!(msg.contains("integer multiple")),
            other => panic!("expected scenario error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_number_is_reported_with_key() {
        let text = FULL.replace("ctrl.R = 0.01", "ctrl.R = fast");
        match parse_scenario(&text) {
            Err(Error::Scenario(msg)) => assert!(msg.contains("ctrl.R")),
            other => panic!("expected scenario error, got {other:?}"),
        }
    }
}
