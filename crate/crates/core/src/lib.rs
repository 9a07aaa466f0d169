//! Trajectory-tracking control stack for quadcopters.
//!
//! The stack is a cascade. An outer loop runs one constrained MPC per
//! translational axis on an exactly discretized fourth-order error model
//! whose input-smoothing filter makes the commanded acceleration twice
//! differentiable. A non-quadratic terminal cost (quadratic plus a cubic
//! term in a second Lyapunov metric) makes the finite-horizon controller
//! stabilizing for every horizon length, without terminal constraints. An
//! inner loop tracks the resulting thrust direction with a geometric
//! attitude controller on SO(3). Acceleration bounds are derived from the
//! thrust envelope of the reference trajectory and vary along it; the MPC
//! enforces them per step, which keeps every intermediate thrust command
//! inside the actuator envelope by construction.
//!
//! Crate layout:
//! - [`model`]: per-axis continuous/discrete models, thrust envelope,
//!   time-varying acceleration bounds.
//! - [`certificates`]: stabilizing gain, Lyapunov matrices and scalar
//!   coefficients of the terminal cost, with numeric residual checks.
//! - [`mpc`]: condensed single-shooting formulation and an interior-point
//!   solver for the per-axis problem.
//! - [`flatness`]: analytic reference trajectories and the reference
//!   state/input they induce.
//! - [`quadsim`]: rigid-body simulator and the geometric inner loop.
//! - [`scenario`] / [`harness`]: configuration files, closed-loop runner,
//!   CSV/JSON emission.

pub mod certificates;
pub mod error;
pub mod flatness;
pub mod harness;
pub mod model;
pub mod mpc;
pub mod numeric;
pub mod quadsim;
pub mod scenario;

pub use certificates::CertificateSet;
pub use error::Error;
pub use flatness::{FlatTrajectory, ReferenceSample};
pub use harness::{plan_scenario, run_scenario, write_csv, write_summary_json, RunPlan, RunResult, RunSummary};
pub use model::{ConstraintSchedule, ContinuousAxisModel, DiscreteAxisModel, ThrustEnvelope};
pub use mpc::{AxisController, MpcConfig, MpcProblem, MpcSolution, SolveStatus, StepOutcome};
pub use quadsim::{InnerLoopGains, QuadParams, QuadState};
pub use scenario::{load_scenario, parse_scenario, Scenario, Variant};
