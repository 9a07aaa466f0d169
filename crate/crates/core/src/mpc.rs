//! Per-axis constrained MPC: condensed single-shooting formulation with
//! time-varying bounds, solved by a damped primal-dual interior-point
//! method.
//!
//! The decision variable is the input sequence `U` alone; states are
//! eliminated through the prediction matrices, so the problem is a small
//! dense convex program
//!
//! ```text
//!   min_U  sum_i x_i'Q x_i + r u_i^2  +  V(x_N),   x_i = Phi_i x + Gamma_i U
//!   s.t.   |u_i|   <= Delta_(i|k)        i = 0..N-1
//!          |a_i|   <= Delta_(i|k)        i = 1..N
//!          |eta_i| <= Delta_(i|k)        i = 1..N
//! ```
//!
//! with the non-quadratic terminal cost from [`crate::certificates`].
//! The bounds are interval minima of the thrust-derived envelope, so
//! feasibility at the sample times implies feasibility between them (the
//! filter state is a convex combination of quantities the constraints
//! pin down).
//!
//! `U = 0` is strictly feasible whenever the measured filter states
//! respect the first bound and the schedule satisfies the shrink
//! condition, because the free response of the filter pair contracts
//! faster than the bounds may shrink. The solver therefore follows a
//! feasible path: every iterate, converged or not, satisfies the
//! constraints strictly.

use nalgebra::{DMatrix, DVector, Matrix4, RowVector4, Vector4};

use crate::certificates::{CertificateSet, TerminalCost};
use crate::error::{Error, Result};
use crate::model::{ConstraintSchedule, DiscreteAxisModel};

/// Tuning of the per-axis MPC.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Horizon length (steps), >= 1.
    pub n: usize,
    /// Stage state weight, symmetric positive definite.
    pub q: Matrix4<f64>,
    /// Stage input weight, > 0.
    pub r: f64,
    /// Relative KKT tolerance for optimality.
    pub kkt_tol: f64,
    /// Interior-point iteration cap.
    pub max_iter: usize,
    /// Grid points per sampling interval when taking bound minima.
    pub oversample: usize,
}

impl MpcConfig {
    pub fn new(n: usize, q: Matrix4<f64>, r: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if r <= 0.0 || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("input weight r = {r} must be > 0")));
        }
        let sym_err = (q - q.transpose()).abs().max();
        if sym_err > 1e-12 {
            return Err(Error::InvalidParameter(
                "stage weight Q must be symmetric".into(),
            ));
        }
        if q.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::InvalidParameter(
                "stage weight Q must be positive definite".into(),
            ));
        }
        Ok(Self {
            n,
            q,
            r,
            kkt_tol: 1e-8,
            max_iter: 100,
            oversample: 20,
        })
    }

    pub fn with_tolerances(mut self, kkt_tol: f64, max_iter: usize) -> Self {
        self.kkt_tol = kkt_tol;
        self.max_iter = max_iter;
        self
    }
}

/// Stacked prediction matrices: block row `i` of `phi` is `A^i`, block
/// row `i` of `gamma` holds `A^(i-1-j) B` in column `j < i`.
#[derive(Debug, Clone)]
pub struct CondensedPrediction {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// State dimension of one block row.
    pub n_x: usize,
    /// Horizon length (gamma has this many columns).
    pub horizon: usize,
}

/// Builds the condensed prediction for `x_(i) = Phi_i x + Gamma_i U`,
/// `i = 0..=N`, single input per step.
pub fn condense(a: &DMatrix<f64>, b: &DVector<f64>, n: usize) -> CondensedPrediction {
    let n_x = a.nrows();
    assert_eq!(n_x, a.ncols());
    assert_eq!(b.len(), n_x);
    assert!(n >= 1);

    let mut phi = DMatrix::<f64>::zeros(n_x * (n + 1), n_x);
    let mut gamma = DMatrix::<f64>::zeros(n_x * (n + 1), n);

    let mut a_pow = DMatrix::<f64>::identity(n_x, n_x);
    for i in 0..=n {
        phi.view_mut((i * n_x, 0), (n_x, n_x)).copy_from(&a_pow);
        if i < n {
            a_pow = a * &a_pow;
        }
    }
    // Column j of gamma: the response to a unit input at step j, shifted
    // down the block rows.
    for j in 0..n {
        let mut impulse = b.clone();
        for i in (j + 1)..=n {
            gamma
                .view_mut((i * n_x, j), (n_x, 1))
                .copy_from(&impulse);
            if i < n {
                impulse = a * &impulse;
            }
        }
    }

    CondensedPrediction {
        phi,
        gamma,
        n_x,
        horizon: n,
    }
}

/// Linear inequality system `G U <= ub` for one solve.
#[derive(Debug, Clone)]
pub struct BoundRows {
    pub g: DMatrix<f64>,
    pub ub: DVector<f64>,
}

/// Outcome of one interior-point solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// KKT residual below tolerance.
    Optimal,
    /// Iteration cap hit; the returned iterate is feasible but its
    /// optimality residual is above tolerance.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// Optimal (or best feasible) input sequence, length N.
    pub u: DVector<f64>,
    /// Objective value at `u`.
    pub cost: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Relative KKT residual at the returned iterate.
    pub kkt_residual: f64,
    /// Constraints with slack below `1e-6 * (1 + |ub|)`.
    pub active_set_size: usize,
}

impl MpcSolution {
    pub fn u0(&self) -> f64 {
        self.u[0]
    }
}

/// One axis problem: model, weights, terminal cost, bound structure.
///
/// Built over dynamically sized matrices so reduced systems (scalar or
/// planar toys) run through the same code paths as the 4-state axis.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pred: CondensedPrediction,
    q: DMatrix<f64>,
    r: f64,
    terminal: TerminalCost,
    /// Indices of states carrying the bound (filter pair for the axis
    /// model; possibly empty for toys).
    bounded_states: Vec<usize>,
    kkt_tol: f64,
    max_iter: usize,
    /// Constant part of the objective Hessian:
    /// `2 r I + sum_(i=1)^(N-1) 2 Gamma_i' Q Gamma_i`.
    hess_const: DMatrix<f64>,
}

impl MpcProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        n: usize,
        q: DMatrix<f64>,
        r: f64,
        terminal: TerminalCost,
        bounded_states: Vec<usize>,
        kkt_tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let n_x = a.nrows();
        if q.nrows() != n_x || q.ncols() != n_x {
            return Err(Error::InvalidParameter(
                "stage weight dimension mismatch".into(),
            ));
        }
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!("input weight r = {r} must be > 0")));
        }
        if let Some(&s) = bounded_states.iter().find(|s| **s >= n_x) {
            return Err(Error::InvalidParameter(format!(
                "bounded state index {s} out of range"
            )));
        }
        let pred = condense(&a, &b, n);

        let mut hess_const = DMatrix::<f64>::identity(n, n) * (2.0 * r);
        for i in 1..n {
            let gi = pred.gamma.view((i * n_x, 0), (n_x, n)).into_owned();
            hess_const += gi.transpose() * &q * gi * 2.0;
        }

        Ok(Self {
            pred,
            q,
            r,
            terminal,
            bounded_states,
            kkt_tol,
            max_iter,
            hess_const,
        })
    }

    /// Axis problem from model, config and certificates: bounds on the
    /// input and on the two filter states.
    pub fn for_axis(
        model: &DiscreteAxisModel,
        config: &MpcConfig,
        certs: &CertificateSet,
    ) -> Result<Self> {
        Self::new(
            model.a_dyn(),
            model.b_dyn(),
            config.n,
            DMatrix::from_fn(4, 4, |i, j| config.q[(i, j)]),
            config.r,
            certs.terminal(),
            vec![2, 3],
            config.kkt_tol,
            config.max_iter,
        )
    }

    pub fn horizon(&self) -> usize {
        self.pred.horizon
    }

    pub fn prediction(&self) -> &CondensedPrediction {
        &self.pred
    }

    /// Assembles the inequality rows for the given measured state and
    /// bound schedule (`N + 1` entries).
    ///
    /// Fails with an infeasible-start error when a bounded state already
    /// violates the first bound (beyond rounding slack), or when the
    /// schedule leaves no strictly feasible point at `U = 0`.
    pub fn build_constraints(&self, x: &DVector<f64>, schedule: &[f64]) -> Result<BoundRows> {
        let n = self.pred.horizon;
        let n_x = self.pred.n_x;
        if schedule.len() != n + 1 {
            return Err(Error::InvalidParameter(format!(
                "schedule has {} entries, horizon needs {}",
                schedule.len(),
                n + 1
            )));
        }
        for &s in &self.bounded_states {
            let tol = 1e-9 + 1e-12 * schedule[0];
            if x[s].abs() > schedule[0] + tol {
                return Err(Error::InfeasibleStart(format!(
                    "state component {s} = {:.9} exceeds first bound {:.9}",
                    x[s], schedule[0]
                )));
            }
        }

        let m = 2 * n + 2 * self.bounded_states.len() * n;
        let mut g = DMatrix::<f64>::zeros(m, n);
        let mut ub = DVector::<f64>::zeros(m);
        let mut row = 0;

        for i in 0..n {
            g[(row, i)] = 1.0;
            ub[row] = schedule[i];
            row += 1;
            g[(row, i)] = -1.0;
            ub[row] = schedule[i];
            row += 1;
        }
        let free = &self.pred.phi * x;
        for i in 1..=n {
            for &s in &self.bounded_states {
                let r_idx = i * n_x + s;
                for j in 0..n {
                    g[(row, j)] = self.pred.gamma[(r_idx, j)];
                    g[(row + 1, j)] = -self.pred.gamma[(r_idx, j)];
                }
                ub[row] = schedule[i] - free[r_idx];
                ub[row + 1] = schedule[i] + free[r_idx];
                row += 2;
            }
        }
        debug_assert_eq!(row, m);

        // Strict feasibility of U = 0; fails only for schedules that
        // shrink faster than the filter contracts.
        if let Some(i) = (0..m).find(|&i| ub[i] <= 0.0) {
            return Err(Error::InfeasibleStart(format!(
                "no strictly feasible start: slack {:.3e} at row {i}",
                ub[i]
            )));
        }
        Ok(BoundRows { g, ub })
    }

    /// Objective value, gradient and Hessian in `U`.
    pub fn objective(&self, x: &DVector<f64>, u: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.pred.horizon;
        let n_x = self.pred.n_x;
        let states = &self.pred.phi * x + &self.pred.gamma * u;

        let mut value = 0.0;
        let mut grad = u.scale(2.0 * self.r);
        value += self.r * u.dot(u);

        for i in 0..n {
            let xi = states.rows(i * n_x, n_x).into_owned();
            let qx = &self.q * &xi;
            value += xi.dot(&qx);
            if i >= 1 {
                let gi = self.pred.gamma.view((i * n_x, 0), (n_x, n));
                grad += gi.transpose() * qx * 2.0;
            }
        }

        let xn = states.rows(n * n_x, n_x).into_owned();
        let (tv, tg, th) = self.terminal.eval_grad_hess(&xn);
        value += tv;
        let gn = self.pred.gamma.view((n * n_x, 0), (n_x, n));
        grad += gn.transpose() * tg;
        let hess = &self.hess_const + gn.transpose() * th * gn;

        (value, grad, hess)
    }

    /// Solves the axis problem from state `x` under `schedule`, warm
    /// started with `warm` when provided.
    ///
    /// The returned iterate is always strictly feasible. Fully
    /// deterministic: identical inputs produce bit-identical solutions.
    pub fn solve(
        &self,
        x: &DVector<f64>,
        schedule: &[f64],
        warm: Option<&DVector<f64>>,
    ) -> Result<MpcSolution> {
        let rows = self.build_constraints(x, schedule)?;
        let n = self.pred.horizon;
        let m = rows.ub.len();
        let g = &rows.g;
        let ub = &rows.ub;

        // Interior start: blend the warm point toward U = 0 (always
        // strictly feasible) until every slack clears its margin.
        let mut u = DVector::<f64>::zeros(n);
        if let Some(w) = warm {
            if w.len() == n {
                let s_warm = ub - g * w;
                let mut theta = 1.0f64;
                for i in 0..m {
                    let margin = 1e-6 * (1.0 + ub[i]);
                    if s_warm[i] < margin {
                        // theta * s + (1 - theta) * ub = margin
                        let t = (ub[i] - margin) / (ub[i] - s_warm[i]);
                        theta = theta.min(t.max(0.0));
                    }
                }
                u = w.scale(theta);
            }
        }

        let mut s = ub - g * &u;
        let mut z = DVector::<f64>::from_fn(m, |i, _| (1.0 / s[i]).clamp(1e-8, 1e8));

        let mut best_kkt = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;

        for iter in 0..self.max_iter {
            iterations = iter + 1;
            let (value, grad, hess) = self.objective(x, &u);

            let r_dual = &grad + g.transpose() * &z;
            let gap: f64 = s.dot(&z);
            let stat_scale = grad.amax().max(1.0);
            let cost_scale = value.abs().max(1.0);
            let kkt = (r_dual.amax() / stat_scale).max(gap / (m as f64 * cost_scale));
            best_kkt = best_kkt.min(kkt);

            if kkt <= self.kkt_tol {
                converged = true;
                break;
            }

            let mu = gap / m as f64;
            let target = 0.1 * mu;

            // Eliminate dz: (H + G' diag(z/s) G) dU = -grad - target G' s^-1.
            let mut gw = g.transpose();
            for i in 0..m {
                let w = z[i] / s[i];
                gw.column_mut(i).scale_mut(w);
            }
            let mut kkt_mat = &hess + &gw * g;
            let rhs = -&grad - g.transpose() * DVector::from_fn(m, |i, _| target / s[i]);

            let mut chol = kkt_mat.clone().cholesky();
            let mut reg = 1e-12 * (1.0 + kkt_mat.diagonal().amax());
            while chol.is_none() && reg < 1e3 {
                for i in 0..n {
                    kkt_mat[(i, i)] += reg;
                }
                chol = kkt_mat.clone().cholesky();
                reg *= 100.0;
            }
            let chol = chol.ok_or_else(|| {
                Error::Numerical("interior-point normal equations not positive definite".into())
            })?;
            let du = chol.solve(&rhs);

            let ds = -(g * &du);
            let dz = DVector::from_fn(m, |i, _| (target - s[i] * z[i] - z[i] * ds[i]) / s[i]);

            // Fraction-to-boundary step.
            let mut alpha = 1.0f64;
            for i in 0..m {
                if ds[i] < 0.0 {
                    alpha = alpha.min(-0.99 * s[i] / ds[i]);
                }
                if dz[i] < 0.0 {
                    alpha = alpha.min(-0.99 * z[i] / dz[i]);
                }
            }
            alpha = alpha.min(1.0);

            // Damping on the KKT merit keeps the Newton step honest where
            // the cubic Hessian changes quickly.
            let merit0 = merit(&r_dual, &s, &z, target);
            let mut accepted = false;
            for _ in 0..10 {
                let u_try = &u + du.scale(alpha);
                let s_try = ub - g * &u_try;
                if s_try.min() > 0.0 {
                    let z_try = &z + dz.scale(alpha);
                    let (_, grad_try, _) = self.objective(x, &u_try);
                    let r_dual_try = &grad_try + g.transpose() * &z_try;
                    let m_try = merit(&r_dual_try, &s_try, &z_try, target);
                    if m_try <= (1.0 - 1e-3 * alpha) * merit0 + 1e-14 {
                        u = u_try;
                        s = s_try;
                        z = z_try;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Merit stalled: take the conservative step anyway; the
                // fraction-to-boundary rule keeps it interior.
                u += du.scale(alpha);
                s = ub - g * &u;
                z += dz.scale(alpha);
                for i in 0..m {
                    z[i] = z[i].max(1e-14);
                }
            }
        }

        let (value, grad, _) = self.objective(x, &u);
        let r_dual = &grad + g.transpose() * &z;
        let gap: f64 = s.dot(&z);
        let kkt = (r_dual.amax() / grad.amax().max(1.0))
            .max(gap / (m as f64 * value.abs().max(1.0)));

        let active = (0..m)
            .filter(|&i| s[i] < 1e-6 * (1.0 + ub[i].abs()))
            .count();

        Ok(MpcSolution {
            u,
            cost: value,
            status: if converged {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            },
            iterations,
            kkt_residual: kkt.min(best_kkt),
            active_set_size: active,
        })
    }
}

fn merit(r_dual: &DVector<f64>, s: &DVector<f64>, z: &DVector<f64>, target: f64) -> f64 {
    let mut comp = 0.0;
    for i in 0..s.len() {
        let c = s[i] * z[i] - target;
        comp += c * c;
    }
    (r_dual.norm_squared() + comp).sqrt()
}

/// Set-point interval that keeps both filter states inside the next
/// bound and the set-point inside the current one.
///
/// Converting the one-step-ahead filter bounds to input bounds:
///
/// ```text
///   a+   = alpha a + beta eta + (1 - alpha - beta) u  in [-next, next]
///   eta+ = alpha eta          + (1 - alpha) u         in [-next, next]
///   u                                                 in [-cur, cur]
/// ```
///
/// Returns `None` when the intersection is empty.
pub fn unified_input_bounds(
    a: f64,
    eta: f64,
    cur: f64,
    next: f64,
    alpha: f64,
    beta: f64,
) -> Result<Option<(f64, f64)>> {
    if !(alpha > 0.0 && beta > 0.0 && alpha + beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "filter weights alpha={alpha}, beta={beta} must be positive with alpha+beta < 1"
        )));
    }
    if !(cur > 0.0 && next > 0.0) {
        return Err(Error::InvalidParameter(
            "bounds must be positive".into(),
        ));
    }
    let w = 1.0 - alpha - beta;
    let drift = alpha * a + beta * eta;
    let tilde_hi = (next - drift) / w;
    let tilde_lo = (-next - drift) / w;
    let bar_hi = (next - alpha * eta) / (1.0 - alpha);
    let bar_lo = -(next + alpha * eta) / (1.0 - alpha);

    let lo = (-cur).max(tilde_lo).max(bar_lo);
    let hi = cur.min(tilde_hi).min(bar_hi);
    Ok(if lo <= hi { Some((lo, hi)) } else { None })
}

/// Receding-horizon wrapper for one axis: warm starts, shift, fallback.
#[derive(Debug, Clone)]
pub struct AxisController {
    problem: MpcProblem,
    k_gain: RowVector4<f64>,
    warm: Option<DVector<f64>>,
    fallback_count: usize,
}

/// What one control step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Set-point to hold over the next interval.
    pub u0: f64,
    /// Present unless the step fell back to the saturated gain.
    pub solution: Option<MpcSolution>,
    pub fell_back: bool,
}

impl AxisController {
    pub fn new(
        model: &DiscreteAxisModel,
        config: &MpcConfig,
        certs: &CertificateSet,
    ) -> Result<Self> {
        let problem = MpcProblem::for_axis(model, config, certs)?;
        Ok(Self {
            problem,
            k_gain: certs.k_gain,
            warm: None,
            fallback_count: 0,
        })
    }

    /// Solves one receding-horizon step. A solve that cannot start
    /// (measured filter state outside the first bound, or an empty
    /// constraint interior) falls back to the saturated stabilizing
    /// gain at the first bound instead of failing the control step.
    pub fn step(&mut self, x: &Vector4<f64>, schedule: &ConstraintSchedule) -> Result<StepOutcome> {
        let deltas = schedule.deltas();
        if deltas.len() != self.problem.horizon() + 1 {
            return Err(Error::InvalidParameter(format!(
                "schedule has {} entries, horizon needs {}",
                deltas.len(),
                self.problem.horizon() + 1
            )));
        }
        let xd = DVector::from_column_slice(x.as_slice());
        match self.problem.solve(&xd, deltas, self.warm.as_ref()) {
            Ok(sol) => {
                let n = sol.u.len();
                let mut shifted = DVector::<f64>::zeros(n);
                for i in 0..n - 1 {
                    shifted[i] = sol.u[i + 1];
                }
                shifted[n - 1] = sol.u[n - 1];
                self.warm = Some(shifted);
                Ok(StepOutcome {
                    u0: sol.u0(),
                    solution: Some(sol),
                    fell_back: false,
                })
            }
            Err(Error::InfeasibleStart(_)) | Err(Error::Numerical(_)) => {
                self.fallback_count += 1;
                self.warm = None;
                let level = deltas[0];
                let u0 = (self.k_gain * x)[0].clamp(-level, level);
                Ok(StepOutcome {
                    u0,
                    solution: None,
                    fell_back: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }
}
