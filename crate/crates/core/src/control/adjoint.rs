//! Forward rollouts on the planning grid and the backward adjoint sweep.

use alloc::vec::Vec;
use core::f64::consts::PI;

use super::cost::CostParams;
use crate::dynamics::{dynamics, rk4_step, state_jacobian, PendulumParams, State};

/// Prediction window and filter sampling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    /// Window length `T`, s.
    pub window: f64,
    /// Filter sampling period `t_s`, s.
    pub t_s: f64,
    /// Planning-grid steps per sampling period.
    pub plan_substeps: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon { window: 0.6, t_s: 1.0 / 60.0, plan_substeps: 2 }
    }
}

impl Horizon {
    pub fn validate(&self) -> crate::Result<()> {
        if self.window > self.t_s && self.t_s > 0.0 && self.plan_substeps >= 1 {
            Ok(())
        } else {
            Err(crate::Error::InvalidParam(alloc::format!("horizon {:?}", self)))
        }
    }

    /// Number of sampling periods in the window.
    pub fn n_steps(&self) -> usize {
        libm::round(self.window / self.t_s) as usize
    }

    pub fn grid_dt(&self) -> f64 {
        self.t_s / self.plan_substeps as f64
    }

    /// Number of grid intervals; trajectories carry one more node than this.
    pub fn grid_len(&self) -> usize {
        self.n_steps() * self.plan_substeps
    }
}

/// Simulate the smooth model (no cart limits) under a per-period input schedule.
pub fn rollout(x0: &State, schedule: &[f64], h: &Horizon, p: &PendulumParams) -> Vec<State> {
    let dt = h.grid_dt();
    let mut xs = Vec::with_capacity(schedule.len() * h.plan_substeps + 1);
    let mut x = *x0;
    xs.push(x);
    for &u in schedule {
        for _ in 0..h.plan_substeps {
            x = rk4_step(&x, u, dt, p);
            xs.push(x);
        }
    }
    xs
}

#[inline]
fn adjoint_rhs(rho: &State, x: &State, u: f64, branch: f64, c: &CostParams, p: &PendulumParams) -> State {
    let a = state_jacobian(x, u, p);
    let g = c.running_grad_on_branch(x, branch);
    State::new(
        -g.theta - a[1][0] * rho.theta_dot,
        -g.theta_dot - rho.theta - a[1][1] * rho.theta_dot,
        -g.x_c,
        -g.x_c_dot - rho.x_c,
    )
}

/// Cubic Hermite interpolant on one grid interval, at local time `s`.
#[inline]
fn hermite(x0: &State, f0: &State, x1: &State, f1: &State, dt: f64, s: f64) -> State {
    let t = s / dt;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * *x0
        + ((t3 - 2.0 * t2 + t) * dt) * *f0
        + (3.0 * t2 - 2.0 * t3) * *x1
        + ((t3 - t2) * dt) * *f1
}

// one backward RK4 step over [xa, xb] with the interpolated midpoint xm
#[allow(clippy::too_many_arguments)]
#[inline]
fn backward_step(
    r: State,
    xa: &State,
    xm: &State,
    xb: &State,
    len: f64,
    u: f64,
    branch: f64,
    c: &CostParams,
    p: &PendulumParams,
) -> State {
    let s = -len;
    let k1 = adjoint_rhs(&r, xb, u, branch, c, p);
    let k2 = adjoint_rhs(&(r + (0.5 * s) * k1), xm, u, branch, c, p);
    let k3 = adjoint_rhs(&(r + (0.5 * s) * k2), xm, u, branch, c, p);
    let k4 = adjoint_rhs(&(r + s * k3), xa, u, branch, c, p);
    r + (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Adjoint `rho` on the rollout grid: backward RK4 of
/// `rho' = -dl/dx - A(x, u)' rho` from `rho(T) = dm/dx`.
///
/// States between grid nodes come from the cubic Hermite interpolant of the
/// rollout. The wrapped angle error makes the running cost kinked where the
/// angle passes through the wrap point; intervals containing such a crossing
/// are split there so each piece sees a smooth forcing term.
pub fn solve_adjoint(xs: &[State], schedule: &[f64], c: &CostParams, h: &Horizon, p: &PendulumParams) -> Vec<State> {
    let n = xs.len();
    let mut rho = alloc::vec![State::default(); n];
    if n == 0 {
        return rho;
    }
    let dt = h.grid_dt();
    rho[n - 1] = c.terminal_grad(&xs[n - 1]);
    for i in (0..n - 1).rev() {
        let u = schedule[i / h.plan_substeps];
        let (x0, x1) = (xs[i], xs[i + 1]);
        let f0 = dynamics(&x0, u, p);
        let f1 = dynamics(&x1, u, p);
        let (b0, b1) = (c.branch(&x0), c.branch(&x1));
        let r = rho[i + 1];
        if b0 == b1 {
            let xm = hermite(&x0, &f0, &x1, &f1, dt, 0.5 * dt);
            rho[i] = backward_step(r, &x0, &xm, &x1, dt, u, b0, c, p);
            continue;
        }
        // angle error leaves branch b0 through +pi or -pi
        let target = c.goal.theta + b0 + if b1 > b0 { PI } else { -PI };
        let above0 = x0.theta > target;
        let (mut lo, mut hi) = (0.0, dt);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (hermite(&x0, &f0, &x1, &f1, dt, mid).theta > target) == above0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sc = 0.5 * (lo + hi);
        let xc = hermite(&x0, &f0, &x1, &f1, dt, sc);
        let xm1 = hermite(&x0, &f0, &x1, &f1, dt, 0.5 * (sc + dt));
        let rc = backward_step(r, &xc, &xm1, &x1, dt - sc, u, b1, c, p);
        let xm0 = hermite(&x0, &f0, &x1, &f1, dt, 0.5 * sc);
        rho[i] = backward_step(rc, &x0, &xm0, &xc, sc, u, b0, c, p);
    }
    rho
}
