//! Receding-horizon nominal controller.
//!
//! Far from upright the controller synthesizes a single saturated action per
//! sampling period in the style of sequential action control: it rolls out the
//! default schedule, sweeps the adjoint backward, forms the
//! closed-form action that drives the mode insertion gradient toward a
//! desired negative sensitivity, and inserts it where that gradient is most
//! negative. Near upright it hands off to the LQR.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::adjoint::{rollout, solve_adjoint, Horizon};
use super::cost::CostParams;
use super::lqr::{lqr_gain, LqrSolution};
use crate::dynamics::{input_map, wrap_angle, PendulumParams, State};
use crate::error::Result;

/// Which law produced the nominal action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerMode {
    Mpc,
    Lqr,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::Mpc => "MPC",
            ControllerMode::Lqr => "LQR",
        }
    }
}

/// Switching region for the LQR handoff. The exit band is `exit_factor` times
/// the entry thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandoffParams {
    pub theta_switch: f64,
    pub omega_switch: f64,
    pub exit_factor: f64,
}

impl Default for HandoffParams {
    fn default() -> Self {
        HandoffParams { theta_switch: 0.25, omega_switch: 1.0, exit_factor: 1.5 }
    }
}

/// Mode after observing `x` while in `current`.
pub fn handoff_mode(x: &State, current: ControllerMode, hp: &HandoffParams) -> ControllerMode {
    let th = wrap_angle(x.theta).abs();
    let om = x.theta_dot.abs();
    let scale = match current {
        ControllerMode::Mpc => 1.0,
        ControllerMode::Lqr => hp.exit_factor,
    };
    if th <= hp.theta_switch * scale && om <= hp.omega_switch * scale {
        ControllerMode::Lqr
    } else {
        ControllerMode::Mpc
    }
}

/// Tuning of the action synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacParams {
    /// Desired sensitivity is `-alpha_scale * J` for current cost `J`.
    pub alpha_scale: f64,
    /// Carry the previous schedule forward as the default (otherwise zero).
    pub shift_previous: bool,
}

impl Default for SacParams {
    fn default() -> Self {
        SacParams { alpha_scale: 0.4, shift_previous: false }
    }
}

/// Output of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalPlan {
    /// Input per sampling period over the window; `u[0]` is applied now.
    pub u: Vec<f64>,
    /// Predicted states on the planning grid (`n_steps * plan_substeps + 1` nodes).
    pub x: Vec<State>,
    /// Adjoint on the same grid.
    pub rho: Vec<State>,
    /// Predicted cost of `u`.
    pub cost: f64,
    pub mode: ControllerMode,
    /// Set when synthesis failed and the zero schedule was substituted.
    pub failed: bool,
}

impl NominalPlan {
    /// Current nominal action `u1(t0)`.
    pub fn current(&self) -> f64 {
        self.u.first().copied().unwrap_or(0.0)
    }
}

/// Stateful nominal controller. One instance per session.
#[derive(Debug, Clone)]
pub struct Planner {
    pub params: PendulumParams,
    pub cost: CostParams,
    pub horizon: Horizon,
    pub sac: SacParams,
    pub handoff: HandoffParams,
    lqr: LqrSolution,
    mode: ControllerMode,
    prev: Option<Vec<f64>>,
}

impl Planner {
    pub fn new(params: PendulumParams, cost: CostParams, horizon: Horizon) -> Result<Self> {
        params.validate()?;
        cost.validate()?;
        horizon.validate()?;
        let lqr = lqr_gain(&params, &cost)?;
        Ok(Planner {
            params,
            cost,
            horizon,
            sac: SacParams::default(),
            handoff: HandoffParams::default(),
            lqr,
            mode: ControllerMode::Mpc,
            prev: None,
        })
    }

    pub fn lqr(&self) -> &LqrSolution {
        &self.lqr
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    /// Forget the previous schedule and the handoff state.
    pub fn reset(&mut self) {
        self.mode = ControllerMode::Mpc;
        self.prev = None;
    }

    /// Update the handoff state machine for `x` and return the active mode.
    pub fn handoff_controller(&mut self, x: &State) -> ControllerMode {
        self.mode = handoff_mode(x, self.mode, &self.handoff);
        self.mode
    }

    /// LQR feedback `sat(-K e(x))`.
    pub fn lqr_action(&self, x: &State) -> f64 {
        let e = self.cost.error(x).to_array();
        let k = self.lqr.gain;
        let u = -(k[0] * e[0] + k[1] * e[1] + k[2] * e[2] + k[3] * e[3]);
        self.params.saturate(u)
    }

    /// Compute the nominal plan from `x0` and advance the receding horizon.
    pub fn nominal_action(&mut self, x0: &State) -> NominalPlan {
        let mode = self.handoff_controller(x0);
        let plan = if !x0.is_finite() {
            None
        } else {
            match mode {
                ControllerMode::Lqr => self.plan_lqr(x0),
                ControllerMode::Mpc => self.plan_sac(x0),
            }
        };
        let plan = match plan {
            Some(p) => p,
            None => self.fallback(x0, mode),
        };
        self.prev = Some(plan.u.clone());
        plan
    }

    /// Plan for a given schedule: rollout, cost and adjoint.
    pub fn evaluate(&self, x0: &State, u: Vec<f64>, mode: ControllerMode) -> NominalPlan {
        let h = &self.horizon;
        let x = rollout(x0, &u, h, &self.params);
        let rho = solve_adjoint(&x, &u, &self.cost, h, &self.params);
        let cost = self.cost.trajectory_cost(&x, h.grid_dt());
        NominalPlan { u, x, rho, cost, mode, failed: false }
    }

    fn fallback(&self, x0: &State, mode: ControllerMode) -> NominalPlan {
        let n = self.horizon.n_steps();
        let u = alloc::vec![0.0; n];
        let mut plan = if x0.is_finite() {
            self.evaluate(x0, u, mode)
        } else {
            NominalPlan {
                u,
                x: alloc::vec![*x0; n * self.horizon.plan_substeps + 1],
                rho: alloc::vec![State::default(); n * self.horizon.plan_substeps + 1],
                cost: f64::NAN,
                mode,
                failed: true,
            }
        };
        plan.failed = true;
        plan
    }

    fn finite(plan: &NominalPlan) -> bool {
        plan.cost.is_finite() && plan.u.iter().all(|u| u.is_finite()) && plan.rho.iter().all(|r| r.is_finite())
    }

    fn plan_lqr(&self, x0: &State) -> Option<NominalPlan> {
        let h = &self.horizon;
        let dt = h.grid_dt();
        let mut u = Vec::with_capacity(h.n_steps());
        let mut x = *x0;
        for _ in 0..h.n_steps() {
            let uk = self.lqr_action(&x);
            u.push(uk);
            for _ in 0..h.plan_substeps {
                x = crate::dynamics::rk4_step(&x, uk, dt, &self.params);
            }
        }
        let plan = self.evaluate(x0, u, ControllerMode::Lqr);
        Self::finite(&plan).then_some(plan)
    }

    fn default_schedule(&self) -> Vec<f64> {
        let n = self.horizon.n_steps();
        let mut u = alloc::vec![0.0; n];
        if !self.sac.shift_previous {
            return u;
        }
        if let Some(prev) = &self.prev {
            for (k, slot) in u.iter_mut().enumerate() {
                if let Some(v) = prev.get(k + 1) {
                    *slot = *v;
                }
            }
        }
        u
    }

    fn plan_sac(&self, x0: &State) -> Option<NominalPlan> {
        let h = &self.horizon;
        let p = &self.params;
        let default = self.default_schedule();
        let nominal = self.evaluate(x0, default, ControllerMode::Mpc);
        if !Self::finite(&nominal) {
            return None;
        }
        let alpha_d = -self.sac.alpha_scale * nominal.cost;
        let r = self.cost.r;

        let mut best: Option<(usize, f64, f64)> = None;
        for (k, &u_def) in nominal.u.iter().enumerate() {
            let node = k * h.plan_substeps;
            let x = nominal.x[node];
            let hrho = input_map(&x).dot(nominal.rho[node]);
            let lambda = hrho * hrho;
            let u_star = p.saturate((lambda * u_def + alpha_d * hrho) / (lambda + r));
            let mig = hrho * (u_star - u_def);
            if mig < best.map_or(0.0, |b| b.1) {
                best = Some((k, mig, u_star));
            }
        }

        let mut u = nominal.u.clone();
        match best {
            Some((k, _, u_star)) => u[k] = u_star,
            None => return Some(nominal),
        }
        let plan = self.evaluate(x0, u, ControllerMode::Mpc);
        Self::finite(&plan).then_some(plan)
    }
}
