//! Per-tick acceptance of user input.
//!
//! Two criteria are supported. The MIG criterion integrates the mode insertion
//! gradient of the user's input against the nominal plan over the prediction
//! window and accepts descent directions. The OCIP criterion accepts inputs
//! inside a cone around the nominal action.

#[allow(unused_imports)]
use num_traits::Float;

use crate::control::{ControllerMode, NominalPlan, Planner};
use crate::dynamics::{dynamics, PendulumParams, State};

/// Acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriterionKind {
    Mig,
    Ocip,
}

/// What is applied when the criterion fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectionMode {
    RejectToZero,
    ReplaceWithNominal,
}

/// MIG integrals below this count as descent.
pub const MIG_ACCEPT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionConfig {
    pub kind: CriterionKind,
    /// Cone half-angle for OCIP, radians.
    pub gamma: f64,
    pub rejection_mode: RejectionMode,
    /// Inputs with magnitude at or below this are "no action".
    pub deadband: f64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        CriterionConfig {
            kind: CriterionKind::Mig,
            gamma: core::f64::consts::FRAC_PI_3,
            rejection_mode: RejectionMode::RejectToZero,
            deadband: 1e-3,
        }
    }
}

impl CriterionConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.gamma > 0.0 && self.gamma <= core::f64::consts::FRAC_PI_2 && self.deadband >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidParam(alloc::format!("criterion {:?}", self)))
        }
    }
}

/// Record of one filter tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterDecision {
    pub t: f64,
    pub u_user: f64,
    /// MIG integral, or the OCIP angle in radians.
    pub criterion_value: f64,
    pub accepted: bool,
    pub u_applied: f64,
    pub controller_mode: ControllerMode,
    /// Nominal action at this tick.
    pub u_nominal: f64,
    /// Set when the planner failed and the safe zero input was applied.
    pub failed: bool,
}

/// Pointwise mode insertion gradient `rho' [f(x, u2) - f(x, u1)]` at grid node `node`.
pub fn mode_insertion_gradient(plan: &NominalPlan, node: usize, u2: f64, substeps: usize, p: &PendulumParams) -> f64 {
    let x = plan.x[node];
    let tick = (node / substeps).min(plan.u.len().saturating_sub(1));
    let u1 = plan.u[tick];
    plan.rho[node].dot(dynamics(&x, u2, p) - dynamics(&x, u1, p))
}

/// Integral of the mode insertion gradient over the window, for the user input
/// applied during the first sampling period and the plan afterwards.
///
/// Evaluated along the nominal trajectory with the trapezoidal rule on each
/// planning-grid interval, using that interval's inputs at both ends.
pub fn mig_integral(u_user: f64, plan: &NominalPlan, planner: &Planner) -> f64 {
    let p = &planner.params;
    let h = &planner.horizon;
    let dt = h.grid_dt();
    let sub = h.plan_substeps;
    let mut total = 0.0;
    for i in 0..plan.x.len().saturating_sub(1) {
        let tick = i / sub;
        let u1 = plan.u[tick];
        let u2 = if tick == 0 { u_user } else { u1 };
        let g = |j: usize| {
            let x: State = plan.x[j];
            plan.rho[j].dot(dynamics(&x, u2, p) - dynamics(&x, u1, p))
        };
        total += 0.5 * dt * (g(i) + g(i + 1));
    }
    total
}

/// Cone test for vector inputs: accepted iff the inner product is strictly
/// positive and the angle is within `gamma`. A zero vector on either side has
/// a zero inner product, so it rejects (reported with `phi = pi/2`).
pub fn ocip_check(u_c: &[f64], u_user: &[f64], gamma: f64) -> (bool, f64) {
    let dot: f64 = u_c.iter().zip(u_user).map(|(a, b)| a * b).sum();
    let nc = u_c.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nu = u_user.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nc == 0.0 || nu == 0.0 {
        return (false, core::f64::consts::FRAC_PI_2);
    }
    let phi = (dot / (nc * nu)).clamp(-1.0, 1.0).acos();
    // the cosine of the cone angle is compared directly so boundary cases
    // (e.g. exactly 45 degrees) are not lost to acos rounding
    let inside = phi <= gamma || dot / (nc * nu) >= gamma.cos() - 4.0 * f64::EPSILON;
    (dot > 0.0 && inside, phi)
}

/// The hybrid filter: each tick the user input is either passed through or rejected against a nominal planner.
#[derive(Debug, Clone)]
pub struct HybridFilter {
    pub config: CriterionConfig,
    pub planner: Planner,
}

impl HybridFilter {
    pub fn new(config: CriterionConfig, planner: Planner) -> Self {
        HybridFilter { config, planner }
    }

    /// Run one tick: plan from `x0`, test `u_user`, and choose the applied input.
    pub fn filter_step(&mut self, t: f64, x0: &State, u_user: f64) -> (FilterDecision, NominalPlan) {
        let plan = self.planner.nominal_action(x0);
        let decision = self.decide(t, u_user, &plan);
        (decision, plan)
    }

    /// Apply the criterion for a plan computed at this tick.
    pub fn decide(&self, t: f64, u_user: f64, plan: &NominalPlan) -> FilterDecision {
        let p = &self.planner.params;
        let u_nominal = plan.current();
        let mut d = FilterDecision {
            t,
            u_user,
            criterion_value: 0.0,
            accepted: false,
            u_applied: 0.0,
            controller_mode: plan.mode,
            u_nominal,
            failed: plan.failed,
        };
        if plan.failed || !u_user.is_finite() {
            d.failed = true;
            return d;
        }
        let (met, value) = match self.config.kind {
            CriterionKind::Mig => {
                let v = mig_integral(u_user, plan, &self.planner);
                (v < MIG_ACCEPT_TOL, v)
            }
            CriterionKind::Ocip => ocip_check(&[u_nominal], &[u_user], self.config.gamma),
        };
        d.criterion_value = value;
        if u_user.abs() <= self.config.deadband {
            // no action: passes through as zero and is not scored
            d.accepted = true;
            return d;
        }
        d.accepted = met;
        d.u_applied = if met {
            if u_user.abs() < p.u_sat {
                u_user
            } else {
                u_user.signum() * p.u_sat
            }
        } else {
            match self.config.rejection_mode {
                RejectionMode::RejectToZero => 0.0,
                RejectionMode::ReplaceWithNominal => u_nominal,
            }
        };
        d
    }
}
