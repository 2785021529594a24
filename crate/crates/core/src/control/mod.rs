//! Nominal controller: quadratic cost, adjoint, LQR and the receding-horizon planner.

pub mod adjoint;
pub mod cost;
pub mod lqr;
pub mod planner;

pub use adjoint::{rollout, solve_adjoint, Horizon};
pub use cost::CostParams;
pub use lqr::{lqr_gain, LqrSolution, RICCATI_TOL};
pub use planner::{handoff_mode, ControllerMode, HandoffParams, NominalPlan, Planner, SacParams};
