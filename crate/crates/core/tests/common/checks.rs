//! Engine-against-oracle checks, shared by the unit-level tests and the
//! acceptance run. Each returns the measured quantity; callers apply the
//! thresholds.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharedctl_core::control::*;
use sharedctl_core::dynamics::*;
use sharedctl_core::filter::{mig_integral, mode_insertion_gradient};

use super::{fine_cost, rel_err, schedule_segments, Cost, Model};

fn planner() -> Planner {
    Planner::new(PendulumParams::default(), CostParams::default(), Horizon::default()).unwrap()
}

/// Largest relative error between the adjoint at `t0` and central differences
/// of a finely integrated cost, over `n` seeded states.
pub fn adjoint_worst_error(seed: u64, n: usize) -> f64 {
    let p = PendulumParams::default();
    let c = CostParams::default();
    let h = Horizon::default();
    let (model, cost) = (Model::default(), Cost::default());
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for x in super::random_states(seed, n) {
        let x0 = State::from_array(x);
        let u = planner().nominal_action(&x0).u;
        let xs = rollout(&x0, &u, &h, &p);
        let rho = solve_adjoint(&xs, &u, &c, &h, &p);
        let seg = schedule_segments(&u, h.t_s);
        let mut g = [0.0; 4];
        for i in 0..4 {
            let (mut a, mut b) = (x, x);
            a[i] += eps;
            b[i] -= eps;
            g[i] = (fine_cost(&model, &cost, a, &seg, h.t_s / 200.0)
                - fine_cost(&model, &cost, b, &seg, h.t_s / 200.0))
                / (2.0 * eps);
        }
        worst = worst.max(rel_err(&rho[0].to_array(), &g));
    }
    worst
}

/// Ticks until the controller alone first reaches the success region from
/// hanging, and the longest run of consecutive LQR ticks inside it afterwards.
pub fn controller_alone(seconds: f64) -> (Option<usize>, usize) {
    let p = PendulumParams::default();
    let mut pl = planner();
    let mut x = State::HANGING;
    let inside = |x: &State| wrap_angle(x.theta).abs() <= 0.15 && x.theta_dot.abs() <= 0.6;
    let (mut first, mut run, mut best) = (None, 0, 0);
    for k in 0..(seconds * 60.0) as usize {
        let plan = pl.nominal_action(&x);
        if inside(&x) {
            first.get_or_insert(k);
            if plan.mode == ControllerMode::Lqr {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        } else {
            run = 0;
        }
        x = step_substeps(&x, plan.current(), 1.0 / 60.0, 10, &p);
    }
    (first, best)
}

/// Error ratio between steps `dt` and `dt/2`, each against a `dt/64` run.
pub fn richardson_ratio() -> f64 {
    let p = PendulumParams::default();
    let x0 = State::new(PI - 0.5, 0.3, 0.0, 0.0);
    let u = 2.0;
    let run = |dt: f64, n: usize| {
        let mut x = x0;
        for _ in 0..n {
            x = rk4_step(&x, u, dt, &p);
        }
        x
    };
    let (dt, n) = (0.05, 40);
    let reference = run(dt / 64.0, n * 64);
    let coarse = (run(dt, n) - reference).norm_squared().sqrt();
    let fine = (run(dt / 2.0, n * 2) - reference).norm_squared().sqrt();
    coarse / fine
}

/// Largest relative energy drift of the undamped, unforced pendulum over
/// `seconds`, stepped at 600 Hz from 0.3 rad off hanging.
pub fn energy_drift(seconds: f64) -> f64 {
    let p = PendulumParams { b: 0.0, ..PendulumParams::default() };
    let m = Model { b: 0.0, ..Model::default() };
    let mut x = State::new(PI - 0.3, 0.0, 0.0, 0.0);
    let e0 = m.energy(x.to_array());
    let dt = 1.0 / 600.0;
    let mut worst: f64 = 0.0;
    for _ in 0..(seconds / dt).round() as usize {
        x = step(&x, 0.0, dt, &p);
        worst = worst.max(((m.energy(x.to_array()) - e0) / e0).abs());
    }
    worst
}

/// LQR solution checked from scratch.
#[derive(Debug)]
pub struct LqrCheck {
    /// Continuous Riccati residual recomputed from A, B, Q and R.
    pub residual: f64,
    /// Largest real part among closed-loop eigenvalues.
    pub max_real_eig: f64,
    pub symmetric_positive_definite: bool,
}

pub fn lqr_check() -> LqrCheck {
    let p = PendulumParams::default();
    let c = CostParams::default();
    let sol = lqr_gain(&p, &c).unwrap();
    let (a, b) = linearize(&State::UPRIGHT, 0.0, &p).unwrap();
    let a = Matrix4::from_fn(|i, j| a[i][j]);
    let k = sol.gain;
    let acl = Matrix4::from_fn(|i, j| a[(i, j)] - b[i] * k[j]);
    let max_real_eig = acl.complex_eigenvalues().iter().map(|ev| ev.re).fold(f64::NEG_INFINITY, f64::max);
    let q = Matrix4::from_diagonal(&Vector4::from_column_slice(&c.q));
    let bv = Vector4::from_column_slice(&b);
    let x = sol.riccati;
    let res = a.transpose() * x + x * a - x * bv * bv.transpose() * x / c.r + q;
    let spd = (x - x.transpose()).abs().max() <= 1e-9 && x.symmetric_eigenvalues().iter().all(|&v| v > 0.0);
    LqrCheck { residual: res.abs().max(), max_real_eig, symmetric_positive_definite: spd }
}

pub struct InsertionCase {
    pub mig: f64,
    /// Difference quotient at `lambda` and at `lambda / 2`.
    pub q: f64,
    pub q_half: f64,
}

pub fn insertion_case(x: [f64; 4], u2: f64, plan: &NominalPlan, lambda: f64) -> InsertionCase {
    let p = PendulumParams::default();
    let h = Horizon::default();
    let (model, cost) = (Model::default(), Cost::default());
    let u1 = plan.u[0];
    let tail: Vec<(f64, f64)> = plan.u[1..].iter().map(|&u| (h.t_s, u)).collect();
    let quotient = |lam: f64| {
        let with = |first: f64| {
            let mut seg = vec![(lam, first), (h.t_s - lam, u1)];
            seg.extend_from_slice(&tail);
            fine_cost(&model, &cost, x, &seg, lambda / 8.0)
        };
        (with(u2) - with(u1)) / lam
    };
    InsertionCase {
        mig: mode_insertion_gradient(plan, 0, u2, h.plan_substeps, &p),
        q: quotient(lambda),
        q_half: quotient(0.5 * lambda),
    }
}

/// Seeded (state, input) pairs with the input at least 2 away from the nominal one.
pub fn insertion_pairs(seed: u64) -> impl Iterator<Item = ([f64; 4], f64, NominalPlan)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || {
        let x = super::random_states(rng.gen(), 1)[0];
        let plan = planner().nominal_action(&State::from_array(x));
        let mut u2 = rng.gen_range(-10.0..10.0);
        while (u2 - plan.u[0]).abs() < 2.0 {
            u2 = rng.gen_range(-10.0..10.0);
        }
        (x, u2, plan)
    })
}

/// Outcome of the insertion-derivative check over `n` seeded pairs.
#[derive(Debug)]
pub struct InsertionReport {
    /// Worst relative error of the plain quotient `(J_lambda - J_0) / lambda`.
    pub forward: f64,
    /// Worst relative error of `2 Q(lambda/2) - Q(lambda)`.
    pub extrapolated: f64,
    /// Pairs whose plain quotient misses by more than 1%.
    pub forward_misses: usize,
    /// Smallest and largest `err(lambda) / err(lambda/2)` among those misses
    /// (about 2 for pure first-order truncation).
    pub miss_ratio: (f64, f64),
}

/// Compare the pointwise insertion gradient at `t0` with re-simulated cost
/// differences for a `lambda = 1e-4` s insertion. The plain forward quotient
/// carries an `O(lambda)` bias of relative size `lambda |J''| / (2 |J'|)`,
/// so the extrapolated quotient is the sharper oracle.
pub fn insertion_report(seed: u64, n: usize) -> InsertionReport {
    let mut r =
        InsertionReport { forward: 0.0, extrapolated: 0.0, forward_misses: 0, miss_ratio: (f64::INFINITY, 0.0) };
    for (x, u2, plan) in insertion_pairs(seed).take(n) {
        let c = insertion_case(x, u2, &plan, 1e-4);
        let e = (c.q - c.mig).abs() / c.mig.abs();
        let e_half = (c.q_half - c.mig).abs() / c.mig.abs();
        r.forward = r.forward.max(e);
        r.extrapolated = r.extrapolated.max(((2.0 * c.q_half - c.q) - c.mig).abs() / c.mig.abs());
        if e > 1e-2 {
            r.forward_misses += 1;
            r.miss_ratio = (r.miss_ratio.0.min(e / e_half), r.miss_ratio.1.max(e / e_half));
        }
    }
    r
}

impl InsertionReport {
    pub fn passes(&self) -> bool {
        self.extrapolated <= 1e-2
            && (self.forward_misses == 0 || (self.miss_ratio.0 >= 1.8 && self.miss_ratio.1 <= 2.2))
    }
}

/// Largest `|mig_integral(u1(t0))|` over a closed-loop run from hanging.
pub fn self_consistency_worst(ticks: usize) -> f64 {
    let p = PendulumParams::default();
    let mut pl = planner();
    let mut x = State::HANGING;
    let mut worst: f64 = 0.0;
    for _ in 0..ticks {
        let plan = pl.nominal_action(&x);
        worst = worst.max(mig_integral(plan.current(), &plan, &pl).abs());
        x = step_substeps(&x, plan.current(), 1.0 / 60.0, 10, &p);
    }
    worst
}

/// Ergodic distance of a constant log at (pi, 0), K = 10, omega_max = 2 pi,
/// frozen from the quadrature oracle.
pub const ERGODIC_FIXTURE: f64 = 0.0405385147273834;
