//! Cart-pendulum dynamics with the cart acceleration as input.
//!
//! The state is `[theta, theta_dot, x_c, x_c_dot]` with `theta = 0` at the
//! upright (unstable) equilibrium. The model is control affine:
//!
//! ```text
//! theta_ddot = (g/l) sin(theta) + u cos(theta) - b/(m l^2) theta_dot
//! x_c_ddot   = u
//! ```

use core::f64::consts::PI;
use core::ops::{Add, Mul, Sub};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Cart-pendulum state. `theta` may be stored unwrapped; use [`State::wrapped`]
/// before comparing against the goal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub theta: f64,
    pub theta_dot: f64,
    pub x_c: f64,
    pub x_c_dot: f64,
}

/// Time derivative of a [`State`], same layout.
pub type StateDerivative = State;

impl State {
    pub const UPRIGHT: State = State::new(0.0, 0.0, 0.0, 0.0);
    pub const HANGING: State = State::new(PI, 0.0, 0.0, 0.0);

    pub const fn new(theta: f64, theta_dot: f64, x_c: f64, x_c_dot: f64) -> Self {
        State { theta, theta_dot, x_c, x_c_dot }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        State::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta, self.theta_dot, self.x_c, self.x_c_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Same state with `theta` mapped into `(-pi, pi]`.
    pub fn wrapped(self) -> Self {
        State { theta: wrap_angle(self.theta), ..self }
    }

    pub fn dot(self, other: State) -> f64 {
        self.theta * other.theta
            + self.theta_dot * other.theta_dot
            + self.x_c * other.x_c
            + self.x_c_dot * other.x_c_dot
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }
}

impl Add for State {
    type Output = State;
    fn add(self, o: State) -> State {
        State::new(self.theta + o.theta, self.theta_dot + o.theta_dot, self.x_c + o.x_c, self.x_c_dot + o.x_c_dot)
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, o: State) -> State {
        State::new(self.theta - o.theta, self.theta_dot - o.theta_dot, self.x_c - o.x_c, self.x_c_dot - o.x_c_dot)
    }
}

impl Mul<State> for f64 {
    type Output = State;
    fn mul(self, s: State) -> State {
        State::new(self * s.theta, self * s.theta_dot, self * s.x_c, self * s.x_c_dot)
    }
}

/// Map an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor() puts odd multiples of pi at -pi; the interval is open there.
    if w <= -PI {
        w += two_pi;
    }
    w
}

/// Physical parameters of the pendulum and the virtual cart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Gravity, m/s^2.
    pub g: f64,
    /// Pendulum length, m.
    pub l: f64,
    /// Tip mass, kg.
    pub m: f64,
    /// Damping, N m s.
    pub b: f64,
    /// Input saturation, m/s^2.
    pub u_sat: f64,
    /// Cart position limits `(min, max)`, m.
    pub cart_bounds: (f64, f64),
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams { g: 9.81, l: 1.0, m: 1.0, b: 0.01, u_sat: 10.0, cart_bounds: (-0.6, 0.6) }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g > 0.0
            && self.l > 0.0
            && self.m > 0.0
            && self.b >= 0.0
            && self.u_sat > 0.0
            && self.cart_bounds.0 < self.cart_bounds.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(alloc::format!("pendulum params {:?}", self)))
        }
    }

    fn damping_rate(&self) -> f64 {
        self.b / (self.m * self.l * self.l)
    }

    /// Clamp an input to `[-u_sat, u_sat]`.
    pub fn saturate(&self, u: f64) -> f64 {
        u.clamp(-self.u_sat, self.u_sat)
    }
}

/// Right-hand side without input checks; used in the planner's inner loops.
#[inline]
pub fn dynamics(x: &State, u: f64, p: &PendulumParams) -> StateDerivative {
    let (s, c) = x.theta.sin_cos();
    State::new(x.theta_dot, p.g / p.l * s + u * c - p.damping_rate() * x.theta_dot, x.x_c_dot, u)
}

/// Evaluate the dynamics, rejecting non-finite input.
pub fn eval_dynamics(x: &State, u: f64, p: &PendulumParams) -> Result<StateDerivative> {
    if !x.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("input"));
    }
    Ok(dynamics(x, u, p))
}

/// Input column `B(x) = df/du`.
#[inline]
pub fn input_map(x: &State) -> State {
    State::new(0.0, x.theta.cos(), 0.0, 1.0)
}

/// Analytic Jacobians `(A, B) = (df/dx, df/du)`. `A` is row-major.
pub fn linearize(x: &State, u: f64, p: &PendulumParams) -> Result<([[f64; 4]; 4], [f64; 4])> {
    if !x.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("input"));
    }
    Ok((state_jacobian(x, u, p), input_map(x).to_array()))
}

#[inline]
pub(crate) fn state_jacobian(x: &State, u: f64, p: &PendulumParams) -> [[f64; 4]; 4] {
    let (s, c) = x.theta.sin_cos();
    [
        [0.0, 1.0, 0.0, 0.0],
        [p.g / p.l * c - u * s, -p.damping_rate(), 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
    ]
}

/// One classical RK4 step of length `dt` with `u` held constant. No cart limits.
#[inline]
pub fn rk4_step(x: &State, u: f64, dt: f64, p: &PendulumParams) -> State {
    let k1 = dynamics(x, u, p);
    let k2 = dynamics(&(*x + (0.5 * dt) * k1), u, p);
    let k3 = dynamics(&(*x + (0.5 * dt) * k2), u, p);
    let k4 = dynamics(&(*x + dt * k3), u, p);
    *x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Advance the plant by `dt` under a zero-order-held input.
///
/// The cart is a hard stop at its limits: position is clamped, velocity
/// zeroed, and while it rests against a limit an outward command produces
/// no acceleration (the pendulum sees `u = 0`).
pub fn step(x: &State, u: f64, dt: f64, p: &PendulumParams) -> State {
    let (lo, hi) = p.cart_bounds;
    let pinned = (x.x_c <= lo && u < 0.0) || (x.x_c >= hi && u > 0.0);
    let u_eff = if pinned { 0.0 } else { u };
    let mut next = rk4_step(x, u_eff, dt, p);
    if next.x_c < lo {
        next.x_c = lo;
        next.x_c_dot = 0.0;
    } else if next.x_c > hi {
        next.x_c = hi;
        next.x_c_dot = 0.0;
    }
    next
}

/// Advance by `substeps` equal steps covering `dt` in total.
pub fn step_substeps(x: &State, u: f64, dt: f64, substeps: usize, p: &PendulumParams) -> State {
    let h = dt / substeps as f64;
    let mut s = *x;
    for _ in 0..substeps {
        s = step(&s, u, h, p);
    }
    s
}
