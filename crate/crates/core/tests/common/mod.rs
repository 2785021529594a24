//! Independent reference computations used as test oracles. Nothing in this
//! file calls the engine's integrators, cost quadrature or basis code; the
//! comparisons against the engine live in [`checks`].

#![allow(dead_code)]

pub mod checks;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain-array pendulum model, written out from the equations of motion.
#[derive(Clone, Copy)]
pub struct Model {
    pub g: f64,
    pub l: f64,
    pub m: f64,
    pub b: f64,
}

impl Default for Model {
    fn default() -> Self {
        Model { g: 9.81, l: 1.0, m: 1.0, b: 0.01 }
    }
}

impl Model {
    pub fn f(&self, x: [f64; 4], u: f64) -> [f64; 4] {
        let acc = self.g / self.l * x[0].sin() + u * x[0].cos() - self.b / (self.m * self.l * self.l) * x[1];
        [x[1], acc, x[3], u]
    }

    pub fn rk4(&self, x: [f64; 4], u: f64, h: f64) -> [f64; 4] {
        let add =
            |a: [f64; 4], b: [f64; 4], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
        let k1 = self.f(x, u);
        let k2 = self.f(add(x, k1, 0.5 * h), u);
        let k3 = self.f(add(x, k2, 0.5 * h), u);
        let k4 = self.f(add(x, k3, h), u);
        let mut out = x;
        for i in 0..4 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// Undamped mechanical energy per unit `m l^2`, with theta measured from upright.
    pub fn energy(&self, x: [f64; 4]) -> f64 {
        0.5 * x[1] * x[1] + self.g / self.l * x[0].cos()
    }
}

/// Quadratic cost with the angle error wrapped into `(-pi, pi]`.
#[derive(Clone, Copy)]
pub struct Cost {
    pub q: [f64; 4],
    pub p1: [f64; 4],
}

impl Default for Cost {
    fn default() -> Self {
        Cost { q: [100.0, 1.0, 5.0, 1.0], p1: [0.0; 4] }
    }
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl Cost {
    fn quad(w: &[f64; 4], x: [f64; 4]) -> f64 {
        let e = [wrap(x[0]), x[1], x[2], x[3]];
        0.5 * (0..4).map(|i| w[i] * e[i] * e[i]).sum::<f64>()
    }

    pub fn running(&self, x: [f64; 4]) -> f64 {
        Self::quad(&self.q, x)
    }

    pub fn terminal(&self, x: [f64; 4]) -> f64 {
        Self::quad(&self.p1, x)
    }
}

/// Total cost of holding each `(duration, u)` segment in turn, integrated with
/// RK4 and the trapezoid rule at a step no longer than `h_max`.
pub fn fine_cost(model: &Model, cost: &Cost, x0: [f64; 4], segments: &[(f64, f64)], h_max: f64) -> f64 {
    let mut x = x0;
    let mut acc = 0.0;
    for &(dur, u) in segments {
        if dur <= 0.0 {
            continue;
        }
        let n = (dur / h_max).ceil() as usize;
        let h = dur / n as f64;
        let mut l0 = cost.running(x);
        for _ in 0..n {
            x = model.rk4(x, u, h);
            let l1 = cost.running(x);
            acc += 0.5 * h * (l0 + l1);
            l0 = l1;
        }
    }
    acc + cost.terminal(x)
}

/// Schedule of per-period inputs as segments.
pub fn schedule_segments(u: &[f64], t_s: f64) -> Vec<(f64, f64)> {
    u.iter().map(|&v| (t_s, v)).collect()
}

/// Relative error `|a - b| / |b|` of two vectors in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Seeded random states spread over the swing-up workspace.
pub fn random_states(seed: u64, n: usize) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen_range(-PI..PI), rng.gen_range(-4.0..4.0), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)])
        .collect()
}

/// Ergodic distance of a constant log at `(theta, omega)` to a point mass at
/// the origin. The basis normalization is obtained by composite Simpson
/// quadrature of `cos^2` over each axis rather than in closed form.
pub fn ergodic_point_oracle(theta: f64, omega: f64, omega_max: f64, k_max: usize) -> f64 {
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let axis = |k: usize, lo: f64, hi: f64| {
        let len = hi - lo;
        let raw = move |s: f64| (k as f64 * PI * (s - lo) / len).cos();
        let norm = simpson(&|s| raw(s) * raw(s), lo, hi).sqrt();
        move |s: f64| raw(s) / norm
    };
    let mut total = 0.0;
    for k1 in 0..=k_max {
        let ft = axis(k1, -PI, PI);
        for k2 in 0..=k_max {
            let fw = axis(k2, -omega_max, omega_max);
            let c = ft(theta) * fw(omega);
            let phi = ft(0.0) * fw(0.0);
            let weight = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64).powf(1.5);
            total += weight * (c - phi) * (c - phi);
        }
    }
    total
}
