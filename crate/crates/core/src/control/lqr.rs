//! Continuous-time LQR about the upright equilibrium.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use super::cost::CostParams;
use crate::dynamics::{linearize, PendulumParams, State};
use crate::error::{Error, Result};

/// Residual bound for the algebraic Riccati equation.
pub const RICCATI_TOL: f64 = 1e-9;

/// Gain and Riccati solution of the upright LQR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrSolution {
    /// Row gain: `u = -K e`.
    pub gain: [f64; 4],
    /// Stabilizing solution of the ARE.
    pub riccati: Matrix4<f64>,
    /// Max-abs entry of the ARE residual at `riccati`.
    pub residual: f64,
}

/// Linearization about the upright equilibrium as nalgebra matrices.
pub fn upright_model(p: &PendulumParams) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    let (a, b) = linearize(&State::UPRIGHT, 0.0, p)?;
    let a = Matrix4::from_fn(|i, j| a[i][j]);
    Ok((a, Vector4::from_column_slice(&b)))
}

pub fn are_residual(a: &Matrix4<f64>, b: &Vector4<f64>, q: &Matrix4<f64>, r: f64, x: &Matrix4<f64>) -> Matrix4<f64> {
    let pb = x * b;
    a.transpose() * x + x * a - pb * pb.transpose() / r + q
}

fn max_abs(m: &Matrix4<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Solve `Acl' X + X Acl = -M` via the Kronecker form.
fn lyapunov(acl: &Matrix4<f64>, m: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    let at = acl.transpose();
    let mut big = DMatrix::<f64>::zeros(16, 16);
    // column-major vec: vec(At X) = (I (x) At) vec X, vec(X Acl) = (Acl' (x) I) vec X
    for blk in 0..4 {
        for i in 0..4 {
            for j in 0..4 {
                big[(blk * 4 + i, blk * 4 + j)] += at[(i, j)];
                big[(blk * 4 + i, j * 4 + i)] += at[(blk, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(16, m.iter().map(|v| -v));
    let sol = big.lu().solve(&rhs)?;
    let x = Matrix4::from_column_slice(sol.as_slice());
    Some(0.5 * (x + x.transpose()))
}

/// Compute the upright LQR gain.
///
/// The Riccati differential equation is integrated from `X = 0` until it
/// settles, then Newton-Kleinman iterations polish the fixed point until the
/// ARE residual is at most [`RICCATI_TOL`].
pub fn lqr_gain(p: &PendulumParams, c: &CostParams) -> Result<LqrSolution> {
    let (a, b) = upright_model(p)?;
    let q = Matrix4::from_diagonal(&Vector4::from_column_slice(&c.q));
    let r = c.r;

    let rde = |x: &Matrix4<f64>| are_residual(&a, &b, &q, r, x);
    let mut x = Matrix4::<f64>::zeros();
    let h = 1e-3;
    for _ in 0..200_000 {
        let k1 = rde(&x);
        let k2 = rde(&(x + k1 * (0.5 * h)));
        let k3 = rde(&(x + k2 * (0.5 * h)));
        let k4 = rde(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if max_abs(&rde(&x)) < 1e-6 {
            break;
        }
    }

    let mut residual = max_abs(&rde(&x));
    for _ in 0..50 {
        if residual <= 1e-13 * (1.0 + max_abs(&x)) {
            break;
        }
        let k = b.transpose() * x / r;
        let acl = a - b * k;
        let m = q + k.transpose() * k * r;
        let next = match lyapunov(&acl, &m) {
            Some(n) => n,
            None => break,
        };
        let next_res = max_abs(&rde(&next));
        if !next_res.is_finite() {
            break;
        }
        x = next;
        residual = next_res;
    }
    if residual.is_nan() || residual > RICCATI_TOL {
        return Err(Error::RiccatiNotConverged { residual });
    }
    let k = b.transpose() * x / r;
    Ok(LqrSolution { gain: [k[0], k[1], k[2], k[3]], riccati: x, residual })
}
