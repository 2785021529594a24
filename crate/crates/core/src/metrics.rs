//! Trial performance measures.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::dynamics::{wrap_angle, State};
use crate::error::{Error, Result};

/// Balance/success region about upright. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessRegion {
    pub theta_tol: f64,
    pub omega_tol: f64,
}

impl Default for SuccessRegion {
    fn default() -> Self {
        SuccessRegion { theta_tol: 0.15, omega_tol: 0.6 }
    }
}

impl SuccessRegion {
    pub fn validate(&self) -> Result<()> {
        if self.theta_tol > 0.0 && self.omega_tol > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParam(alloc::format!("success region {:?}", self)))
        }
    }
}

pub fn is_success(x: &State, r: &SuccessRegion) -> bool {
    wrap_angle(x.theta).abs() <= r.theta_tol && x.theta_dot.abs() <= r.omega_tol
}

/// `(success, balance_time, time_to_success)` for states sampled every `dt`.
/// An unsuccessful trial reports the full duration as its time to success.
pub fn balance_and_success_times(states: &[State], dt: f64, r: &SuccessRegion) -> Result<(bool, f64, f64)> {
    if states.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut count = 0usize;
    let mut first = None;
    for (i, x) in states.iter().enumerate() {
        if is_success(x, r) {
            count += 1;
            first.get_or_insert(i);
        }
    }
    // divide by the rate so whole-second spans come out exact at dt = 1/60
    let rate = 1.0 / dt;
    let tts = match first {
        Some(i) => i as f64 / rate,
        None => states.len() as f64 / rate,
    };
    Ok((first.is_some(), count as f64 / rate, tts))
}

/// RMS state error normalized by the error of resting at the bottom.
pub fn rms_error(states: &[State]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyLog);
    }
    // normalize per sample so a constant log gives an exact ratio
    let down = State::HANGING.norm_squared();
    let sum: f64 = states.iter().map(|x| x.wrapped().norm_squared() / down).sum();
    Ok((sum / states.len() as f64).sqrt())
}

/// Domain and resolution of the ergodic measure over `(theta, theta_dot)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicConfig {
    pub omega_max: f64,
    /// Highest cosine index per dimension.
    pub k_max: usize,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        ErgodicConfig { omega_max: 2.0 * core::f64::consts::PI, k_max: 10 }
    }
}

impl ErgodicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega_max > 0.0 && self.k_max >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidParam(alloc::format!("ergodic config {:?}", self)))
        }
    }

    /// Sobolev-type weight for index `(k1, k2)`.
    pub fn weight(k1: usize, k2: usize) -> f64 {
        let k2sum = (k1 * k1 + k2 * k2) as f64;
        (1.0 + k2sum).powf(-1.5)
    }

    // one-dimensional normalized cosine values at coordinate `s` on [lo, lo + len]
    fn basis_1d(&self, s: f64, lo: f64, len: f64, out: &mut [f64]) {
        for (k, v) in out.iter_mut().enumerate() {
            let norm = if k == 0 { len } else { 0.5 * len };
            *v = (k as f64 * core::f64::consts::PI * (s - lo) / len).cos() / norm.sqrt();
        }
    }

    fn project(&self, x: &State) -> (f64, f64) {
        (wrap_angle(x.theta), x.theta_dot.clamp(-self.omega_max, self.omega_max))
    }
}

/// Weighted squared distance between the trajectory's cosine coefficients and
/// those of a point mass at upright.
pub fn ergodic_distance(states: &[State], e: &ErgodicConfig) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyLog);
    }
    let pi = core::f64::consts::PI;
    let n = e.k_max + 1;
    let (lo_t, len_t) = (-pi, 2.0 * pi);
    let (lo_w, len_w) = (-e.omega_max, 2.0 * e.omega_max);
    let mut ft = alloc::vec![0.0; n];
    let mut fw = alloc::vec![0.0; n];
    let mut c = alloc::vec![0.0; n * n];
    for x in states {
        let (th, om) = e.project(x);
        e.basis_1d(th, lo_t, len_t, &mut ft);
        e.basis_1d(om, lo_w, len_w, &mut fw);
        for i in 0..n {
            for j in 0..n {
                c[i * n + j] += ft[i] * fw[j];
            }
        }
    }
    let m = states.len() as f64;
    e.basis_1d(0.0, lo_t, len_t, &mut ft);
    e.basis_1d(0.0, lo_w, len_w, &mut fw);
    let mut eps = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = c[i * n + j] / m - ft[i] * fw[j];
            eps += ErgodicConfig::weight(i, j) * d * d;
        }
    }
    Ok(eps)
}

/// Fraction of actions (|u_user| above `deadband`) that were rejected; zero
/// when there were no actions.
pub fn pra<I>(decisions: I, deadband: f64) -> f64
where
    I: IntoIterator<Item = (f64, bool)>,
{
    let (mut actions, mut rejected) = (0usize, 0usize);
    for (u, accepted) in decisions {
        if u.abs() > deadband {
            actions += 1;
            if !accepted {
                rejected += 1;
            }
        }
    }
    if actions == 0 {
        0.0
    } else {
        rejected as f64 / actions as f64
    }
}

/// All measures for one trial. `pra` is absent for unassisted trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub success: bool,
    pub balance_time: f64,
    pub time_to_success: f64,
    pub rms_error: f64,
    pub ergodicity: f64,
    pub pra: Option<f64>,
}

/// Measures over a sampled trajectory. `decisions` is used only when given.
pub fn trial_metrics(
    states: &[State],
    dt: f64,
    region: &SuccessRegion,
    ergodic: &ErgodicConfig,
    decisions: Option<(&[(f64, bool)], f64)>,
) -> Result<TrialMetrics> {
    let (success, balance_time, time_to_success) = balance_and_success_times(states, dt, region)?;
    Ok(TrialMetrics {
        success,
        balance_time,
        time_to_success,
        rms_error: rms_error(states)?,
        ergodicity: ergodic_distance(states, ergodic)?,
        pra: decisions.map(|(d, eps)| pra(d.iter().copied(), eps)),
    })
}

/// Per-block means of a metric sequence, `block` consecutive entries each.
pub fn block_means(values: &[f64], block: usize) -> Vec<f64> {
    if block == 0 {
        return Vec::new();
    }
    values.chunks(block).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}
