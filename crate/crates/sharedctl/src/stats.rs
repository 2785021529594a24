//! Correlation and t-tests with two-sided p-values, and state histograms.

use statrs::distribution::{ContinuousCDF, StudentsT};

use sharedctl_core::dynamics::{wrap_angle, State};
use sharedctl_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    match StudentsT::new(0.0, 1.0, df) {
        // sf of |t| avoids cancellation in 1 - cdf for large |t|
        Ok(d) => (2.0 * d.sf(t.abs())).min(1.0),
        Err(_) => f64::NAN,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    if xs.len() != ys.len() {
        return Err(CoreError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(CoreError::TooFewSamples { need: 3, got: xs.len() });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(CoreError::DegenerateVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = xs.len() as f64 - 2.0;
    let t_stat = if r.abs() == 1.0 { r.signum() * f64::INFINITY } else { r * (df / (1.0 - r * r)).sqrt() };
    Ok(CorrelationResult { r, t_stat, df, p: t_two_sided_p(t_stat, df) })
}

/// Paired (one-sample on `a - b`) or Welch two-sample t-test.
pub fn t_test(a: &[f64], b: &[f64], paired: bool) -> Result<TTestResult> {
    if paired {
        if a.len() != b.len() {
            return Err(CoreError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() < 2 {
            return Err(CoreError::TooFewSamples { need: 2, got: a.len() });
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        let (m, v) = (mean(&d), variance(&d));
        let t = if v == 0.0 {
            if m == 0.0 {
                0.0
            } else {
                m.signum() * f64::INFINITY
            }
        } else {
            m / (v / n).sqrt()
        };
        let df = n - 1.0;
        let p = if t == 0.0 { 1.0 } else { t_two_sided_p(t, df) };
        return Ok(TTestResult { t, df, p });
    }
    for s in [a, b] {
        if s.len() < 2 {
            return Err(CoreError::TooFewSamples { need: 2, got: s.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(CoreError::DegenerateVariance);
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTestResult { t, df, p: t_two_sided_p(t, df) })
}

/// Occupancy grid over `(theta, theta_dot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub theta_bins: usize,
    pub omega_bins: usize,
    pub theta_range: (f64, f64),
    pub omega_range: (f64, f64),
    /// Row-major, `theta_bin * omega_bins + omega_bin`.
    pub density: Vec<f64>,
}

impl Histogram2d {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.omega_bins + j]
    }

    /// Cell-wise difference, for comparing two groups.
    pub fn subtract(&self, other: &Histogram2d) -> Result<Histogram2d> {
        if self.density.len() != other.density.len()
            || self.theta_bins != other.theta_bins
            || self.theta_range != other.theta_range
            || self.omega_range != other.omega_range
        {
            return Err(CoreError::LengthMismatch(self.density.len(), other.density.len()));
        }
        let density = self.density.iter().zip(&other.density).map(|(a, b)| a - b).collect();
        Ok(Histogram2d { density, ..self.clone() })
    }
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    let f = ((v - lo) / (hi - lo) * n as f64).floor();
    (f.max(0.0) as usize).min(n - 1)
}

/// Normalized histogram of wrapped angle and clipped angular velocity over all
/// samples of all logs. Mass sums to one; an empty input gives all zeros.
pub fn histogram2d<'a, I>(logs: I, bins: (usize, usize), omega_max: f64) -> Result<Histogram2d>
where
    I: IntoIterator<Item = &'a [State]>,
{
    let (nt, nw) = bins;
    if nt == 0 || nw == 0 {
        return Err(CoreError::InvalidParam("histogram bins must be at least 1".into()));
    }
    if omega_max.is_nan() || omega_max <= 0.0 {
        return Err(CoreError::InvalidParam("histogram omega range must be positive".into()));
    }
    let pi = std::f64::consts::PI;
    let mut counts = vec![0u64; nt * nw];
    let mut total = 0u64;
    for states in logs {
        for x in states {
            let i = bin(wrap_angle(x.theta), -pi, pi, nt);
            let j = bin(x.theta_dot.clamp(-omega_max, omega_max), -omega_max, omega_max, nw);
            counts[i * nw + j] += 1;
            total += 1;
        }
    }
    let density = counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
    Ok(Histogram2d {
        theta_bins: nt,
        omega_bins: nw,
        theta_range: (-pi, pi),
        omega_range: (-omega_max, omega_max),
        density,
    })
}
