use crate::dynamics::{wrap_angle, State};

/// Quadratic tracking cost with diagonal weights.
///
/// `l1(x) = 1/2 e' Q e` and `m(x) = 1/2 e' P1 e` where `e` is the state error
/// to `goal` with the angle component wrapped into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub q: [f64; 4],
    pub p1: [f64; 4],
    pub r: f64,
    pub goal: State,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { q: [100.0, 1.0, 5.0, 1.0], p1: [0.0; 4], r: 0.3, goal: State::UPRIGHT }
    }
}

impl CostParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.q.iter().chain(self.p1.iter()).all(|w| *w >= 0.0 && w.is_finite())
            && self.r > 0.0
            && self.goal.is_finite();
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidParam(alloc::format!("cost params {:?}", self)))
        }
    }

    #[inline]
    pub fn error(&self, x: &State) -> State {
        let mut e = *x - self.goal;
        e.theta = wrap_angle(e.theta);
        e
    }

    #[inline]
    pub fn running(&self, x: &State) -> f64 {
        weighted_half_square(&self.q, &self.error(x))
    }

    #[inline]
    pub fn running_grad(&self, x: &State) -> State {
        weighted(&self.q, &self.error(x))
    }

    /// Running-cost gradient with the angle error taken on a fixed branch,
    /// `theta - goal.theta - branch`, instead of wrapped. Used to get the
    /// one-sided gradient on either side of the wrap point.
    #[inline]
    pub fn running_grad_on_branch(&self, x: &State, branch: f64) -> State {
        let mut e = *x - self.goal;
        e.theta -= branch;
        weighted(&self.q, &e)
    }

    /// Multiple of `2 pi` removed by wrapping the angle error of `x`.
    #[inline]
    pub fn branch(&self, x: &State) -> f64 {
        let raw = x.theta - self.goal.theta;
        raw - wrap_angle(raw)
    }

    #[inline]
    pub fn terminal(&self, x: &State) -> f64 {
        weighted_half_square(&self.p1, &self.error(x))
    }

    #[inline]
    pub fn terminal_grad(&self, x: &State) -> State {
        weighted(&self.p1, &self.error(x))
    }

    /// Trajectory cost on a uniform grid: trapezoidal running cost plus terminal cost.
    pub fn trajectory_cost(&self, xs: &[State], dt: f64) -> f64 {
        let n = xs.len();
        if n == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for w in xs.windows(2) {
            sum += 0.5 * dt * (self.running(&w[0]) + self.running(&w[1]));
        }
        sum + self.terminal(&xs[n - 1])
    }
}

#[inline]
fn weighted(w: &[f64; 4], e: &State) -> State {
    State::new(w[0] * e.theta, w[1] * e.theta_dot, w[2] * e.x_c, w[3] * e.x_c_dot)
}

#[inline]
fn weighted_half_square(w: &[f64; 4], e: &State) -> f64 {
    0.5 * (w[0] * e.theta * e.theta
        + w[1] * e.theta_dot * e.theta_dot
        + w[2] * e.x_c * e.x_c
        + w[3] * e.x_c_dot * e.x_c_dot)
}
