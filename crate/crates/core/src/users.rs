//! Seeded synthetic operators.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::State;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum UserKind {
    /// Zero-mean uniform noise in `[-sigma, sigma]`.
    Noise,
    /// `alpha * u_nominal + (1 - alpha) * noise`.
    SkilledBlend { alpha: f64 },
    /// Logged inputs, one per tick.
    Replay(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserModel {
    pub kind: UserKind,
    /// Noise half-width, m/s^2.
    pub sigma: f64,
    pub seed: u64,
    /// Magnitude cap applied before the filter.
    pub cap: f64,
}

impl UserModel {
    pub fn noise(sigma: f64, seed: u64) -> Self {
        UserModel { kind: UserKind::Noise, sigma, seed, cap: 10.0 }
    }

    pub fn blend(alpha: f64, sigma: f64, seed: u64) -> Self {
        UserModel { kind: UserKind::SkilledBlend { alpha }, sigma, seed, cap: 10.0 }
    }

    pub fn replay(inputs: Vec<f64>) -> Self {
        UserModel { kind: UserKind::Replay(inputs), sigma: 0.0, seed: 0, cap: f64::INFINITY }
    }

    pub fn validate(&self) -> Result<()> {
        let alpha_ok = match self.kind {
            UserKind::SkilledBlend { alpha } => (0.0..=1.0).contains(&alpha),
            _ => true,
        };
        if alpha_ok && self.sigma >= 0.0 && self.cap > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParam(alloc::format!("user model {:?}", self)))
        }
    }

    /// Fresh input generator seeded from the model.
    pub fn start(&self) -> SyntheticUser<'_> {
        SyntheticUser { model: self, rng: ChaCha8Rng::seed_from_u64(self.seed), cursor: 0 }
    }

    /// Same model with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        UserModel { seed, ..self.clone() }
    }
}

/// Running input generator for one trial.
#[derive(Debug, Clone)]
pub struct SyntheticUser<'a> {
    model: &'a UserModel,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl SyntheticUser<'_> {
    fn draw(&mut self) -> f64 {
        let s = self.model.sigma;
        if s > 0.0 {
            self.rng.gen_range(-s..=s)
        } else {
            0.0
        }
    }

    /// Next input given the observed state and the nominal action.
    pub fn user_input(&mut self, _x: &State, u_nominal: f64, _t: f64) -> Result<f64> {
        let cap = self.model.cap;
        let u = match &self.model.kind {
            UserKind::Noise => self.draw(),
            UserKind::SkilledBlend { alpha } => {
                let n = self.draw();
                alpha * u_nominal + (1.0 - alpha) * n
            }
            UserKind::Replay(log) => {
                let u = *log.get(self.cursor).ok_or(Error::ReplayExhausted(self.cursor))?;
                self.cursor += 1;
                u
            }
        };
        Ok(u.clamp(-cap, cap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_identity_and_silent_noise() {
        let m = UserModel::blend(1.0, 8.0, 3);
        let mut u = m.start();
        for k in 0..100 {
            let nominal = (k as f64 * 0.37).sin() * 9.0;
            assert_eq!(u.user_input(&State::HANGING, nominal, 0.0).unwrap(), nominal);
        }
        let m = UserModel::noise(0.0, 3);
        let mut u = m.start();
        assert_eq!(u.user_input(&State::HANGING, 5.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn seeded_determinism() {
        let m = UserModel::noise(8.0, 42);
        let a: Vec<f64> = {
            let mut u = m.start();
            (0..50).map(|_| u.user_input(&State::HANGING, 0.0, 0.0).unwrap()).collect()
        };
        let b: Vec<f64> = {
            let mut u = m.start();
            (0..50).map(|_| u.user_input(&State::HANGING, 0.0, 0.0).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 8.0));
        let c: Vec<f64> = {
            let other = m.with_seed(43);
            let mut u = other.start();
            (0..50).map(|_| u.user_input(&State::HANGING, 0.0, 0.0).unwrap()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn replay_exhaustion() {
        let m = UserModel::replay(alloc::vec![1.0, -2.0]);
        let mut u = m.start();
        assert_eq!(u.user_input(&State::HANGING, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(u.user_input(&State::HANGING, 0.0, 0.0).unwrap(), -2.0);
        assert_eq!(u.user_input(&State::HANGING, 0.0, 0.0), Err(Error::ReplayExhausted(2)));
    }
}
