//! Variance schedule for the forward/reverse diffusion process.
//!
//! Schedule values are kept in f64 so posterior variances and the
//! cumulative products stay accurate; they are cast to f32 only when
//! they enter tensor math. Timesteps are 1-based: `alpha(t)` is defined
//! for t in 1..=T and `alpha_bar(0) == 1`.

use alloc::vec::Vec;

use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    InvalidTimesteps,
    InvalidBetaRange,
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleError::InvalidTimesteps => write!(f, "schedule needs at least one timestep"),
            ScheduleError::InvalidBetaRange => {
                write!(f, "beta endpoints must satisfy 0 < start <= end < 1")
            }
        }
    }
}

impl core::error::Error for ScheduleError {}

/// Linear-beta noise schedule with cached cumulative products.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of beta over T steps; alpha_t = 1 - beta_t,
    /// alpha_bar_t the running product.
    pub fn linear(t_total: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if t_total < 1 {
            return Err(ScheduleError::InvalidTimesteps);
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(ScheduleError::InvalidBetaRange);
        }
        let mut betas = Vec::with_capacity(t_total);
        for i in 0..t_total {
            let frac = if t_total == 1 {
                0.0
            } else {
                i as f64 / (t_total - 1) as f64
            };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        Ok(Self::from_betas(betas))
    }

    /// Schedule from explicit per-step alphas. Used by tests that pin
    /// hand-computed values.
    pub fn from_alphas(alphas: &[f64]) -> Self {
        assert!(!alphas.is_empty());
        assert!(alphas.iter().all(|&a| a > 0.0 && a <= 1.0));
        let betas = alphas.iter().map(|a| 1.0 - a).collect();
        Self::from_betas(betas)
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0f64;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    /// Total number of timesteps T.
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    fn check_t(&self, t: usize) {
        assert!(
            t >= 1 && t <= self.len(),
            "timestep {t} out of range 1..={}",
            self.len()
        );
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check_t(t);
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check_t(t);
        self.alphas[t - 1]
    }

    /// Cumulative product, with the convention alpha_bar(0) = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.len(), "timestep {t} out of range 0..={}", self.len());
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Reverse-process variance:
    /// sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * (1 - alpha_t).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.check_t(t);
        let num = 1.0 - self.alpha_bar(t - 1);
        let den = 1.0 - self.alpha_bar(t);
        if den == 0.0 {
            // alpha_t == 1 all the way down: no noise was added
            return 0.0;
        }
        num / den * (1.0 - self.alpha(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        // T = 1, beta = 0.1 -> alpha_1 = 0.9, alpha_bar_1 = 0.9
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha(1), 0.9);
        assert_eq!(s.alpha_bar(1), 0.9);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn two_step_product() {
        let s = NoiseSchedule::from_alphas(&[0.9, 0.8]);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn cumulative_product_is_exact() {
        let s = NoiseSchedule::linear(500, 1e-4, 0.02).unwrap();
        // against a direct product recomputation, bitwise
        let mut prod = 1.0f64;
        for t in 1..=500 {
            prod *= s.alpha(t);
            assert_eq!(prod.to_bits(), s.alpha_bar(t).to_bits(), "t = {t}");
            // and the one-step identity alpha_bar_t = alpha_bar_{t-1} * alpha_t
            assert_eq!(
                (s.alpha_bar(t - 1) * s.alpha(t)).to_bits(),
                s.alpha_bar(t).to_bits()
            );
        }
    }

    #[test]
    fn alpha_bar_decreases_to_small_values() {
        // frozen from an independent cumulative-product run:
        // T=500 linear 1e-4 -> 0.02 gives alpha_bar_500 = 6.352710797015057e-3
        let s = NoiseSchedule::linear(500, 1e-4, 0.02).unwrap();
        for t in 2..=500 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(500) < 0.01);
        assert!((s.alpha_bar(500) - 6.352710797015057e-3).abs() < 1e-12);
    }

    #[test]
    fn posterior_variance_hand_case() {
        // alpha = (0.9, 0.8): sigma_2^2 = (1-0.9)/(1-0.72)*(1-0.8) = 1/14
        let s = NoiseSchedule::from_alphas(&[0.9, 0.8]);
        assert_eq!(s.posterior_variance(1), 0.0);
        assert!((s.posterior_variance(2) - 1.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn no_noise_means_no_posterior_variance() {
        let s = NoiseSchedule::from_alphas(&[1.0, 1.0]);
        assert_eq!(s.posterior_variance(2), 0.0);
    }

    #[test]
    fn sigma_nonnegative_and_first_zero() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        assert_eq!(s.posterior_variance(1), 0.0);
        for t in 1..=100 {
            assert!(s.posterior_variance(t) >= 0.0);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.05).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }
}
