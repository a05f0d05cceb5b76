//! Linear variance-preserving noise schedule over discrete steps.
//!
//! alpha(step) = exp[-¼ t²(β_max-β_min) - ½ t β_min] with t = step/T, so
//! alpha(0) = 1 exactly and alpha decays monotonically towards ~0 at step T.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DifaugError, Result};

pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 20.0;
pub const DEFAULT_TOTAL_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    total_steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            total_steps: DEFAULT_TOTAL_STEPS,
        }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64, total_steps: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min < beta_max) {
            return Err(DifaugError::InvalidArgument(format!(
                "schedule requires 0 < beta_min < beta_max, got {beta_min} / {beta_max}"
            )));
        }
        if total_steps == 0 {
            return Err(DifaugError::InvalidArgument("total_steps must be positive".into()));
        }
        Ok(NoiseSchedule { beta_min, beta_max, total_steps })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    /// Decay factor α at a discrete step in [0, T].
    pub fn alpha(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(DifaugError::InvalidArgument(format!(
                "step {step} outside [0, {}]",
                self.total_steps
            )));
        }
        if step == 0 {
            return Ok(1.0);
        }
        let t = step as f64 / self.total_steps as f64;
        Ok((-0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min).exp())
    }
}

/// How the corruption step is drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TSamplingPolicy {
    /// Inclusive upper bound of the uniform draw.
    pub max_step: usize,
}

impl TSamplingPolicy {
    pub fn full_range(schedule: &NoiseSchedule) -> Self {
        TSamplingPolicy { max_step: schedule.total_steps() }
    }
}

/// Uniform draw from {0, …, max_step}.
pub fn sample_step(
    schedule: &NoiseSchedule,
    policy: TSamplingPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if policy.max_step > schedule.total_steps() {
        return Err(DifaugError::InvalidArgument(format!(
            "policy.max_step {} exceeds schedule T {}",
            policy.max_step,
            schedule.total_steps()
        )));
    }
    Ok(rng.gen_range(0..=policy.max_step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha(0).unwrap(), 1.0);
        let at = s.alpha(1000).unwrap();
        let expect = (-5.025f64).exp();
        assert!((at - expect).abs() / expect < 1e-9, "alpha(T) = {at}");
    }

    #[test]
    fn midpoint_closed_form() {
        let s = NoiseSchedule::default();
        let a = s.alpha(500).unwrap();
        assert!((a - (-1.26875f64).exp()).abs() < 1e-12);
        assert!((a - 0.281183).abs() < 1e-5);
    }

    #[test]
    fn strictly_decreasing_over_grid() {
        let s = NoiseSchedule::default();
        let mut prev = s.alpha(0).unwrap();
        for step in 1..=1000 {
            let a = s.alpha(step).unwrap();
            assert!(a < prev, "alpha not strictly decreasing at step {step}");
            assert!(a > 0.0 && a <= 1.0);
            assert!((1.0 - a * a) >= 0.0 && (1.0 - a * a) < 1.0);
            prev = a;
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let s = NoiseSchedule::default();
        assert!(s.alpha(1001).is_err());
        assert!(NoiseSchedule::new(0.0, 20.0, 1000).is_err());
        assert!(NoiseSchedule::new(5.0, 1.0, 1000).is_err());
    }

    #[test]
    fn degenerate_policy_always_zero() {
        let s = NoiseSchedule::default();
        let mut rng = derive_rng(1, "t", &[]);
        for _ in 0..100 {
            assert_eq!(sample_step(&s, TSamplingPolicy { max_step: 0 }, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn uniform_mean_within_3_sigma() {
        let s = NoiseSchedule::default();
        let policy = TSamplingPolicy { max_step: 1000 };
        let mut rng = derive_rng(42, "t", &[]);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_step(&s, policy, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        // σ of the mean for U{0..1000} is ≈ 0.9137
        assert!((mean - 500.0).abs() < 3.0 * 0.9137, "mean = {mean}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let s = NoiseSchedule::default();
        let policy = TSamplingPolicy::full_range(&s);
        let draw = |seed| -> Vec<usize> {
            let mut rng = derive_rng(seed, "t", &[]);
            (0..32).map(|_| sample_step(&s, policy, &mut rng).unwrap()).collect()
        };
        assert_eq!(draw(9), draw(9));
    }
}
