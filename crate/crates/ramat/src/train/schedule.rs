use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear warmup to lr_peak over warmup_steps, then cosine decay to
/// lr_min at total_steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub lr_peak: f64,
    pub lr_min: f64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be < total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.lr_peak < self.lr_min || self.lr_min < 0.0 {
            return Err(Error::Config(format!(
                "need lr_peak >= lr_min >= 0, got peak {} min {}",
                self.lr_peak, self.lr_min
            )));
        }
        Ok(())
    }
}

/// Learning rate at a step: step/warmup * peak during warmup, else
/// lr_min + 0.5*(peak-min)*(1 + cos(pi * progress)).
pub fn cosine_lr(step: u64, schedule: &LrSchedule) -> Result<f64> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond total_steps {}",
            schedule.total_steps
        )));
    }
    if step < schedule.warmup_steps {
        return Ok(schedule.lr_peak * step as f64 / schedule.warmup_steps as f64);
    }
    let progress =
        (step - schedule.warmup_steps) as f64 / (schedule.total_steps - schedule.warmup_steps) as f64;
    Ok(schedule.lr_min
        + 0.5 * (schedule.lr_peak - schedule.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule {
            warmup_steps: 100,
            total_steps: 1000,
            lr_peak: 1e-3,
            lr_min: 1e-5,
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let s = sched();
        assert_eq!(cosine_lr(0, &s).unwrap(), 0.0);
        assert_eq!(cosine_lr(100, &s).unwrap(), 1e-3);
        assert_eq!(cosine_lr(1000, &s).unwrap(), 1e-5);
    }

    #[test]
    fn cosine_midpoint() {
        let s = sched();
        // Midpoint of the cosine span: (warmup + total) / 2 = 550.
        let lr = cosine_lr(550, &s).unwrap();
        let want = s.lr_min + 0.5 * (s.lr_peak - s.lr_min);
        assert!((lr - want).abs() < 1e-15);
    }

    #[test]
    fn warmup_is_linear() {
        let s = sched();
        assert_eq!(cosine_lr(50, &s).unwrap(), 0.5e-3);
    }

    #[test]
    fn monotone_decay_after_warmup() {
        let s = sched();
        let mut prev = cosine_lr(100, &s).unwrap();
        for step in 101..=1000 {
            let lr = cosine_lr(step, &s).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        let bad = LrSchedule {
            warmup_steps: 10,
            total_steps: 10,
            lr_peak: 1e-3,
            lr_min: 0.0,
        };
        assert!(matches!(cosine_lr(0, &bad), Err(Error::Config(_))));
        assert!(matches!(cosine_lr(2000, &sched()), Err(Error::Config(_))));
    }
}
