use serde::{Deserialize, Serialize};

/// Epoch-indexed learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        initial_lr: f32,
    },
    /// Divide by `divisor` every `period` epochs.
    HalveEveryN {
        initial_lr: f32,
        period: usize,
        #[serde(default = "two")]
        divisor: f32,
    },
    /// Divide by `divisor` once each listed fraction of `total_epochs` has passed.
    StepAtFractions {
        initial_lr: f32,
        fractions: Vec<f32>,
        divisor: f32,
        total_epochs: usize,
    },
}

fn two() -> f32 {
    2.0
}

impl LrSchedule {
    pub fn initial_lr(&self) -> f32 {
        match self {
            LrSchedule::Constant { initial_lr }
            | LrSchedule::HalveEveryN { initial_lr, .. }
            | LrSchedule::StepAtFractions { initial_lr, .. } => *initial_lr,
        }
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        match self {
            LrSchedule::Constant { initial_lr } => *initial_lr,
            LrSchedule::HalveEveryN { initial_lr, period, divisor } => {
                let steps = epoch / (*period).max(1);
                initial_lr / divisor.powi(steps as i32)
            }
            LrSchedule::StepAtFractions { initial_lr, fractions, divisor, total_epochs } => {
                let steps = fractions
                    .iter()
                    .filter(|&&f| epoch as f64 >= (f as f64 * *total_epochs as f64).round())
                    .count();
                initial_lr / divisor.powi(steps as i32)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.initial_lr() > 0.0) {
            return Err("learning rate must be positive".into());
        }
        match self {
            LrSchedule::HalveEveryN { period, divisor, .. } if *period == 0 || *divisor < 1.0 => {
                Err("halve_every_n needs period >= 1 and divisor >= 1".into())
            }
            LrSchedule::StepAtFractions { divisor, fractions, .. }
                if *divisor < 1.0 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) =>
            {
                Err("step_at_fractions needs divisor >= 1 and fractions in [0, 1]".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halving_schedule_matches_reported_settings() {
        let s = LrSchedule::HalveEveryN { initial_lr: 0.1, period: 10, divisor: 2.0 };
        for e in 0..10 {
            assert_eq!(s.lr_at(e), 0.1);
        }
        assert_eq!(s.lr_at(10), 0.05);
        assert_eq!(s.lr_at(25), 0.025);
    }

    #[test]
    fn step_schedule_at_three_quarters() {
        let s = LrSchedule::StepAtFractions {
            initial_lr: 0.1,
            fractions: vec![0.5, 0.75],
            divisor: 10.0,
            total_epochs: 160,
        };
        assert_eq!(s.lr_at(79), 0.1);
        assert!((s.lr_at(80) - 0.01).abs() < 1e-9);
        assert!((s.lr_at(120) - 0.001).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn schedules_never_increase(lr in 1e-4f32..1.0, period in 1usize..20, e in 0usize..300) {
            let h = LrSchedule::HalveEveryN { initial_lr: lr, period, divisor: 2.0 };
            prop_assert!(h.lr_at(e + 1) <= h.lr_at(e));
            prop_assert!(h.lr_at(e) >= 0.0);
            let s = LrSchedule::StepAtFractions {
                initial_lr: lr, fractions: vec![0.5, 0.75], divisor: 10.0, total_epochs: 160,
            };
            prop_assert!(s.lr_at(e + 1) <= s.lr_at(e));
        }
    }
}
