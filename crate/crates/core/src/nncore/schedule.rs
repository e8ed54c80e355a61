use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Scalar schedules for learning rate and EMA momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `base · factor^⌊epoch / every_epochs⌋`.
    StepDecay {
        base: f64,
        factor: f64,
        every_epochs: usize,
        steps_per_epoch: usize,
    },
    /// Linear ramp from 0 to `base` over `warmup_steps`, then cosine
    /// annealing from `base` to `end` at `total_steps`.
    CosineWithWarmup {
        base: f64,
        end: f64,
        warmup_steps: usize,
        total_steps: usize,
    },
    /// Cosine ramp from `start` to `end`, e.g. EMA momentum 0.996 → 1.0.
    CosineMomentum {
        start: f64,
        end: f64,
        total_steps: usize,
    },
    Constant {
        value: f64,
    },
}

impl Schedule {
    pub fn value(&self, step: usize) -> f64 {
        match *self {
            Schedule::StepDecay {
                base,
                factor,
                every_epochs,
                steps_per_epoch,
            } => {
                let epoch = step / steps_per_epoch.max(1);
                base * factor.powi((epoch / every_epochs.max(1)) as i32)
            }
            Schedule::CosineWithWarmup {
                base,
                end,
                warmup_steps,
                total_steps,
            } => {
                let step = step.min(total_steps);
                if step < warmup_steps {
                    base * step as f64 / warmup_steps as f64
                } else if total_steps <= warmup_steps {
                    base
                } else {
                    let t = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
                    end + (base - end) * (1.0 + (PI * t).cos()) / 2.0
                }
            }
            Schedule::CosineMomentum {
                start,
                end,
                total_steps,
            } => {
                if total_steps == 0 {
                    return end;
                }
                let t = step.min(total_steps) as f64 / total_steps as f64;
                start + (end - start) * (1.0 - (PI * t).cos()) / 2.0
            }
            Schedule::Constant { value } => value,
        }
    }

    /// Replace the horizon of total-step schedules.
    pub fn with_total_steps(self, total: usize) -> Self {
        match self {
            Schedule::CosineWithWarmup {
                base,
                end,
                warmup_steps,
                ..
            } => Schedule::CosineWithWarmup {
                base,
                end,
                warmup_steps,
                total_steps: total,
            },
            Schedule::CosineMomentum { start, end, .. } => Schedule::CosineMomentum {
                start,
                end,
                total_steps: total,
            },
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step_decay() -> Schedule {
        Schedule::StepDecay {
            base: 0.001,
            factor: 0.95,
            every_epochs: 5,
            steps_per_epoch: 10,
        }
    }

    #[test]
    fn step_decay_epoch_boundaries() {
        let s = step_decay();
        assert_eq!(s.value(0), 0.001);
        assert_eq!(s.value(49), 0.001);
        assert!((s.value(50) - 0.00095).abs() < 1e-18);
    }

    #[test]
    fn cosine_momentum_endpoints() {
        let s = Schedule::CosineMomentum {
            start: 0.996,
            end: 1.0,
            total_steps: 100,
        };
        assert_eq!(s.value(0), 0.996);
        assert_eq!(s.value(100), 1.0);
        assert!((s.value(50) - 0.998).abs() < 1e-15);
    }

    #[test]
    fn warmup_then_cosine() {
        let s = Schedule::CosineWithWarmup {
            base: 0.2,
            end: 0.0,
            warmup_steps: 10,
            total_steps: 30,
        };
        assert_eq!(s.value(0), 0.0);
        assert!((s.value(5) - 0.1).abs() < 1e-15);
        assert_eq!(s.value(10), 0.2);
        assert!((s.value(20) - 0.1).abs() < 1e-15);
        assert!(s.value(30).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn values_stay_in_range(step in 0usize..200, base in 0.001f64..1.0) {
            let sched = [
                Schedule::StepDecay { base, factor: 0.95, every_epochs: 5, steps_per_epoch: 3 },
                Schedule::CosineWithWarmup { base, end: 0.0, warmup_steps: 17, total_steps: 150 },
                Schedule::CosineMomentum { start: 0.996, end: 1.0, total_steps: 150 },
            ];
            let v = sched[0].value(step);
            prop_assert!(v > 0.0 && v <= base);
            let v = sched[1].value(step);
            prop_assert!((0.0..=base).contains(&v));
            let v = sched[2].value(step);
            prop_assert!((0.996..=1.0).contains(&v));
        }
    }
}
