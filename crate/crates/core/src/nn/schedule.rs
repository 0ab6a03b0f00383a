use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule.
///
/// `Cosine` is indexed by optimizer step; `Plateau` is indexed by epoch and
/// reacts to the validation-loss history recorded so far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        base: f64,
    },
    Cosine {
        base: f64,
        total_steps: u64,
    },
    Plateau {
        base: f64,
        patience: usize,
        factor: f64,
        #[serde(default)]
        min_delta: f64,
    },
}

impl LrSchedule {
    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { base }
            | LrSchedule::Cosine { base, .. }
            | LrSchedule::Plateau { base, .. } => base,
        }
    }

    pub fn with_base(self, new_base: f64) -> Self {
        match self {
            LrSchedule::Constant { .. } => LrSchedule::Constant { base: new_base },
            LrSchedule::Cosine { total_steps, .. } => LrSchedule::Cosine {
                base: new_base,
                total_steps,
            },
            LrSchedule::Plateau {
                patience,
                factor,
                min_delta,
                ..
            } => LrSchedule::Plateau {
                base: new_base,
                patience,
                factor,
                min_delta,
            },
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.base() >= 0.0) || !self.base().is_finite() {
            return Err(Error::config(format!("{field}.base"), "must be a finite non-negative rate"));
        }
        if let LrSchedule::Plateau {
            patience,
            factor,
            min_delta,
            ..
        } = *self
        {
            if patience == 0 {
                return Err(Error::config(format!("{field}.patience"), "must be at least 1"));
            }
            if !(factor > 0.0 && factor < 1.0) {
                return Err(Error::config(format!("{field}.factor"), "must lie in (0, 1)"));
            }
            if !(min_delta >= 0.0) {
                return Err(Error::config(format!("{field}.min_delta"), "must be non-negative"));
            }
        }
        Ok(())
    }

    /// Rate at step or epoch `t`. `history` holds the validation losses of
    /// the epochs completed before `t` and is only read by `Plateau`.
    pub fn rate(&self, t: u64, history: &[f64]) -> f64 {
        match *self {
            LrSchedule::Constant { base } => base,
            LrSchedule::Cosine { base, total_steps } => {
                if total_steps == 0 {
                    return base;
                }
                let frac = t.min(total_steps) as f64 / total_steps as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            LrSchedule::Plateau {
                base,
                patience,
                factor,
                min_delta,
            } => {
                let mut rate = base;
                let mut best = f64::INFINITY;
                let mut stale = 0;
                for &loss in history {
                    if loss < best - min_delta {
                        best = loss;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= patience {
                            rate *= factor;
                            stale = 0;
                        }
                    }
                }
                rate
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = LrSchedule::Cosine {
            base: 0.03,
            total_steps: 100,
        };
        assert_eq!(s.rate(0, &[]), 0.03);
        assert!((s.rate(50, &[]) - 0.015).abs() < 1e-15);
        assert!(s.rate(100, &[]).abs() < 1e-15);
        let rates: Vec<f64> = (0..=100).map(|t| s.rate(t, &[])).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn plateau_halves_after_patience() {
        let s = LrSchedule::Plateau {
            base: 1.0,
            patience: 5,
            factor: 0.5,
            min_delta: 0.0,
        };
        let losses = [1.0; 12];
        assert_eq!(s.rate(5, &losses[..5]), 1.0);
        assert_eq!(s.rate(6, &losses[..6]), 0.5);
        // Next reduction needs a full new window.
        assert_eq!(s.rate(10, &losses[..10]), 0.5);
        assert_eq!(s.rate(11, &losses[..11]), 0.25);
    }

    #[test]
    fn plateau_resets_on_improvement() {
        let s = LrSchedule::Plateau {
            base: 1.0,
            patience: 2,
            factor: 0.5,
            min_delta: 0.0,
        };
        assert_eq!(s.rate(4, &[3.0, 3.0, 2.0, 2.0]), 1.0);
        assert_eq!(s.rate(5, &[3.0, 3.0, 2.0, 2.0, 2.0]), 0.5);
    }

    #[test]
    fn plateau_factor_validated() {
        let s = LrSchedule::Plateau {
            base: 1.0,
            patience: 2,
            factor: 1.0,
            min_delta: 0.0,
        };
        assert!(s.validate("probe.schedule").is_err());
    }
}
