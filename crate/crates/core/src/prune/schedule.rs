use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic ramp of the pruning ratio from `start` at epoch `begin` to
/// `target` at epoch `begin + ramp`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradualSchedule {
    pub start: f64,
    pub target: f64,
    pub begin: usize,
    pub ramp: usize,
}

impl GradualSchedule {
    pub fn new(start: f64, target: f64, begin: usize, ramp: usize) -> Result<Self> {
        let s = Self {
            start,
            target,
            begin,
            ramp,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.start, self.target] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Ratio(r));
            }
        }
        if self.start > self.target {
            return Err(Error::Config(format!(
                "initial ratio {} exceeds target ratio {}",
                self.start, self.target
            )));
        }
        if self.ramp == 0 {
            return Err(Error::Config("pruning ramp length must be positive".into()));
        }
        Ok(())
    }

    /// Pruning ratio in effect during `epoch`.
    pub fn current_ratio(&self, epoch: usize) -> f64 {
        if epoch <= self.begin {
            return self.start;
        }
        if epoch >= self.begin + self.ramp {
            return self.target;
        }
        let remaining = 1.0 - (epoch - self.begin) as f64 / self.ramp as f64;
        self.target + (self.start - self.target) * remaining.powi(3)
    }
}
