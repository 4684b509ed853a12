use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up from 0 to `base_lr`, then cosine decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub base_lr: f64,
}

impl Schedule {
    pub fn new(warmup_steps: usize, total_steps: usize, base_lr: f64) -> Result<Self> {
        if total_steps == 0 || warmup_steps >= total_steps {
            return Err(Error::InvalidArgument(format!(
                "schedule needs warmup_steps < total_steps (got {warmup_steps} / {total_steps})"
            )));
        }
        if !(base_lr.is_finite() && base_lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("bad base_lr {base_lr}")));
        }
        Ok(Self {
            warmup_steps,
            total_steps,
            base_lr,
        })
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {step} beyond schedule end {}",
                self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let progress =
            (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}
