//! Per-timestep style weight forwarded to generator backends.
//!
//! The blend itself happens inside the generator; the engine only decides
//! how strongly the style reference counts at each denoising step.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleSchedule {
    /// Weight for timesteps `0..=boundary`.
    pub early_weight: f64,
    /// Weight for timesteps after `boundary`.
    pub late_weight: f64,
    pub boundary: u32,
    pub total_steps: u32,
}

impl Default for StyleSchedule {
    fn default() -> Self {
        Self { early_weight: 0.7, late_weight: 0.3, boundary: 35, total_steps: 50 }
    }
}

impl StyleSchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.early_weight) || !unit.contains(&self.late_weight) {
            return Err(CoreError::InvalidSchedule("weights must lie in [0, 1]"));
        }
        if self.boundary >= self.total_steps {
            return Err(CoreError::InvalidSchedule("boundary must precede the last step"));
        }
        Ok(())
    }

    /// `(timestep, weight)` for every step, in increasing timestep order.
    pub fn per_step(&self) -> Vec<(u32, f64)> {
        (0..self.total_steps)
            .map(|t| (t, if t <= self.boundary { self.early_weight } else { self.late_weight }))
            .collect()
    }
}

pub fn style_lambda(schedule: &StyleSchedule, t: u32) -> Result<f64> {
    schedule.validate()?;
    if t >= schedule.total_steps {
        return Err(CoreError::TimestepOutOfRange { t, total: schedule.total_steps });
    }
    Ok(if t <= schedule.boundary { schedule.early_weight } else { schedule.late_weight })
}
