use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token and channel sizes shared by every component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Geometry tokens per frame.
    pub n_g: usize,
    /// Visual / fused channel width.
    pub d: usize,
    /// Geometry and camera channel width.
    pub d_g: usize,
    pub pool_h: usize,
    pub pool_w: usize,
    pub head_count: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            grid_h: 14,
            grid_w: 14,
            n_g: 8,
            d: 64,
            d_g: 16,
            pool_h: 7,
            pool_w: 7,
            head_count: 1,
        }
    }
}

impl Dims {
    /// Small token grid used by long-stream experiments.
    pub fn desk() -> Self {
        Self {
            grid_h: 4,
            grid_w: 4,
            n_g: 4,
            d: 64,
            d_g: 16,
            pool_h: 2,
            pool_w: 2,
            head_count: 1,
        }
    }

    pub fn n_v(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Pooled tokens per evidence entry.
    pub fn m(&self) -> usize {
        self.pool_h * self.pool_w
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("n_g", self.n_g),
            ("d", self.d),
            ("d_g", self.d_g),
            ("pool_h", self.pool_h),
            ("pool_w", self.pool_w),
            ("head_count", self.head_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.pool_h > self.grid_h || self.pool_w > self.grid_w {
            return Err(Error::Config(format!(
                "pool {}x{} exceeds grid {}x{}",
                self.pool_h, self.pool_w, self.grid_h, self.grid_w
            )));
        }
        if self.d % self.head_count != 0 {
            return Err(Error::Config(format!(
                "head_count {} must divide d = {}",
                self.head_count, self.d
            )));
        }
        // camera token carries position (3) and heading (cos, sin)
        if self.d_g < 5 {
            return Err(Error::Config(format!("d_g = {} is below the camera encoding width 5", self.d_g)));
        }
        Ok(())
    }
}
