//! Uniform space and time grids for the backward PDE sweep.

use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < 0.0 && 0.0 < x_max) {
            return Err(GmError::InvalidGrid(format!(
                "need x_min < 0 < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 3 {
            return Err(GmError::InvalidGrid(format!(
                "need n_points >= 3, got {n_points}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Default PDE domain for a driver with upper variance `sigma_bar_sq`
    /// over horizon `t`: ±10 standard deviations, so boundary influence
    /// at the origin is negligible.
    pub fn default_for(sigma_bar_sq: f64, t: f64, n_points: usize) -> Result<Self> {
        let half = 10.0 * (sigma_bar_sq * t).sqrt();
        Self::new(-half, half, n_points)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|j| self.node(j))
    }

    pub fn contains(&self, x: f64) -> bool {
        self.x_min <= x && x <= self.x_max
    }

    /// Index of the grid node nearest to `x` (clamped to the hull).
    pub fn nearest_index(&self, x: f64) -> usize {
        let j = ((x - self.x_min) / self.dx()).round();
        (j.max(0.0) as usize).min(self.n_points - 1)
    }

    /// Halve the spacing, keeping the hull.
    pub fn refined(&self) -> Self {
        Self {
            x_min: self.x_min,
            x_max: self.x_max,
            n_points: 2 * self.n_points - 1,
        }
    }

    /// Shift the hull by `c` (used by the translation-covariance checks).
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.x_min + c, self.x_max + c, self.n_points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(GmError::InvalidGrid(format!(
                "need t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        if n_steps < 1 {
            return Err(GmError::InvalidGrid("need n_steps >= 1".into()));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Time grid on [t_start, t_end] whose step satisfies
    /// sigma_bar_sq*dt/dx^2 <= cfl_ratio.
    pub fn for_cfl(
        t_start: f64,
        t_end: f64,
        dx: f64,
        sigma_bar_sq: f64,
        cfl_ratio: f64,
    ) -> Result<Self> {
        if !(cfl_ratio > 0.0 && cfl_ratio <= 1.0) {
            return Err(GmError::InvalidGrid(format!(
                "need 0 < cfl_ratio <= 1, got {cfl_ratio}"
            )));
        }
        let dt_max = cfl_ratio * dx * dx / sigma_bar_sq;
        let n_steps = ((t_end - t_start) / dt_max).ceil().max(1.0) as usize;
        Self::new(t_start, t_end, n_steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.time(k))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_start <= t && t <= self.t_end
    }

    /// Index of the grid time nearest to `t` (clamped).
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = ((t - self.t_start) / self.dt()).round();
        (k.max(0.0) as usize).min(self.n_steps)
    }
}
