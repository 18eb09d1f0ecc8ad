use crate::error::{Error, Result};

/// Uniform time grid `t0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        if !(t0.is_finite() && horizon.is_finite()) || t0 >= horizon {
            return Err(Error::invalid(format!(
                "time grid needs t0 < T, got t0 = {t0}, T = {horizon}"
            )));
        }
        Ok(TimeGrid { t0, horizon, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn h(&self) -> f64 {
        (self.horizon - self.t0) / self.n_steps as f64
    }

    /// Time of node `i`; the last node is exactly `T`.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.t0 + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t(i)).collect()
    }

    /// Grid on the same interval with `factor` times fewer steps.
    pub fn coarsen(&self, factor: usize) -> Result<TimeGrid> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.n_steps
            )));
        }
        TimeGrid::new(self.t0, self.horizon, self.n_steps / factor)
    }
}
