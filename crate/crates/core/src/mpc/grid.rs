use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keeps the explicit thermal update of a long step within 0.1 % of a
/// 1 s integration.
pub const DEFAULT_MAX_SUBSTEP: f64 = 2.5;

/// Two-rate prediction grid: `n_short` steps of `dt_short` followed by
/// `n_long` steps of `dt_long`. A single-rate horizon is `n_long = 0`.
///
/// Long steps are integrated in equal substeps no longer than
/// `max_substep` while the control is held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonGrid {
    pub n_short: usize,
    pub n_long: usize,
    pub dt_short: f64,
    pub dt_long: f64,
    /// Longest integration substep inside a long step (s).
    pub max_substep: f64,
}

impl Default for HorizonGrid {
    fn default() -> Self {
        Self::single_rate(15, 1.0)
    }
}

impl HorizonGrid {
    pub fn single_rate(n: usize, dt: f64) -> Self {
        Self { n_short: n, n_long: 0, dt_short: dt, dt_long: dt, max_substep: DEFAULT_MAX_SUBSTEP }
    }

    pub fn multi_rate(n_short: usize, dt_short: f64, n_long: usize, dt_long: f64) -> Self {
        Self { n_short, n_long, dt_short, dt_long, max_substep: DEFAULT_MAX_SUBSTEP }
    }

    pub fn with_max_substep(mut self, dt: f64) -> Self {
        self.max_substep = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_short + self.n_long == 0 {
            return Err(Error::Parameter("horizon needs at least one step".into()));
        }
        if !(self.dt_short.is_finite() && self.dt_short > 0.0) {
            return Err(Error::Parameter(format!("dt_short must be > 0, got {}", self.dt_short)));
        }
        if self.n_long > 0 && !(self.dt_long.is_finite() && self.dt_long >= self.dt_short) {
            return Err(Error::Parameter(format!(
                "dt_long ({}) must be >= dt_short ({})",
                self.dt_long, self.dt_short
            )));
        }
        if !(self.max_substep.is_finite() && self.max_substep > 0.0) {
            return Err(Error::Parameter(format!("max_substep must be > 0, got {}", self.max_substep)));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.n_short + self.n_long
    }

    /// Substeps integrating one long step.
    pub fn long_substeps(&self) -> usize {
        ((self.dt_long / self.max_substep - 1e-9).ceil() as usize).max(1)
    }

    pub fn step_duration(&self, k: usize) -> f64 {
        if k < self.n_short { self.dt_short } else { self.dt_long }
    }

    /// `(substep count, substep length)` of step `k`.
    pub fn substeps_of(&self, k: usize) -> (usize, f64) {
        if k < self.n_short {
            (1, self.dt_short)
        } else {
            let n = self.long_substeps();
            (n, self.dt_long / n as f64)
        }
    }

    /// Index of the first substep of step `k`.
    pub fn first_substep(&self, k: usize) -> usize {
        if k <= self.n_short {
            k
        } else {
            self.n_short + (k - self.n_short) * self.long_substeps()
        }
    }

    pub fn n_substeps(&self) -> usize {
        self.first_substep(self.n_steps())
    }

    /// Total predicted time (s).
    pub fn span(&self) -> f64 {
        self.n_short as f64 * self.dt_short + self.n_long as f64 * self.dt_long
    }

    /// Start time of step `k` relative to the horizon start.
    pub fn step_start(&self, k: usize) -> f64 {
        let short = k.min(self.n_short) as f64 * self.dt_short;
        short + k.saturating_sub(self.n_short) as f64 * self.dt_long
    }

    /// End times of every step relative to the horizon start.
    pub fn boundaries(&self) -> Vec<f64> {
        (1..=self.n_steps()).map(|k| self.step_start(k)).collect()
    }

    /// End times of every substep relative to the horizon start.
    pub fn substep_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_substeps());
        for k in 0..self.n_steps() {
            let (n, dt) = self.substeps_of(k);
            let t0 = self.step_start(k);
            for j in 1..=n {
                out.push(t0 + j as f64 * dt);
            }
        }
        out
    }

    /// Index of the step covering relative time `t`; past the end maps to the last step.
    pub fn step_at(&self, t: f64) -> usize {
        let n = self.n_steps();
        (0..n).find(|&k| t < self.step_start(k + 1) - 1e-9).unwrap_or(n - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_rate_layout() {
        let coarse = HorizonGrid::multi_rate(3, 1.0, 5, 5.0);
        assert_eq!(coarse.n_substeps(), 13);
        assert_eq!(coarse.substeps_of(3), (2, 2.5));
        assert_eq!(coarse.substep_times()[3..5], [5.5, 8.0]);
        assert_eq!(coarse.clone().with_max_substep(5.0).n_substeps(), 8);
        assert_eq!(HorizonGrid::multi_rate(3, 1.0, 2, 8.0).substeps_of(4), (4, 2.0));

        let g = coarse.with_max_substep(1.0);
        g.validate().unwrap();
        assert_eq!(g.n_steps(), 8);
        assert_eq!(g.n_substeps(), 28);
        assert_eq!(g.span(), 28.0);
        assert_eq!(g.boundaries(), vec![1.0, 2.0, 3.0, 8.0, 13.0, 18.0, 23.0, 28.0]);
        assert_eq!(g.first_substep(4), 8);
        assert_eq!(g.substep_times().len(), 28);
        assert_eq!(g.step_at(0.5), 0);
        assert_eq!(g.step_at(3.0), 3);
        assert_eq!(g.step_at(100.0), 7);
    }

    #[test]
    fn single_rate_is_the_degenerate_case() {
        let g = HorizonGrid::single_rate(15, 1.0);
        assert_eq!(g.n_substeps(), 15);
        assert_eq!(g.span(), 15.0);
        assert_eq!(g.first_substep(15), 15);
    }

    #[test]
    fn invalid_grids() {
        assert!(HorizonGrid::single_rate(0, 1.0).validate().is_err());
        assert!(HorizonGrid::multi_rate(3, 1.0, 2, 0.5).validate().is_err());
        assert!(HorizonGrid::single_rate(3, 0.0).validate().is_err());
        assert!(HorizonGrid::multi_rate(3, 1.0, 2, 5.0).with_max_substep(0.0).validate().is_err());
    }
}
