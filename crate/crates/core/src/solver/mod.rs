//! Feasible-start null-space quasi-Newton solver and the coarse-to-fine
//! registration driver.

mod lbfgs;
mod pyramid;

pub use lbfgs::{solve_constrained, IterationRecord, SolveReport, StopReason, START_FEASIBILITY};
pub use pyramid::{register_pyramid, ConstraintMode, GridSpec, LevelReport, RegistrationField, RegistrationReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Per pyramid level.
    pub max_iterations: usize,
    /// Absolute stop on the projected gradient 2-norm.
    pub gradient_tolerance: f64,
    /// Stop when the projected gradient falls below this fraction of its
    /// initial norm.
    pub relative_gradient_tolerance: f64,
    /// Stop after three accepted steps each decreasing the objective by less
    /// than this fraction of `|f|`.
    pub objective_tolerance: f64,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Largest coefficient change of the first trial step after a memory reset.
    pub initial_step: f64,
    pub history: usize,
    pub pyramid_levels: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            relative_gradient_tolerance: 1e-4,
            objective_tolerance: 1e-7,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            initial_step: 1.0,
            history: 8,
            pyramid_levels: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.gradient_tolerance)
            || !nonneg(self.relative_gradient_tolerance)
            || !nonneg(self.objective_tolerance)
            || self.gradient_tolerance + self.relative_gradient_tolerance <= 0.0
        {
            return Err(Error::Config("solver tolerances must be non-negative and not all zero".into()));
        }
        if !(pos(self.armijo_c) && self.armijo_c < 1.0) {
            return Err(Error::Config(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c)));
        }
        if !(pos(self.backtrack_factor) && self.backtrack_factor < 1.0) {
            return Err(Error::Config(format!("backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor)));
        }
        if !pos(self.initial_step) {
            return Err(Error::Config("initial_step must be positive".into()));
        }
        if self.history == 0 || self.max_backtracks == 0 {
            return Err(Error::Config("history and max_backtracks must be at least 1".into()));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::Config("pyramid_levels must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
