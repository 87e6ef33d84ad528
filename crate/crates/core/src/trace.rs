//! Residual traces recorded by the iterative solvers.

use serde::{Deserialize, Serialize};

/// One sample of an iterative fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Outer iteration (correspondence refresh) counter, from 1.
    pub iteration: usize,
    /// Stiffness weight in effect, or 0 where none applies.
    pub beta: f64,
    /// Objective at this iteration's correspondences before its solves.
    pub start_objective: f64,
    /// Objective at the same correspondences after the solves.
    pub objective: f64,
    pub data: f64,
    /// Regularizer: stiffness energy in the fine stage, boundary term for extremities.
    pub stiffness: f64,
    /// RMS distance over active matches.
    pub rms: f64,
    pub valid_fraction: f64,
}

/// Tally of fixed-correspondence solves and how many raised their own objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub steps: usize,
    pub violations: usize,
    /// Largest observed `after − before` (floored at 0), normalized by `max(1, before)`.
    pub worst_increase: f64,
}

impl DescentCheck {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn record(&mut self, before: f64, after: f64) {
        let rel = (after - before) / before.abs().max(1.0);
        self.steps += 1;
        if rel > Self::TOLERANCE {
            self.violations += 1;
        }
        if rel > self.worst_increase {
            self.worst_increase = rel;
        }
    }

    pub fn merge(&mut self, other: &DescentCheck) {
        self.steps += other.steps;
        self.violations += other.violations;
        self.worst_increase = self.worst_increase.max(other.worst_increase);
    }
}
