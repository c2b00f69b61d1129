//! Branching, replay, and stop policies for the exploration loop.

use serde::{Deserialize, Serialize};

use super::EngineError;

/// Depth-phased width schedule: the trajectory is partitioned into discovery,
/// development, and convergence phases, and the per-node candidate bound
/// shrinks phase by phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingPolicy {
    pub max_depth: u32,
    /// Two thresholds partitioning [0, max_depth) into the three phases.
    pub phase_bounds: (u32, u32),
    /// Candidate bound per phase; must be non-increasing.
    pub phase_widths: (u32, u32, u32),
}

impl Default for BranchingPolicy {
    fn default() -> Self {
        BranchingPolicy { max_depth: 20, phase_bounds: (6, 13), phase_widths: (4, 2, 1) }
    }
}

impl BranchingPolicy {
    pub fn new(max_depth: u32, phase_bounds: (u32, u32), phase_widths: (u32, u32, u32)) -> Self {
        BranchingPolicy { max_depth, phase_bounds, phase_widths }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let (b1, b2) = self.phase_bounds;
        if !(0 < b1 && b1 < b2 && b2 < self.max_depth) {
            return Err(EngineError::InvalidPolicy(format!(
                "phase bounds must satisfy 0 < {b1} < {b2} < {}",
                self.max_depth
            )));
        }
        let (w1, w2, w3) = self.phase_widths;
        if w1 == 0 || w2 == 0 || w3 == 0 {
            return Err(EngineError::InvalidPolicy("phase widths must be positive".into()));
        }
        if !(w1 >= w2 && w2 >= w3) {
            return Err(EngineError::InvalidPolicy(
                "phase widths must be non-increasing across phases".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on candidates proposed at depth `t`.
    pub fn k_max(&self, depth: u32) -> Result<u32, EngineError> {
        if depth >= self.max_depth {
            return Err(EngineError::DepthOutOfRange { depth, max_depth: self.max_depth });
        }
        let (b1, b2) = self.phase_bounds;
        let (w1, w2, w3) = self.phase_widths;
        Ok(if depth < b1 {
            w1
        } else if depth < b2 {
            w2
        } else {
            w3
        })
    }
}

/// Replay gate: a restored state is accepted only when the RMS pixel distance
/// to the recorded observation stays within epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayPolicy {
    pub epsilon: f64,
    pub max_restore_attempts: u32,
}

impl Default for ReplayPolicy {
    fn default() -> Self {
        ReplayPolicy { epsilon: 5.0, max_restore_attempts: 3 }
    }
}

/// Local DFS termination: depth cap plus a budget of consecutive non-SUCCESS
/// verifications. Both NO_CHANGE and UNEXPECTED_CHANGE count toward the
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopConditions {
    pub max_depth: u32,
    pub max_consecutive_failures: u32,
}

impl Default for StopConditions {
    fn default() -> Self {
        StopConditions { max_depth: 20, max_consecutive_failures: 3 }
    }
}
