//! Exploration efficiency accounting: executed-edge counts, env-step totals
//! including replay overhead, and the per-trajectory amortization curve.

use serde::{Deserialize, Serialize};

use crate::model::{ExplorationTree, NodeStatus};

use super::EngineError;

/// Structural efficiency summary of an explored forest.
///
/// `unique_expansions` counts executed edges (nodes carrying a verification,
/// TERMINAL bookkeeping edges excluded); shared prefixes are counted once by
/// construction. `env_steps_including_replay` is only known from live run
/// counters, not from serialized trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStats {
    pub trajectories: usize,
    pub unique_expansions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_steps_including_replay: Option<u64>,
    pub avg_expansions_per_trajectory: f64,
}

/// Leaves that end a trajectory: TERMINAL leaves and EXPLORED leaves (the
/// engine only leaves EXPLORED leaves at the depth cap).
pub fn trajectory_leaf_count(tree: &ExplorationTree) -> usize {
    tree.leaves()
        .into_iter()
        .filter(|id| {
            matches!(tree.nodes[id].status, NodeStatus::Terminal | NodeStatus::Explored)
        })
        .count()
}

fn executed_edge_count(tree: &ExplorationTree) -> usize {
    tree.nodes
        .values()
        .filter(|n| n.verification.is_some() && n.status != NodeStatus::Terminal)
        .count()
}

pub fn exploration_stats(forest: &[ExplorationTree]) -> Result<ExplorationStats, EngineError> {
    let trajectories: usize = forest.iter().map(trajectory_leaf_count).sum();
    let unique_expansions: usize = forest.iter().map(executed_edge_count).sum();
    if trajectories == 0 {
        return Err(EngineError::NoTrajectories);
    }
    Ok(ExplorationStats {
        trajectories,
        unique_expansions,
        env_steps_including_replay: None,
        avg_expansions_per_trajectory: unique_expansions as f64 / trajectories as f64,
    })
}

/// One point of the amortization curve, captured when a trajectory completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub trajectories: u64,
    pub executed_edges: u64,
}

impl CurvePoint {
    pub fn average(&self) -> f64 {
        self.executed_edges as f64 / self.trajectories as f64
    }
}

/// Live counters accumulated by the coordinator across a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub trees: usize,
    pub trajectories: u64,
    /// Executed edges over the whole run (shared prefixes counted once).
    pub unique_expansions: u64,
    /// Expansion (propose) calls over the whole run.
    pub propose_calls: u64,
    /// Every env.reset and env.step call, replays included.
    pub env_steps_including_replay: u64,
    pub corrupted_nodes: u64,
    pub requeues: u64,
    /// Nodes expanded more than once; must stay 0.
    pub double_expansions: u64,
    pub completion_curve: Vec<CurvePoint>,
    /// One entry per corrupted node, naming the failing depth and delta.
    pub corruption_reports: Vec<super::CorruptionReport>,
}

impl RunStats {
    pub fn avg_expansions_per_trajectory(&self) -> Option<f64> {
        (self.trajectories > 0)
            .then(|| self.unique_expansions as f64 / self.trajectories as f64)
    }
}
