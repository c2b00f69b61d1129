//! Concurrent tree-building: node scheduling, adaptive branching, step
//! verification, global prefix memory, deterministic replay with RMS gating,
//! and stop conditions.

mod manifest;
mod memory;
mod policy;
mod replay;
mod run;
mod stats;

pub use manifest::{
    MemorySection, PolicySection, ReplaySection, RunManifest, StopSection,
    MANIFEST_SCHEMA_VERSION,
};
pub use memory::{history_key, novelty_check, PrefixMemory, SimilarityMode};
pub use policy::{BranchingPolicy, ReplayPolicy, StopConditions};
pub use replay::{replay_path, restore_node, rms_diff, CorruptionReport, ObsStore, ReplayFailure};
pub use run::{run_exploration, EnvFactory, RunOutcome};
pub use stats::{exploration_stats, trajectory_leaf_count, CurvePoint, ExplorationStats, RunStats};

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::env::{AssetEntry, RenderSpec};
use crate::model::{ExplorationTree, NodeId, TreeNode};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("observation shapes differ: {}x{}x{} vs {}x{}x{}", a.0, a.1, a.2, b.0, b.1, b.2)]
    ShapeMismatch { a: (u32, u32, u8), b: (u32, u32, u8) },
    #[error("depth {depth} is outside the policy range [0, {max_depth})")]
    DepthOutOfRange { depth: u32, max_depth: u32 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("forest contains no trajectories; the average is undefined")]
    NoTrajectories,
    #[error("checkpoint write failed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Fully resolved engine configuration (a validated manifest plus loaded
/// environment inputs).
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub category: String,
    pub seed: u64,
    pub n_workers: usize,
    pub trees: usize,
    pub policy: BranchingPolicy,
    pub memory_enabled: bool,
    pub prefix_length: u32,
    pub similarity_threshold: f64,
    pub similarity_mode: SimilarityMode,
    pub replay: ReplayPolicy,
    pub max_consecutive_failures: u32,
    pub world_knowledge: String,
    pub noise_amplitude: f64,
    pub render: RenderSpec,
    pub assets: Vec<AssetEntry>,
    /// Checkpoint directory plus flush interval in expansions.
    pub checkpoint: Option<(PathBuf, usize)>,
}

impl EngineConfig {
    pub fn new(category: impl Into<String>, seed: u64) -> Self {
        let category = category.into();
        EngineConfig {
            world_knowledge: format!("{category} application functionality"),
            category,
            seed,
            n_workers: 1,
            trees: 1,
            policy: BranchingPolicy::default(),
            memory_enabled: true,
            prefix_length: 3,
            similarity_threshold: 0.8,
            similarity_mode: SimilarityMode::ExactMatch,
            replay: ReplayPolicy::default(),
            max_consecutive_failures: 3,
            noise_amplitude: 0.0,
            render: RenderSpec::default(),
            assets: Vec::new(),
            checkpoint: None,
        }
    }

    /// Applies manifest sections on top of the defaults. Environment loading
    /// (sim spec files, remote endpoints) stays with the caller.
    pub fn from_manifest(manifest: &RunManifest) -> Result<Self, EngineError> {
        let problems = manifest.validate();
        if !problems.is_empty() {
            return Err(EngineError::InvalidPolicy(problems.join("; ")));
        }
        let mut config = EngineConfig::new(&manifest.category, manifest.seed.expect("validated"));
        config.n_workers = manifest.n_workers;
        config.trees = manifest.trees;
        config.policy = manifest.policy.to_policy();
        config.memory_enabled = manifest.memory.enabled;
        config.prefix_length = manifest.memory.prefix_length;
        config.similarity_threshold = manifest.memory.similarity_threshold;
        config.replay = ReplayPolicy {
            epsilon: manifest.replay.epsilon,
            max_restore_attempts: manifest.replay.max_restore_attempts,
        };
        config.max_consecutive_failures = manifest.stop.max_consecutive_failures;
        if let Some(wk) = &manifest.world_knowledge {
            config.world_knowledge = wk.clone();
        }
        config.noise_amplitude = manifest.noise_amplitude;
        config.render = manifest.render;
        config.assets = manifest.assets.clone();
        Ok(config)
    }

    /// The run's stop conditions: the policy's depth cap plus the
    /// consecutive-failure budget.
    pub fn stop(&self) -> StopConditions {
        StopConditions {
            max_depth: self.policy.max_depth,
            max_consecutive_failures: self.max_consecutive_failures,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.policy.validate()?;
        if self.n_workers == 0 {
            return Err(EngineError::InvalidPolicy("n_workers must be >= 1".into()));
        }
        if self.trees == 0 {
            return Err(EngineError::InvalidPolicy("trees must be >= 1".into()));
        }
        if self.prefix_length == 0 {
            return Err(EngineError::InvalidPolicy("prefix_length must be >= 1".into()));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(EngineError::InvalidPolicy(
                "similarity_threshold must lie in (0, 1]".into(),
            ));
        }
        if self.max_consecutive_failures == 0 {
            return Err(EngineError::InvalidPolicy(
                "max_consecutive_failures must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Relabels node ids in schedule-independent preorder (children ordered by
/// step goal, then serialized action), so runs that produce the same node set
/// serialize byte-identically regardless of worker count.
pub fn canonicalize(tree: &ExplorationTree) -> ExplorationTree {
    let index = tree.child_index();
    let child_key = |id: &NodeId| {
        let node = &tree.nodes[id];
        let (goal, action) = node
            .incoming
            .as_ref()
            .map(|t| {
                (t.step_goal.clone(), serde_json::to_string(&t.action).unwrap_or_default())
            })
            .unwrap_or_default();
        (goal, action, id.0)
    };

    let mut order = Vec::with_capacity(tree.nodes.len());
    let mut stack = vec![tree.root_id()];
    while let Some(id) = stack.pop() {
        order.push(id);
        let mut kids = index.get(&id).cloned().unwrap_or_default();
        kids.sort_by_key(child_key);
        for kid in kids.into_iter().rev() {
            stack.push(kid);
        }
    }

    let relabel: HashMap<NodeId, NodeId> =
        order.iter().enumerate().map(|(i, id)| (*id, NodeId(i as u64))).collect();
    let mut nodes = std::collections::BTreeMap::new();
    for old_id in order {
        let node = &tree.nodes[&old_id];
        let new = TreeNode {
            id: relabel[&old_id],
            parent: node.parent.map(|p| relabel[&p]),
            depth: node.depth,
            incoming: node.incoming.clone(),
            status: node.status,
            verification: node.verification.clone(),
            observation_digest: node.observation_digest,
        };
        nodes.insert(new.id, new);
    }
    ExplorationTree {
        tree_id: tree.tree_id.clone(),
        category_id: tree.category_id.clone(),
        seed: tree.seed,
        nodes,
    }
}

/// Id-insensitive node signature set: one line per node combining the action
/// path from the root with status, verification, and observation digest.
/// Two runs explored the same tree iff these sets are equal.
pub fn node_signatures(tree: &ExplorationTree) -> std::collections::BTreeSet<String> {
    let mut signatures = std::collections::BTreeSet::new();
    for id in tree.nodes.keys() {
        let path = tree.path_nodes(*id).expect("valid tree");
        let mut sig = String::new();
        for pid in &path {
            let node = &tree.nodes[pid];
            if let Some(tuple) = &node.incoming {
                sig.push_str(&tuple.step_goal);
                sig.push('/');
                sig.push_str(&serde_json::to_string(&tuple.action).unwrap_or_default());
                sig.push('>');
            }
        }
        let node = &tree.nodes[id];
        sig.push_str(&format!(
            "[{}|{}|{}]",
            node.status,
            node.verification.as_ref().map_or("-".into(), |v| v.result_type.to_string()),
            node.observation_digest.map_or("-".into(), |d| format!("{d:016x}")),
        ));
        signatures.insert(sig);
    }
    signatures
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, Expectation, ExplorationTuple, NodeStatus};

    fn tuple(goal: &str, x: u32) -> ExplorationTuple {
        ExplorationTuple {
            action: Action::click(x, 1),
            step_goal: goal.into(),
            final_goal_hypothesis: "h".into(),
            expected_observation: Expectation::text_only("x"),
            rationale: "r".into(),
        }
    }

    #[test]
    fn canonicalize_is_order_insensitive() {
        // Same logical tree built in two different insertion orders.
        let mut a = ExplorationTree::new("t", "c", 1);
        let a1 = a.add_child(NodeId(0), tuple("alpha", 1), NodeStatus::Explored).unwrap();
        let _a2 = a.add_child(NodeId(0), tuple("beta", 2), NodeStatus::Explored).unwrap();
        a.add_child(a1, tuple("gamma", 3), NodeStatus::Explored).unwrap();

        let mut b = ExplorationTree::new("t", "c", 1);
        let _b1 = b.add_child(NodeId(0), tuple("beta", 2), NodeStatus::Explored).unwrap();
        let b2 = b.add_child(NodeId(0), tuple("alpha", 1), NodeStatus::Explored).unwrap();
        b.add_child(b2, tuple("gamma", 3), NodeStatus::Explored).unwrap();

        let ca = serde_json::to_string(&canonicalize(&a)).unwrap();
        let cb = serde_json::to_string(&canonicalize(&b)).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(node_signatures(&a), node_signatures(&b));
    }

    #[test]
    fn canonicalize_preserves_validity_and_shape() {
        let mut tree = ExplorationTree::new("t", "c", 1);
        let n1 = tree.add_child(NodeId(0), tuple("z", 1), NodeStatus::Explored).unwrap();
        {
            let node = tree.node_mut(n1).unwrap();
            node.verification = Some(crate::model::VerificationResult::new(
                crate::model::ResultType::Success,
                "ok",
            ));
            node.observation_digest = Some(42);
        }
        tree.add_child(n1, tuple("y", 2), NodeStatus::Pruned).unwrap();
        tree.add_child(NodeId(0), tuple("a", 3), NodeStatus::Unexplored).unwrap();
        let canonical = canonicalize(&tree);
        assert!(canonical.validate().is_empty());
        assert_eq!(canonical.nodes.len(), tree.nodes.len());
        assert_eq!(node_signatures(&canonical), node_signatures(&tree));
    }
}
