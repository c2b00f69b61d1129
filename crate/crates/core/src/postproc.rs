//! Converts explored trees into the three dataset tiers: step-level records,
//! sub-trajectories, and long trajectories, via summarization, quality
//! scoring and filtering, and hindsight reasoning enrichment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentError, AgentSuite, HistoryEntry, QualityScore, ReasoningChain, ReasoningInput,
};
use crate::analytics::unique_task_count;
use crate::model::{
    Action, ExplorationTree, NodeId, NodeStatus, Trajectory, TrajectoryStep, VerificationResult,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum PostprocError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Analytics(#[from] crate::analytics::AnalyticsError),
}

/// Keep a trajectory iff every score dimension reaches `min_dimension` and
/// the four dimensions sum to at least `min_total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_dimension: u8,
    pub min_total: u8,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy { min_dimension: 2, min_total: 9 }
    }
}

impl FilterPolicy {
    pub fn keeps(&self, score: &QualityScore) -> bool {
        score.min_dimension() >= self.min_dimension && score.total() >= self.min_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Step,
    SubTraj,
    LongTraj,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::Step => "Step",
            Tier::SubTraj => "Sub-Traj",
            Tier::LongTraj => "Long-Traj",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStep {
    pub reasoning: ReasoningChain,
    pub goal: String,
    pub action: Action,
    pub verification: VerificationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSource {
    pub tree_id: String,
    /// First and last node id of the span.
    pub node_span: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub tier: Tier,
    pub instruction: String,
    pub steps: Vec<RecordStep>,
    pub source: RecordSource,
}

/// Knobs for [`export`].
#[derive(Debug, Clone, Copy)]
pub struct ExportPolicies {
    pub filter: FilterPolicy,
    /// Minimum sub-trajectory length in steps.
    pub min_sublen: usize,
    /// Sub-trajectory intents at or above this TF-IDF cosine to an earlier
    /// kept intent are dropped as redundant exploration.
    pub redundancy_threshold: f64,
}

impl Default for ExportPolicies {
    fn default() -> Self {
        ExportPolicies {
            filter: FilterPolicy::default(),
            min_sublen: 2,
            redundancy_threshold: crate::analytics::UNIQUE_TASK_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierStats {
    pub tier: Tier,
    pub original: usize,
    pub filtered: usize,
    pub avg_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportStats {
    pub rows: Vec<TierStats>,
}

#[derive(Debug, Clone)]
pub struct ExportBundle {
    pub step: Vec<DatasetRecord>,
    pub sub_traj: Vec<DatasetRecord>,
    pub long_traj: Vec<DatasetRecord>,
    pub stats: ExportStats,
}

/// One trajectory per TERMINAL leaf and per EXPLORED leaf (the engine leaves
/// EXPLORED leaves only at the depth cap); PRUNED and CORRUPTED leaves are
/// excluded. Ordered by leaf id.
pub fn collect_trajectories(tree: &ExplorationTree) -> Vec<Trajectory> {
    let mut trajectories = Vec::new();
    for leaf in tree.leaves() {
        if !matches!(tree.nodes[&leaf].status, NodeStatus::Terminal | NodeStatus::Explored) {
            continue;
        }
        if let Some(trajectory) = trajectory_to_leaf(tree, leaf) {
            trajectories.push(trajectory);
        }
    }
    trajectories
}

fn trajectory_to_leaf(tree: &ExplorationTree, leaf: NodeId) -> Option<Trajectory> {
    let path = tree.path_nodes(leaf).ok()?;
    let node_ids: Vec<NodeId> = path[1..].to_vec();
    let mut steps = Vec::with_capacity(node_ids.len());
    for id in &node_ids {
        let node = &tree.nodes[id];
        steps.push(TrajectoryStep {
            tuple: node.incoming.clone()?,
            verification: node.verification.clone()?,
            observation_digest: node.observation_digest?,
        });
    }
    Some(Trajectory { tree_id: tree.tree_id.clone(), node_ids, steps, instruction: None })
}

/// Maximal contiguous SUCCESS runs of length >= `min_len`, each carrying the
/// run-level intent from the summary agent's sub-spans as its instruction.
pub fn extract_subtrajectories(
    trajectory: &Trajectory,
    min_len: usize,
    agents: &AgentSuite,
) -> Result<Vec<Trajectory>, PostprocError> {
    let summary = match agents.summary.summarize(trajectory) {
        Ok(s) => s,
        Err(AgentError::EmptySummary) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut subs = Vec::new();
    for span in &summary.sub_spans {
        if span.end - span.start + 1 < min_len {
            continue;
        }
        subs.push(Trajectory {
            tree_id: trajectory.tree_id.clone(),
            node_ids: trajectory.node_ids[span.start..=span.end].to_vec(),
            steps: trajectory.steps[span.start..=span.end].to_vec(),
            instruction: Some(span.intent.clone()),
        });
    }
    Ok(subs)
}

/// Order-preserving filter: kept iff the minimum dimension and the total both
/// clear the policy. Monotone in both policy fields.
pub fn quality_filter<T>(
    scored: Vec<(T, QualityScore)>,
    policy: &FilterPolicy,
) -> Vec<(T, QualityScore)> {
    scored.into_iter().filter(|(_, score)| policy.keeps(score)).collect()
}

fn history_prefix(trajectory: &Trajectory, upto: usize) -> Vec<HistoryEntry> {
    trajectory.steps[..upto]
        .iter()
        .map(|s| HistoryEntry {
            step_goal: s.tuple.step_goal.clone(),
            action_kind: s.tuple.action.kind,
            result_type: s.verification.result_type,
        })
        .collect()
}

/// Hindsight reasoning for every step: history is everything before the step,
/// the future is the SUCCESS step goals after it.
pub fn enrich(
    trajectory: &Trajectory,
    instruction: &str,
    agents: &AgentSuite,
) -> Result<Vec<ReasoningChain>, PostprocError> {
    let mut chains = Vec::with_capacity(trajectory.steps.len());
    for (t, step) in trajectory.steps.iter().enumerate() {
        let history = history_prefix(trajectory, t);
        let future: Vec<String> = trajectory.steps[t + 1..]
            .iter()
            .filter(|s| s.verification.is_success())
            .map(|s| s.tuple.step_goal.clone())
            .collect();
        let chain = agents.reasoning.synthesize_reasoning(&ReasoningInput {
            goal: instruction,
            observation_digest: step.observation_digest,
            tuple: &step.tuple,
            history: &history,
            future: &future,
        })?;
        chains.push(chain);
    }
    Ok(chains)
}

fn record_from(
    tier: Tier,
    instruction: &str,
    trajectory: &Trajectory,
    chains: Vec<ReasoningChain>,
) -> DatasetRecord {
    let steps = trajectory
        .steps
        .iter()
        .zip(chains)
        .map(|(s, reasoning)| RecordStep {
            reasoning,
            goal: s.tuple.step_goal.clone(),
            action: s.tuple.action.clone(),
            verification: s.verification.clone(),
        })
        .collect();
    let first = trajectory.node_ids.first().map_or(0, |n| n.0);
    let last = trajectory.node_ids.last().map_or(first, |n| n.0);
    DatasetRecord {
        tier,
        instruction: instruction.to_string(),
        steps,
        source: RecordSource { tree_id: trajectory.tree_id.clone(), node_span: [first, last] },
    }
}

struct TreeExport {
    step_original: usize,
    step_records: Vec<DatasetRecord>,
    long_original: usize,
    long_records: Vec<DatasetRecord>,
    sub_candidates: Vec<(String, DatasetRecord)>,
}

fn export_tree(
    tree: &ExplorationTree,
    agents: &AgentSuite,
    policies: &ExportPolicies,
) -> Result<TreeExport, PostprocError> {
    // Step tier: every executed-and-verified edge as a one-step record.
    // Execution/replay failures (CORRUPTED nodes, unverified edges) are the
    // filtering target; TERMINAL edges carry no execution and are skipped.
    let mut step_original = 0usize;
    let mut step_records = Vec::new();
    for node in tree.nodes.values() {
        let Some(tuple) = &node.incoming else { continue };
        if node.status == NodeStatus::Terminal {
            continue;
        }
        step_original += 1;
        if node.status == NodeStatus::Corrupted {
            continue;
        }
        let (Some(verification), Some(digest)) = (&node.verification, node.observation_digest)
        else {
            continue;
        };
        let path = tree.path_nodes(node.id).expect("valid tree");
        let history: Vec<HistoryEntry> = path[1..path.len() - 1]
            .iter()
            .map(|id| {
                let n = &tree.nodes[id];
                let t = n.incoming.as_ref().expect("non-root");
                HistoryEntry {
                    step_goal: t.step_goal.clone(),
                    action_kind: t.action.kind,
                    result_type: n
                        .verification
                        .as_ref()
                        .map_or(crate::model::ResultType::Success, |v| v.result_type),
                }
            })
            .collect();
        let chain = agents.reasoning.synthesize_reasoning(&ReasoningInput {
            goal: &tuple.step_goal,
            observation_digest: digest,
            tuple,
            history: &history,
            future: &[],
        })?;
        step_records.push(DatasetRecord {
            tier: Tier::Step,
            instruction: tuple.step_goal.clone(),
            steps: vec![RecordStep {
                reasoning: chain,
                goal: tuple.step_goal.clone(),
                action: tuple.action.clone(),
                verification: verification.clone(),
            }],
            source: RecordSource {
                tree_id: tree.tree_id.clone(),
                node_span: [node.id.0, node.id.0],
            },
        });
    }

    let trajectories = collect_trajectories(tree);

    // Long-trajectory tier: summarize, score, filter, enrich.
    let long_original = trajectories.len();
    let mut long_records = Vec::new();
    let mut scored = Vec::new();
    for trajectory in &trajectories {
        let summary = match agents.summary.summarize(trajectory) {
            Ok(s) => s,
            Err(AgentError::EmptySummary) => continue,
            Err(e) => return Err(e.into()),
        };
        let score = agents.evaluation.evaluate(trajectory, &summary.global_instruction)?;
        scored.push(((trajectory, summary.global_instruction), score));
    }
    for ((trajectory, instruction), _) in quality_filter(scored, &policies.filter) {
        let chains = enrich(trajectory, &instruction, agents)?;
        long_records.push(record_from(Tier::LongTraj, &instruction, trajectory, chains));
    }

    // Sub-trajectory tier: extraction now, forest-wide redundancy dedup later.
    let mut sub_candidates = Vec::new();
    for trajectory in &trajectories {
        for sub in extract_subtrajectories(trajectory, policies.min_sublen, agents)? {
            let intent = sub.instruction.clone().expect("span intent");
            let chains = enrich(&sub, &intent, agents)?;
            sub_candidates.push((intent.clone(), record_from(Tier::SubTraj, &intent, &sub, chains)));
        }
    }

    Ok(TreeExport { step_original, step_records, long_original, long_records, sub_candidates })
}

/// Builds the three dataset tiers over a forest plus Table-style statistics
/// (original and filtered counts, average steps per filtered record).
pub fn export(
    forest: &[ExplorationTree],
    agents: &AgentSuite,
    policies: &ExportPolicies,
) -> Result<ExportBundle, PostprocError> {
    #[cfg(feature = "parallel")]
    let per_tree: Result<Vec<TreeExport>, PostprocError> =
        forest.par_iter().map(|t| export_tree(t, agents, policies)).collect();
    #[cfg(not(feature = "parallel"))]
    let per_tree: Result<Vec<TreeExport>, PostprocError> =
        forest.iter().map(|t| export_tree(t, agents, policies)).collect();
    let per_tree = per_tree?;

    let mut step = Vec::new();
    let mut long_traj = Vec::new();
    let mut sub_candidates = Vec::new();
    let mut step_original = 0;
    let mut long_original = 0;
    for tree_export in per_tree {
        step_original += tree_export.step_original;
        long_original += tree_export.long_original;
        step.extend(tree_export.step_records);
        long_traj.extend(tree_export.long_records);
        sub_candidates.extend(tree_export.sub_candidates);
    }

    // Redundant-exploration drop: greedy streaming uniqueness over intents in
    // deterministic (tree, trajectory, span) order.
    let sub_original = sub_candidates.len();
    let intents: Vec<&str> = sub_candidates.iter().map(|(i, _)| i.as_str()).collect();
    let sub_traj: Vec<DatasetRecord> = if intents.is_empty() {
        Vec::new()
    } else {
        let report = unique_task_count(&intents, policies.redundancy_threshold)?;
        sub_candidates
            .into_iter()
            .zip(report.accepted)
            .filter_map(|((_, record), keep)| keep.then_some(record))
            .collect()
    };

    let avg = |records: &[DatasetRecord]| {
        if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.steps.len() as f64).sum::<f64>() / records.len() as f64
        }
    };
    let stats = ExportStats {
        rows: vec![
            TierStats {
                tier: Tier::Step,
                original: step_original,
                filtered: step.len(),
                avg_steps: avg(&step),
            },
            TierStats {
                tier: Tier::SubTraj,
                original: sub_original,
                filtered: sub_traj.len(),
                avg_steps: avg(&sub_traj),
            },
            TierStats {
                tier: Tier::LongTraj,
                original: long_original,
                filtered: long_traj.len(),
                avg_steps: avg(&long_traj),
            },
        ],
    };
    Ok(ExportBundle { step, sub_traj, long_traj, stats })
}

/// Line-delimited JSON, one record per line.
pub fn records_to_jsonl(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}
