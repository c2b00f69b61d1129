//! Dual preference-pair mining from branching nodes.
//!
//! A branching node whose children lead to distinct final goals through
//! verified-successful actions yields two mirrored pairs: conditioned on one
//! goal its action wins and the sibling's loses, and vice versa. Pairs whose
//! would-be winner was not verified SUCCESS are discarded, then the pool is
//! capped per node and sampled depth-uniformly.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::HistoryEntry;
use crate::analytics::{pair_cosine, quantize, ActionSignature, UNIQUE_TASK_THRESHOLD};
use crate::model::{fnv1a64, Action, ExplorationTree, NodeId, ResultType, Trajectory};

#[derive(Debug, Error)]
pub enum DpoError {
    #[error("total_target must be >= 1, got {0}")]
    BadTarget(usize),
}

/// One DPO sample: in the context (digest, history), `win` is preferred over
/// `lose` for `goal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub goal: String,
    pub history: Vec<HistoryEntry>,
    pub digest: u64,
    pub win: Action,
    pub lose: Action,
    pub depth: u32,
    /// Forest-scoped source node id, `<tree_id>#<node_id>`.
    pub node: String,
}

/// A successful child branch of a branching node: its first action and the
/// final-goal instruction of a kept trajectory passing through it.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub child: NodeId,
    pub action: Action,
    pub goal: String,
    pub result: ResultType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchEntry {
    pub tree_id: String,
    pub node: NodeId,
    pub depth: u32,
    pub digest: u64,
    pub history: Vec<HistoryEntry>,
    pub branches: Vec<Branch>,
}

/// Geometry and thresholds for pair construction and sampling.
#[derive(Debug, Clone, Copy)]
pub struct PairPolicy {
    pub screen_w: u32,
    pub screen_h: u32,
    pub grid: u32,
    /// Branch goals with TF-IDF cosine at or above this are not "distinct".
    pub distinct_goal_threshold: f64,
    pub cap_per_node: usize,
    pub depth_buckets: usize,
}

impl Default for PairPolicy {
    fn default() -> Self {
        PairPolicy {
            screen_w: 64,
            screen_h: 64,
            grid: crate::analytics::DEFAULT_GRID,
            distinct_goal_threshold: UNIQUE_TASK_THRESHOLD,
            cap_per_node: 4,
            // One bucket per branching-policy phase.
            depth_buckets: 3,
        }
    }
}

fn signature_or_raw(action: &Action, policy: &PairPolicy) -> Result<ActionSignature, Action> {
    quantize(action, policy.screen_w, policy.screen_h, policy.grid).map_err(|_| action.clone())
}

fn actions_equivalent(a: &Action, b: &Action, policy: &PairPolicy) -> bool {
    match (signature_or_raw(a, policy), signature_or_raw(b, policy)) {
        (Ok(sa), Ok(sb)) => sa == sb,
        _ => a == b,
    }
}

/// Branching nodes with at least two children that (a) were verified SUCCESS
/// and (b) root a subtree containing a kept long trajectory, carrying that
/// trajectory's instruction as the branch goal. `kept` must hold instructions.
pub fn find_branch_nodes(tree: &ExplorationTree, kept: &[Trajectory]) -> Vec<BranchEntry> {
    // First kept instruction through each node, in kept order.
    let mut goal_through: BTreeMap<NodeId, String> = BTreeMap::new();
    for trajectory in kept {
        let Some(instruction) = &trajectory.instruction else { continue };
        if trajectory.tree_id != tree.tree_id {
            continue;
        }
        for id in &trajectory.node_ids {
            goal_through.entry(*id).or_insert_with(|| instruction.clone());
        }
    }

    let index = tree.child_index();
    let mut entries = Vec::new();
    for (node_id, children) in &index {
        if children.len() < 2 {
            continue;
        }
        let branches: Vec<Branch> = children
            .iter()
            .filter_map(|child_id| {
                let child = &tree.nodes[child_id];
                let verification = child.verification.as_ref()?;
                if verification.result_type != ResultType::Success {
                    return None;
                }
                let goal = goal_through.get(child_id)?.clone();
                Some(Branch {
                    child: *child_id,
                    action: child.incoming.as_ref()?.action.clone(),
                    goal,
                    result: verification.result_type,
                })
            })
            .collect();
        if branches.len() < 2 {
            continue;
        }
        let node = &tree.nodes[node_id];
        let Some(digest) = node.observation_digest else { continue };
        let path = tree.path_nodes(*node_id).expect("valid tree");
        let history: Vec<HistoryEntry> = path[1..]
            .iter()
            .map(|id| {
                let n = &tree.nodes[id];
                let tuple = n.incoming.as_ref().expect("non-root");
                HistoryEntry {
                    step_goal: tuple.step_goal.clone(),
                    action_kind: tuple.action.kind,
                    result_type: n
                        .verification
                        .as_ref()
                        .map_or(ResultType::Success, |v| v.result_type),
                }
            })
            .collect();
        entries.push(BranchEntry {
            tree_id: tree.tree_id.clone(),
            node: *node_id,
            depth: node.depth,
            digest,
            history,
            branches,
        });
    }
    entries
}

/// Dual pairs for every unordered branch pair with distinct goals. A pair is
/// emitted only when its winner was verified SUCCESS; mirrored pairs with
/// equivalent actions (same kind, grid cell, and text) are skipped.
pub fn build_pairs(entry: &BranchEntry, policy: &PairPolicy) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    let node_ref = format!("{}#{}", entry.tree_id, entry.node);
    for i in 0..entry.branches.len() {
        for j in (i + 1)..entry.branches.len() {
            let (a, b) = (&entry.branches[i], &entry.branches[j]);
            if pair_cosine(&a.goal, &b.goal) >= policy.distinct_goal_threshold {
                continue;
            }
            if actions_equivalent(&a.action, &b.action, policy) {
                continue;
            }
            let mut emit = |winner: &Branch, loser: &Branch| {
                if winner.result != ResultType::Success {
                    return;
                }
                pairs.push(PreferencePair {
                    goal: winner.goal.clone(),
                    history: entry.history.clone(),
                    digest: entry.digest,
                    win: winner.action.clone(),
                    lose: loser.action.clone(),
                    depth: entry.depth,
                    node: node_ref.clone(),
                });
            };
            emit(a, b);
            emit(b, a);
        }
    }
    pairs
}

/// All pairs of a forest in deterministic (tree, node, branch) order.
pub fn extract_pairs(
    forest: &[ExplorationTree],
    kept: &[Trajectory],
    policy: &PairPolicy,
) -> Vec<PreferencePair> {
    forest
        .iter()
        .flat_map(|tree| {
            find_branch_nodes(tree, kept)
                .into_iter()
                .flat_map(|entry| build_pairs(&entry, policy))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn pair_sort_key(pair: &PreferencePair) -> String {
    format!(
        "{}|{}|{}|{}",
        pair.node,
        pair.goal,
        serde_json::to_string(&pair.win).unwrap_or_default(),
        serde_json::to_string(&pair.lose).unwrap_or_default()
    )
}

/// Applies the per-node cap (seeded choice), then draws depth-uniformly:
/// pairs are stratified into equal-width depth buckets and taken round-robin
/// until `total_target` or exhaustion. Deterministic given the seed.
pub fn sample_pairs(
    pairs: &[PreferencePair],
    cap_per_node: usize,
    total_target: usize,
    seed: u64,
    depth_buckets: usize,
) -> Result<Vec<PreferencePair>, DpoError> {
    if total_target == 0 {
        return Err(DpoError::BadTarget(total_target));
    }
    let cap = cap_per_node.max(1);
    let buckets = depth_buckets.max(1);

    // Per-node cap with a seeded draw over a canonical ordering.
    let mut by_node: BTreeMap<String, Vec<PreferencePair>> = BTreeMap::new();
    for pair in pairs {
        by_node.entry(pair.node.clone()).or_default().push(pair.clone());
    }
    let mut capped = Vec::new();
    for (node, mut group) in by_node {
        group.sort_by_key(pair_sort_key);
        if group.len() > cap {
            let mut seed_buf = seed.to_le_bytes().to_vec();
            seed_buf.extend_from_slice(node.as_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&seed_buf));
            let mut picks: Vec<usize> =
                rand::seq::index::sample(&mut rng, group.len(), cap).into_vec();
            picks.sort_unstable();
            capped.extend(picks.into_iter().map(|i| group[i].clone()));
        } else {
            capped.extend(group);
        }
    }
    if capped.is_empty() {
        return Ok(Vec::new());
    }

    // Equal-width depth buckets over the observed range.
    let min_depth = capped.iter().map(|p| p.depth).min().expect("nonempty");
    let max_depth = capped.iter().map(|p| p.depth).max().expect("nonempty");
    let span = (max_depth - min_depth + 1) as usize;
    let bucket_of = |depth: u32| ((depth - min_depth) as usize * buckets / span).min(buckets - 1);

    let mut strata: Vec<Vec<PreferencePair>> = vec![Vec::new(); buckets];
    for pair in capped {
        let b = bucket_of(pair.depth);
        strata[b].push(pair);
    }
    for (b, stratum) in strata.iter_mut().enumerate() {
        stratum.sort_by_key(pair_sort_key);
        let mut seed_buf = seed.to_le_bytes().to_vec();
        seed_buf.extend_from_slice(&(b as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&seed_buf));
        // Seeded draw order within the bucket.
        for i in (1..stratum.len()).rev() {
            let j = rand::RngExt::random_range(&mut rng, 0..=i);
            stratum.swap(i, j);
        }
        stratum.reverse(); // pop() draws from the front of the shuffle
    }

    let mut sampled = Vec::with_capacity(total_target.min(strata.iter().map(Vec::len).sum()));
    while sampled.len() < total_target && strata.iter().any(|s| !s.is_empty()) {
        for stratum in &mut strata {
            if sampled.len() >= total_target {
                break;
            }
            if let Some(pair) = stratum.pop() {
                sampled.push(pair);
            }
        }
    }
    Ok(sampled)
}

/// Line-delimited JSON, one pair per line.
pub fn pairs_to_jsonl(pairs: &[PreferencePair]) -> String {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair).expect("pair serializes"));
        out.push('\n');
    }
    out
}
