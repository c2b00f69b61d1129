//! The concurrent tree-building loop.
//!
//! A single coordinator owns the tree store and the global queue of
//! unexplored nodes; workers talk to it exclusively through messages (claim,
//! report-expansion, memory queries, re-enqueue). Claimed nodes are restored
//! by deterministic replay, extended by a local DFS that retains one child
//! per expansion and dispatches the remaining siblings back to the queue, and
//! finalized with a single status transition out of UNEXPLORED.
//!
//! With one worker and fixed seeds a run is bit-deterministic. With more
//! workers the set of produced nodes is unchanged (all agent decisions are
//! seeded from node-local data), though creation ids and ordering may differ;
//! [`canonicalize`](super::canonicalize) removes that difference.

use std::cell::Cell;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{AgentError, AgentSuite, ExplorationContext, HistoryEntry};
use crate::env::{Environment, EnvironmentConfig};
use crate::model::{
    fnv1a64, Action, ExplorationTree, ExplorationTuple, NodeId, NodeStatus, Observation,
    ResultType, VerificationResult,
};

use super::memory::{history_key, PrefixMemory};
use super::replay::{replay_path, ObsStore, ReplayFailure};
use super::stats::{CurvePoint, RunStats};
use super::{EngineConfig, EngineError};

/// Builds one environment instance per worker; instances must be cheap.
pub type EnvFactory = Arc<dyn Fn() -> Box<dyn Environment> + Send + Sync>;

/// Nodes that keep failing with transport errors are re-enqueued this many
/// times before being written off as corrupted.
const MAX_REQUEUES: u32 = 5;

pub struct RunOutcome {
    pub forest: Vec<ExplorationTree>,
    pub stats: RunStats,
    /// Content-addressed observations recorded during the run.
    pub store: ObsStore,
}

struct MemoryAdmit {
    depth: u32,
    history: String,
    goal: String,
}

struct ExecRecord {
    /// None only for the root's reset observation.
    verification: Option<VerificationResult>,
    observation: Observation,
    admit: Option<MemoryAdmit>,
}

enum ChildRole {
    Retained,
    Sibling,
    Terminal,
}

struct ChildSpec {
    tuple: ExplorationTuple,
    role: ChildRole,
}

enum Outcome {
    Expanded { children: Vec<ChildSpec>, retained_exec: Option<ExecRecord> },
    LeafAtMaxDepth,
    PrunedBudget,
    PrunedNoCandidates,
    Corrupted { failing_depth: u32, delta: f64, detail: String },
    Requeue { error: String },
}

struct NodeReport {
    node: NodeId,
    env_calls: u64,
    exec: Option<ExecRecord>,
    outcome: Outcome,
}

enum ReportReply {
    Continue { child: NodeId },
    Stop,
}

struct ClaimJob {
    node: NodeId,
    depth: u32,
    incoming: Option<ExplorationTuple>,
    /// Actions on the edges root -> parent.
    prefix_actions: Vec<Action>,
    /// Textual history of those edges (length = depth - 1, or 0 at the root).
    parent_history: Vec<HistoryEntry>,
    parent_obs: Option<Arc<Observation>>,
    own_obs: Option<Arc<Observation>>,
    own_verification: Option<VerificationResult>,
    trailing_at_parent: u32,
}

enum ClaimReply {
    Job(Box<ClaimJob>),
    Done,
}

enum Request {
    Claim { reply: Sender<ClaimReply> },
    Report { report: Box<NodeReport>, reply: Sender<ReportReply> },
    MemoryView { depth: u32, history: String, reply: Sender<Vec<String>> },
    FilterNovel { depth: u32, history: String, goals: Vec<String>, reply: Sender<Vec<bool>> },
}

struct Coordinator<'a> {
    tree: ExplorationTree,
    /// Claim order: shallowest first, then by creation id. Depth ordering
    /// keeps the marginal cost per trajectory non-increasing, which is what
    /// makes the cumulative expansions-per-trajectory curve monotone.
    queue: BTreeSet<(u32, NodeId)>,
    claimed: HashSet<NodeId>,
    expanded: HashSet<NodeId>,
    trailing: HashMap<NodeId, u32>,
    requeue_counts: HashMap<NodeId, u32>,
    parked: VecDeque<Sender<ClaimReply>>,
    store: ObsStore,
    memory: &'a mut PrefixMemory,
    memory_enabled: bool,
    stats: &'a mut RunStats,
    category: String,
    n_workers: usize,
    done_sent: usize,
    checkpoint: Option<(PathBuf, usize)>,
    checkpoint_error: Option<String>,
    propose_calls_this_tree: u64,
}

impl Coordinator<'_> {
    fn run_complete(&self) -> bool {
        self.queue.is_empty() && self.claimed.is_empty()
    }

    fn build_job(&self, node_id: NodeId) -> ClaimJob {
        let node = &self.tree.nodes[&node_id];
        let path = self.tree.path_nodes(node_id).expect("claimed node is attached");
        let prefix = if path.len() >= 2 { &path[1..path.len() - 1] } else { &[] };
        let prefix_actions = prefix
            .iter()
            .map(|id| self.tree.nodes[id].incoming.as_ref().expect("non-root").action.clone())
            .collect();
        let parent_history = prefix
            .iter()
            .map(|id| {
                let n = &self.tree.nodes[id];
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
        let parent_obs = node
            .parent
            .and_then(|p| self.tree.nodes[&p].observation_digest)
            .and_then(|d| self.store.get(d));
        let own_obs = node.observation_digest.and_then(|d| self.store.get(d));
        let trailing_at_parent =
            node.parent.map_or(0, |p| self.trailing.get(&p).copied().unwrap_or(0));
        ClaimJob {
            node: node_id,
            depth: node.depth,
            incoming: node.incoming.clone(),
            prefix_actions,
            parent_history,
            parent_obs,
            own_obs,
            own_verification: node.verification.clone(),
            trailing_at_parent,
        }
    }

    fn next_job(&mut self) -> Option<ClaimJob> {
        while let Some(&(depth, node_id)) = self.queue.first() {
            self.queue.remove(&(depth, node_id));
            let status = self.tree.nodes[&node_id].status;
            if !matches!(status, NodeStatus::Unexplored | NodeStatus::Root)
                || self.claimed.contains(&node_id)
            {
                continue;
            }
            self.claimed.insert(node_id);
            return Some(self.build_job(node_id));
        }
        None
    }

    /// Serves parked claims with fresh work, or winds the run down once the
    /// queue is empty and nothing is in flight.
    fn pump(&mut self) {
        if self.run_complete() {
            while let Some(reply) = self.parked.pop_front() {
                let _ = reply.send(ClaimReply::Done);
                self.done_sent += 1;
            }
            return;
        }
        while !self.parked.is_empty() {
            match self.next_job() {
                Some(job) => {
                    let reply = self.parked.pop_front().expect("checked nonempty");
                    let _ = reply.send(ClaimReply::Job(Box::new(job)));
                }
                None => break,
            }
        }
    }

    fn handle_claim(&mut self, reply: Sender<ClaimReply>) {
        if self.run_complete() {
            let _ = reply.send(ClaimReply::Done);
            self.done_sent += 1;
        } else if let Some(job) = self.next_job() {
            let _ = reply.send(ClaimReply::Job(Box::new(job)));
        } else {
            self.parked.push_back(reply);
        }
    }

    fn apply_exec(&mut self, node_id: NodeId, exec: ExecRecord) {
        let digest = self.store.insert(&exec.observation);
        let parent = self.tree.nodes[&node_id].parent;
        let trailing = match &exec.verification {
            Some(v) if v.is_success() => 0,
            Some(_) => parent.map_or(0, |p| self.trailing.get(&p).copied().unwrap_or(0)) + 1,
            None => 0,
        };
        self.trailing.insert(node_id, trailing);
        {
            let node = self.tree.node_mut(node_id).expect("reported node exists");
            node.observation_digest = Some(digest);
            if exec.verification.is_some() {
                node.verification = exec.verification;
            }
        }
        if parent.is_some() {
            self.stats.unique_expansions += 1;
        }
        if self.memory_enabled {
            if let Some(admit) = exec.admit {
                self.memory.admit(&self.category, admit.depth, &admit.history, &admit.goal);
            }
        }
    }

    /// Single status transition out of UNEXPLORED (the root keeps ROOT).
    fn finalize(&mut self, node_id: NodeId, status: NodeStatus) {
        self.claimed.remove(&node_id);
        let node = self.tree.node_mut(node_id).expect("reported node exists");
        debug_assert!(
            matches!(node.status, NodeStatus::Unexplored | NodeStatus::Root),
            "node {node_id} finalized twice"
        );
        if node.status != NodeStatus::Root {
            node.status = status;
        }
    }

    fn complete_trajectory(&mut self) {
        self.stats.trajectories += 1;
        self.stats.completion_curve.push(CurvePoint {
            trajectories: self.stats.trajectories,
            executed_edges: self.stats.unique_expansions,
        });
    }

    fn record_expansion(&mut self, node_id: NodeId) {
        if !self.expanded.insert(node_id) {
            self.stats.double_expansions += 1;
        }
        self.stats.propose_calls += 1;
        self.propose_calls_this_tree += 1;
        if let Some((_, every)) = &self.checkpoint {
            if self.propose_calls_this_tree % (*every as u64) == 0 {
                self.flush_checkpoint();
            }
        }
    }

    fn flush_checkpoint(&mut self) {
        let Some((dir, _)) = &self.checkpoint else { return };
        let path = dir.join(format!("{}.json", self.tree.tree_id));
        let canonical = super::canonicalize(&self.tree);
        let result = serde_json::to_vec_pretty(&canonical)
            .map_err(|e| e.to_string())
            .and_then(|bytes| std::fs::write(&path, bytes).map_err(|e| e.to_string()));
        if let Err(e) = result {
            self.checkpoint_error
                .get_or_insert_with(|| format!("checkpoint {}: {e}", path.display()));
        }
    }

    fn handle_report(&mut self, report: NodeReport, reply: Sender<ReportReply>) {
        self.stats.env_steps_including_replay += report.env_calls;
        let node_id = report.node;
        if let Some(exec) = report.exec {
            self.apply_exec(node_id, exec);
        }
        match report.outcome {
            Outcome::Expanded { children, retained_exec } => {
                self.record_expansion(node_id);
                self.finalize(node_id, NodeStatus::Explored);
                let parent_digest = self.tree.nodes[&node_id].observation_digest;
                let mut retained_child = None;
                for spec in children {
                    let status = match spec.role {
                        ChildRole::Terminal => NodeStatus::Terminal,
                        _ => NodeStatus::Unexplored,
                    };
                    let child_id = self
                        .tree
                        .add_child(node_id, spec.tuple, status)
                        .expect("parent exists");
                    match spec.role {
                        ChildRole::Terminal => {
                            let child = self.tree.node_mut(child_id).expect("just added");
                            child.verification = Some(VerificationResult::new(
                                ResultType::Success,
                                "termination acknowledged; the branch closes here",
                            ));
                            child.observation_digest = parent_digest;
                            self.complete_trajectory();
                        }
                        ChildRole::Sibling => {
                            let depth = self.tree.nodes[&child_id].depth;
                            self.queue.insert((depth, child_id));
                        }
                        ChildRole::Retained => retained_child = Some(child_id),
                    }
                }
                match retained_child {
                    Some(child_id) => {
                        self.claimed.insert(child_id);
                        if let Some(exec) = retained_exec {
                            self.apply_exec(child_id, exec);
                        }
                        let _ = reply.send(ReportReply::Continue { child: child_id });
                    }
                    None => {
                        let _ = reply.send(ReportReply::Stop);
                    }
                }
            }
            Outcome::LeafAtMaxDepth => {
                self.finalize(node_id, NodeStatus::Explored);
                self.complete_trajectory();
                let _ = reply.send(ReportReply::Stop);
            }
            Outcome::PrunedBudget => {
                self.finalize(node_id, NodeStatus::Pruned);
                let _ = reply.send(ReportReply::Stop);
            }
            Outcome::PrunedNoCandidates => {
                self.record_expansion(node_id);
                self.finalize(node_id, NodeStatus::Pruned);
                let _ = reply.send(ReportReply::Stop);
            }
            Outcome::Corrupted { failing_depth, delta, detail } => {
                self.stats.corrupted_nodes += 1;
                self.stats.corruption_reports.push(super::CorruptionReport {
                    node: node_id,
                    failing_depth,
                    delta,
                    detail,
                });
                self.finalize(node_id, NodeStatus::Corrupted);
                let _ = reply.send(ReportReply::Stop);
            }
            Outcome::Requeue { error } => {
                self.stats.requeues += 1;
                self.claimed.remove(&node_id);
                let count = self.requeue_counts.entry(node_id).or_default();
                *count += 1;
                if *count > MAX_REQUEUES {
                    self.stats.corrupted_nodes += 1;
                    self.stats.corruption_reports.push(super::CorruptionReport {
                        node: node_id,
                        failing_depth: self.tree.nodes[&node_id].depth,
                        delta: f64::INFINITY,
                        detail: format!("gave up after {MAX_REQUEUES} re-enqueues: {error}"),
                    });
                    self.finalize(node_id, NodeStatus::Corrupted);
                } else {
                    let depth = self.tree.nodes[&node_id].depth;
                    self.queue.insert((depth, node_id));
                }
                let _ = reply.send(ReportReply::Stop);
            }
        }
        self.pump();
    }

    fn serve(&mut self, rx: &Receiver<Request>) {
        while self.done_sent < self.n_workers {
            let Ok(request) = rx.recv() else { break };
            match request {
                Request::Claim { reply } => self.handle_claim(reply),
                Request::Report { report, reply } => self.handle_report(*report, reply),
                Request::MemoryView { depth, history, reply } => {
                    let view = if self.memory_enabled {
                        self.memory.view(&self.category, depth, &history)
                    } else {
                        Vec::new()
                    };
                    let _ = reply.send(view);
                }
                Request::FilterNovel { depth, history, goals, reply } => {
                    let flags = goals
                        .iter()
                        .map(|g| {
                            !self.memory_enabled
                                || self.memory.is_novel(&self.category, depth, &history, g)
                        })
                        .collect();
                    let _ = reply.send(flags);
                }
            }
        }
    }
}

struct WorkerShared {
    env_config: EnvironmentConfig,
    world_knowledge: String,
    config: EngineConfig,
    tree_seed: u64,
}

struct WorkerCtx<'a> {
    tx: &'a Sender<Request>,
    shared: &'a WorkerShared,
    agents: &'a AgentSuite,
    current: &'a Cell<NodeId>,
    env_calls: u64,
}

impl WorkerCtx<'_> {
    fn send_report(&mut self, node: NodeId, exec: Option<ExecRecord>, outcome: Outcome) -> ReportReply {
        let (reply_tx, reply_rx) = channel();
        let report =
            NodeReport { node, env_calls: std::mem::take(&mut self.env_calls), exec, outcome };
        if self.tx.send(Request::Report { report: Box::new(report), reply: reply_tx }).is_err() {
            return ReportReply::Stop;
        }
        reply_rx.recv().unwrap_or(ReportReply::Stop)
    }

    fn memory_view(&self, depth: u32, history: String) -> Vec<String> {
        let (reply_tx, reply_rx) = channel();
        if self.tx.send(Request::MemoryView { depth, history, reply: reply_tx }).is_err() {
            return Vec::new();
        }
        reply_rx.recv().unwrap_or_default()
    }

    fn filter_novel(&self, depth: u32, history: String, goals: Vec<String>) -> Vec<bool> {
        let n = goals.len();
        let (reply_tx, reply_rx) = channel();
        if self.tx.send(Request::FilterNovel { depth, history, goals, reply: reply_tx }).is_err() {
            return vec![true; n];
        }
        reply_rx.recv().unwrap_or_else(|_| vec![true; n])
    }
}

/// Seeded by tree seed plus node-local data only, so sibling execution order
/// is reproducible and independent of worker scheduling.
fn retain_rng(tree_seed: u64, digest: u64, depth: u32, history: &str) -> ChaCha8Rng {
    let mut buf = Vec::with_capacity(28);
    buf.extend_from_slice(&tree_seed.to_le_bytes());
    buf.extend_from_slice(&digest.to_le_bytes());
    buf.extend_from_slice(&depth.to_le_bytes());
    buf.extend_from_slice(&fnv1a64(history.as_bytes()).to_le_bytes());
    buf.extend_from_slice(b"retain");
    ChaCha8Rng::seed_from_u64(fnv1a64(&buf))
}

struct Restored {
    cur_obs: Observation,
    verification: Option<VerificationResult>,
    ship_exec: bool,
}

fn restore_claim(
    ctx: &mut WorkerCtx<'_>,
    env: &mut dyn Environment,
    job: &ClaimJob,
) -> Result<Restored, Box<Outcome>> {
    let shared = ctx.shared;
    let replay_policy = shared.config.replay;
    // The node's own edge is replayed (rather than first-executed) when it
    // already carries a recorded observation, and at the root where there is
    // no own edge.
    let already_recorded = job.own_obs.is_some() || job.incoming.is_none();

    let mut checkpoints = Vec::new();
    if let Some(parent) = &job.parent_obs {
        checkpoints.push((job.depth - 1, parent.clone()));
    }
    if let Some(own) = &job.own_obs {
        checkpoints.push((job.depth, own.clone()));
    }
    let mut actions = job.prefix_actions.clone();
    if already_recorded {
        if let Some(tuple) = &job.incoming {
            actions.push(tuple.action.clone());
        }
    }

    let mut last_transport = String::new();
    for _ in 0..replay_policy.max_restore_attempts.max(1) {
        match replay_path(env, &shared.env_config, &actions, &checkpoints, replay_policy.epsilon) {
            Ok(mut frames) => {
                ctx.env_calls += frames.len() as u64;
                if already_recorded {
                    return Ok(Restored {
                        cur_obs: frames.pop().expect("reset frame present"),
                        verification: job.own_verification.clone(),
                        ship_exec: job.own_obs.is_none(),
                    });
                }
                // First execution of the claimed node's own edge.
                let prev = frames.pop().expect("reset frame present");
                let tuple = job.incoming.as_ref().expect("non-root");
                match env.step(&tuple.action) {
                    Ok(cur_obs) => {
                        ctx.env_calls += 1;
                        match ctx.agents.verification.verify(&prev, tuple, &cur_obs) {
                            Ok(v) => {
                                return Ok(Restored {
                                    cur_obs,
                                    verification: Some(v),
                                    ship_exec: true,
                                })
                            }
                            Err(e) => {
                                return Err(Box::new(Outcome::Requeue { error: e.to_string() }))
                            }
                        }
                    }
                    Err(e) => last_transport = e.to_string(),
                }
            }
            Err(ReplayFailure::Gate { failing_depth, delta }) => {
                return Err(Box::new(Outcome::Corrupted {
                    failing_depth,
                    delta,
                    detail: format!(
                        "rms gate exceeded at depth {failing_depth}: delta {delta:.3}"
                    ),
                }));
            }
            Err(ReplayFailure::Transport(e)) => last_transport = e,
        }
    }
    Err(Box::new(Outcome::Corrupted {
        failing_depth: job.depth,
        delta: f64::INFINITY,
        detail: format!("environment transport failed after retries: {last_transport}"),
    }))
}

fn process_job(ctx: &mut WorkerCtx<'_>, env: &mut dyn Environment, job: ClaimJob) {
    ctx.current.set(job.node);
    let restored = match restore_claim(ctx, env, &job) {
        Ok(r) => r,
        Err(outcome) => {
            ctx.send_report(job.node, None, *outcome);
            return;
        }
    };

    let shared = ctx.shared;
    let prefix_length = shared.config.prefix_length;
    let mut pending_exec = restored.ship_exec.then(|| ExecRecord {
        verification: restored.verification.clone(),
        observation: restored.cur_obs.clone(),
        admit: job.incoming.as_ref().and_then(|tuple| {
            (job.depth >= 1 && job.depth - 1 < prefix_length).then(|| MemoryAdmit {
                depth: job.depth - 1,
                history: history_key(&job.parent_history),
                goal: tuple.step_goal.clone(),
            })
        }),
    });

    let mut node = job.node;
    let mut depth = job.depth;
    let mut cur_obs = restored.cur_obs;
    let mut history = job.parent_history;
    if let Some(tuple) = &job.incoming {
        history.push(HistoryEntry {
            step_goal: tuple.step_goal.clone(),
            action_kind: tuple.action.kind,
            result_type: restored
                .verification
                .as_ref()
                .map_or(ResultType::Success, |v| v.result_type),
        });
    }
    let mut trailing = match &restored.verification {
        Some(v) if v.is_success() => 0,
        Some(_) => job.trailing_at_parent + 1,
        None => 0,
    };
    let mut failed_last = restored.verification.as_ref().is_some_and(|v| !v.is_success());

    let stop = shared.config.stop();
    loop {
        ctx.current.set(node);
        if failed_last && trailing >= stop.max_consecutive_failures {
            ctx.send_report(node, pending_exec.take(), Outcome::PrunedBudget);
            return;
        }
        if depth >= stop.max_depth {
            ctx.send_report(node, pending_exec.take(), Outcome::LeafAtMaxDepth);
            return;
        }

        let hist_key = history_key(&history);
        let k_max = shared.config.policy.k_max(depth).expect("depth < max_depth") as usize;
        let view = ctx.memory_view(depth, hist_key.clone());
        let exploration_ctx = ExplorationContext {
            observation: cur_obs.clone(),
            history: history.clone(),
            world_knowledge: shared.world_knowledge.clone(),
            prefix_memory_view: view,
            k_max,
        };
        let mut tuples = match ctx.agents.exploration.propose(&exploration_ctx) {
            Ok(t) => t,
            Err(AgentError::Transport(e)) => {
                ctx.send_report(node, pending_exec.take(), Outcome::Requeue { error: e });
                return;
            }
            Err(e) => {
                ctx.send_report(
                    node,
                    pending_exec.take(),
                    Outcome::Requeue { error: e.to_string() },
                );
                return;
            }
        };
        // Contract enforcement against misbehaving agents: valid tuples only,
        // no repeated actions (siblings must stay distinguishable), at most
        // one TERMINATE, never more than k_max candidates.
        tuples.retain(|t| t.validate().is_ok());
        let mut seen_actions: Vec<Action> = Vec::new();
        let mut saw_terminate = false;
        tuples.retain(|t| {
            if t.action.kind == crate::model::ActionKind::Terminate {
                if saw_terminate || history.is_empty() {
                    return false;
                }
                saw_terminate = true;
            }
            if seen_actions.contains(&t.action) {
                return false;
            }
            seen_actions.push(t.action.clone());
            true
        });
        tuples.truncate(k_max);

        // Novelty is enforced on step goals; TERMINATE closes a branch and is
        // never admitted to memory, so it bypasses the filter.
        let checked: Vec<usize> = (0..tuples.len())
            .filter(|&i| tuples[i].action.kind != crate::model::ActionKind::Terminate)
            .collect();
        let flags = ctx.filter_novel(
            depth,
            hist_key.clone(),
            checked.iter().map(|&i| tuples[i].step_goal.clone()).collect(),
        );
        let rejected: HashSet<usize> = checked
            .iter()
            .zip(&flags)
            .filter_map(|(&i, &novel)| (!novel).then_some(i))
            .collect();
        let kept: Vec<ExplorationTuple> = tuples
            .into_iter()
            .enumerate()
            .filter_map(|(i, t)| (!rejected.contains(&i)).then_some(t))
            .collect();
        if kept.is_empty() {
            ctx.send_report(node, pending_exec.take(), Outcome::PrunedNoCandidates);
            return;
        }

        let mut rng = retain_rng(shared.tree_seed, cur_obs.digest, depth, &hist_key);
        let retained_idx = rng.random_range(0..kept.len());
        let retained_is_terminate =
            kept[retained_idx].action.kind == crate::model::ActionKind::Terminate;

        let children: Vec<ChildSpec> = kept
            .into_iter()
            .enumerate()
            .map(|(i, tuple)| {
                let role = if tuple.action.kind == crate::model::ActionKind::Terminate {
                    ChildRole::Terminal
                } else if i == retained_idx {
                    ChildRole::Retained
                } else {
                    ChildRole::Sibling
                };
                ChildSpec { tuple, role }
            })
            .collect();

        if retained_is_terminate {
            ctx.send_report(
                node,
                pending_exec.take(),
                Outcome::Expanded { children, retained_exec: None },
            );
            return;
        }

        let retained_tuple = children[retained_idx].tuple.clone();
        let prev = cur_obs;
        let next_obs = match env.step(&retained_tuple.action) {
            Ok(o) => {
                ctx.env_calls += 1;
                o
            }
            Err(e) => {
                ctx.send_report(
                    node,
                    pending_exec.take(),
                    Outcome::Requeue { error: e.to_string() },
                );
                return;
            }
        };
        let verification = match ctx.agents.verification.verify(&prev, &retained_tuple, &next_obs)
        {
            Ok(v) => v,
            Err(e) => {
                ctx.send_report(
                    node,
                    pending_exec.take(),
                    Outcome::Requeue { error: e.to_string() },
                );
                return;
            }
        };
        let retained_exec = ExecRecord {
            verification: Some(verification.clone()),
            observation: next_obs.clone(),
            admit: (depth < prefix_length).then(|| MemoryAdmit {
                depth,
                history: hist_key.clone(),
                goal: retained_tuple.step_goal.clone(),
            }),
        };
        let reply = ctx.send_report(
            node,
            pending_exec.take(),
            Outcome::Expanded { children, retained_exec: Some(retained_exec) },
        );
        match reply {
            ReportReply::Continue { child } => {
                node = child;
                ctx.current.set(child);
                history.push(HistoryEntry {
                    step_goal: retained_tuple.step_goal.clone(),
                    action_kind: retained_tuple.action.kind,
                    result_type: verification.result_type,
                });
                depth += 1;
                failed_last = !verification.is_success();
                trailing = if verification.is_success() { 0 } else { trailing + 1 };
                cur_obs = next_obs;
            }
            ReportReply::Stop => return,
        }
    }
}

fn worker_loop(
    tx: Sender<Request>,
    shared: Arc<WorkerShared>,
    env_factory: EnvFactory,
    agents: AgentSuite,
) {
    loop {
        let (reply_tx, reply_rx) = channel();
        if tx.send(Request::Claim { reply: reply_tx }).is_err() {
            return;
        }
        let job = match reply_rx.recv() {
            Ok(ClaimReply::Job(job)) => job,
            Ok(ClaimReply::Done) | Err(_) => return,
        };

        let current = Cell::new(job.node);
        let result = catch_unwind(AssertUnwindSafe(|| {
            let mut ctx = WorkerCtx {
                tx: &tx,
                shared: &shared,
                agents: &agents,
                current: &current,
                env_calls: 0,
            };
            let mut env = env_factory();
            process_job(&mut ctx, env.as_mut(), *job);
        }));
        if result.is_err() {
            // The claimed node reverts to UNEXPLORED and the run continues.
            let (reply_tx, reply_rx) = channel();
            let report = NodeReport {
                node: current.get(),
                env_calls: 0,
                exec: None,
                outcome: Outcome::Requeue { error: "worker panic".to_string() },
            };
            if tx.send(Request::Report { report: Box::new(report), reply: reply_tx }).is_err() {
                return;
            }
            let _ = reply_rx.recv();
        }
    }
}

fn run_tree(
    config: &EngineConfig,
    env_factory: &EnvFactory,
    agents: &AgentSuite,
    tree_index: usize,
    memory: &mut PrefixMemory,
    stats: &mut RunStats,
    store: &ObsStore,
) -> Result<ExplorationTree, EngineError> {
    let mut seed_buf = Vec::with_capacity(16);
    seed_buf.extend_from_slice(&config.seed.to_le_bytes());
    seed_buf.extend_from_slice(&(tree_index as u64).to_le_bytes());
    let tree_seed = fnv1a64(&seed_buf);

    let tree_id = format!("tree_{tree_index:03}");
    let tree = ExplorationTree::new(tree_id, &config.category, tree_seed);

    let env_config = EnvironmentConfig {
        category: config.category.clone(),
        asset_manifest: config.assets.clone(),
        seed: tree_seed,
        noise_amplitude: config.noise_amplitude,
        render: config.render,
    };
    env_config.validate()?;

    let shared = Arc::new(WorkerShared {
        env_config,
        world_knowledge: config.world_knowledge.clone(),
        config: config.clone(),
        tree_seed,
    });

    let root = tree.root_id();
    let mut coordinator = Coordinator {
        tree,
        queue: BTreeSet::from([(0, root)]),
        claimed: HashSet::new(),
        expanded: HashSet::new(),
        trailing: HashMap::new(),
        requeue_counts: HashMap::new(),
        parked: VecDeque::new(),
        store: store.clone(),
        memory,
        memory_enabled: config.memory_enabled,
        stats,
        category: config.category.clone(),
        n_workers: config.n_workers,
        done_sent: 0,
        checkpoint: config.checkpoint.clone(),
        checkpoint_error: None,
        propose_calls_this_tree: 0,
    };

    let (tx, rx) = channel::<Request>();
    std::thread::scope(|scope| {
        for _ in 0..config.n_workers {
            let tx = tx.clone();
            let shared = shared.clone();
            let env_factory = env_factory.clone();
            let agents = agents.clone();
            scope.spawn(move || worker_loop(tx, shared, env_factory, agents));
        }
        drop(tx);
        coordinator.serve(&rx);
    });

    if coordinator.checkpoint.is_some() {
        coordinator.flush_checkpoint();
    }
    if let Some(e) = coordinator.checkpoint_error.take() {
        return Err(EngineError::Checkpoint(e));
    }
    Ok(coordinator.tree)
}

/// Explores `config.trees` trees sequentially (prefix memory accumulates
/// across them), each built by `config.n_workers` workers over a shared
/// queue.
pub fn run_exploration(
    config: &EngineConfig,
    env_factory: EnvFactory,
    agents: &AgentSuite,
) -> Result<RunOutcome, EngineError> {
    config.validate()?;
    let mut memory = PrefixMemory::new(
        config.prefix_length,
        config.similarity_threshold,
        config.similarity_mode,
    );
    let mut stats = RunStats::default();
    let store = ObsStore::new();
    let mut forest = Vec::with_capacity(config.trees);
    for tree_index in 0..config.trees {
        let tree =
            run_tree(config, &env_factory, agents, tree_index, &mut memory, &mut stats, &store)?;
        debug_assert!(tree.validate().is_empty(), "engine produced an invalid tree");
        forest.push(tree);
    }
    stats.trees = config.trees;
    Ok(RunOutcome { forest, stats, store })
}
