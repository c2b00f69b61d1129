//! Deterministic node replay with RMS consistency gating.
//!
//! Real desktops cannot snapshot arbitrary states, so a node is revisited by
//! hard-resetting to the initial state and re-executing the recorded action
//! history. Each restoration is accepted only if the RMS pixel distance
//! between recorded and replayed observations stays within epsilon at the
//! checkpoints.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::env::{Environment, EnvironmentConfig};
use crate::model::{Action, ExplorationTree, NodeId, NodeStatus, Observation};

use super::{EngineError, ReplayPolicy};

/// Root-mean-square distance over all pixel values, intensities taken as
/// reals in [0, 255].
pub fn rms_diff(a: &Observation, b: &Observation) -> Result<f64, EngineError> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(EngineError::ShapeMismatch {
            a: (a.width, a.height, a.channels),
            b: (b.width, b.height, b.channels),
        });
    }
    let n = a.pixels.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum_sq: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok((sum_sq / n as f64).sqrt())
}

/// Content-addressed observation store: pixels are kept once per digest,
/// nodes refer to them by digest only.
#[derive(Clone, Default)]
pub struct ObsStore {
    inner: Arc<Mutex<HashMap<u64, Arc<Observation>>>>,
}

impl ObsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, obs: &Observation) -> u64 {
        let digest = obs.digest;
        self.inner.lock().unwrap().entry(digest).or_insert_with(|| Arc::new(obs.clone()));
        digest
    }

    pub fn get(&self, digest: u64) -> Option<Arc<Observation>> {
        self.inner.lock().unwrap().get(&digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Why a replay attempt did not produce a usable state.
#[derive(Debug, Clone)]
pub enum ReplayFailure {
    /// The RMS gate fired at some checkpoint.
    Gate { failing_depth: u32, delta: f64 },
    /// The environment transport failed; retryable.
    Transport(String),
}

/// Replay outcome report for a corrupted node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub node: NodeId,
    pub failing_depth: u32,
    pub delta: f64,
    pub detail: String,
}

/// Resets the environment and replays `actions` in order, comparing the
/// (possibly noise-perturbed) replayed view against each recorded checkpoint
/// observation at its depth and gating on `epsilon`. Returns the clean
/// observation at every depth, index 0 being the post-reset frame.
pub fn replay_path(
    env: &mut dyn Environment,
    config: &EnvironmentConfig,
    actions: &[Action],
    checkpoints: &[(u32, Arc<Observation>)],
    epsilon: f64,
) -> Result<Vec<Observation>, ReplayFailure> {
    let noisy = config.noise_amplitude > 0.0;
    let transport = |e: crate::env::EnvError| ReplayFailure::Transport(e.to_string());

    let mut frames = Vec::with_capacity(actions.len() + 1);
    let check_at = |env: &mut dyn Environment,
                        depth: u32,
                        clean: &Observation|
     -> Result<(), ReplayFailure> {
        for (check_depth, recorded) in checkpoints {
            if *check_depth != depth {
                continue;
            }
            let view = if noisy {
                env.render_noisy(u64::from(depth)).map_err(transport)?
            } else {
                clean.clone()
            };
            let delta = rms_diff(recorded, &view)
                .map_err(|e| ReplayFailure::Transport(e.to_string()))?;
            if delta > epsilon {
                return Err(ReplayFailure::Gate { failing_depth: depth, delta });
            }
        }
        Ok(())
    };

    let first = env.reset(config).map_err(transport)?;
    check_at(env, 0, &first)?;
    frames.push(first);

    for (i, action) in actions.iter().enumerate() {
        let obs = env.step(action).map_err(transport)?;
        check_at(env, (i + 1) as u32, &obs)?;
        frames.push(obs);
    }
    Ok(frames)
}

/// Restores a node's environment state: hard reset, replay of the full action
/// history, and RMS checks against the recorded observations at the parent
/// checkpoint and the node itself (where recordings exist). On success the
/// replayed final observation is returned; on a gate failure the node is
/// marked CORRUPTED and the report names the failing depth and delta.
/// Transport failures are retried up to `policy.max_restore_attempts`.
pub fn restore_node(
    tree: &mut ExplorationTree,
    node: NodeId,
    env: &mut dyn Environment,
    config: &EnvironmentConfig,
    policy: &ReplayPolicy,
    store: &ObsStore,
) -> Result<Observation, Box<CorruptionReport>> {
    let corrupt = |tree: &mut ExplorationTree, failing_depth: u32, delta: f64, detail: String| {
        if let Ok(n) = tree.node_mut(node) {
            n.status = NodeStatus::Corrupted;
        }
        Box::new(CorruptionReport { node, failing_depth, delta, detail })
    };

    let (actions, checkpoints, depth) = {
        let n = match tree.node(node) {
            Ok(n) => n,
            Err(e) => return Err(corrupt(tree, 0, f64::INFINITY, e.to_string())),
        };
        let depth = n.depth;
        // TERMINATE edges are tree-level bookkeeping with no environment
        // effect; a TERMINAL node's state is its parent's state.
        let actions: Vec<Action> = match tree.path_to(node) {
            Ok(a) => a
                .into_iter()
                .filter(|action| action.kind != crate::model::ActionKind::Terminate)
                .collect(),
            Err(e) => return Err(corrupt(tree, 0, f64::INFINITY, e.to_string())),
        };
        // Checkpoints are indexed by replayed frame. A TERMINATE edge renders
        // no frame, so a terminal node's own checkpoint lands on the parent
        // frame; only the final edge can be a TERMINATE, so every ancestor
        // frame index still equals its depth.
        let own_index = actions.len() as u32;
        let mut checkpoints = Vec::new();
        if let Some(parent) = tree.node(node).ok().and_then(|n| n.parent) {
            if let Some(obs) = tree
                .node(parent)
                .ok()
                .and_then(|p| p.observation_digest)
                .and_then(|d| store.get(d))
            {
                checkpoints.push((depth - 1, obs));
            }
        }
        if let Some(obs) =
            tree.node(node).ok().and_then(|n| n.observation_digest).and_then(|d| store.get(d))
        {
            checkpoints.push((own_index, obs));
        }
        (actions, checkpoints, depth)
    };

    let mut last_transport = String::new();
    for _ in 0..policy.max_restore_attempts.max(1) {
        match replay_path(env, config, &actions, &checkpoints, policy.epsilon) {
            Ok(frames) => return Ok(frames.into_iter().last().expect("reset frame present")),
            Err(ReplayFailure::Gate { failing_depth, delta }) => {
                return Err(corrupt(
                    tree,
                    failing_depth,
                    delta,
                    format!("rms gate exceeded at depth {failing_depth}: delta {delta:.3}"),
                ));
            }
            Err(ReplayFailure::Transport(e)) => last_transport = e,
        }
    }
    Err(corrupt(
        tree,
        depth,
        f64::INFINITY,
        format!("environment transport failed after retries: {last_transport}"),
    ))
}
