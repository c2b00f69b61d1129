//! End-to-end exploration runs against the simulated environments.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use trajtree_core::agents::{
    AgentError, AgentSuite, ExplorationAgent, ExplorationContext, Persona, ScriptedExplorer,
};
use trajtree_core::engine::{
    canonicalize, exploration_stats, node_signatures, restore_node, run_exploration,
    trajectory_leaf_count, BranchingPolicy, EngineConfig, EnvFactory, ObsStore, ReplayPolicy,
    RunOutcome,
};
use trajtree_core::env::{chain_app, dead_region_app, hub_app, SimAppSpec, SimEnvironment};
use trajtree_core::model::{ExplorationTuple, NodeStatus};

fn sim_factory(category: &'static str, spec: SimAppSpec) -> EnvFactory {
    Arc::new(move || Box::new(SimEnvironment::new(category, spec.clone())))
}

fn chain_config() -> EngineConfig {
    let mut config = EngineConfig::new("chain", 11);
    config.policy = BranchingPolicy::new(5, (1, 2), (1, 1, 1));
    config
}

#[test]
fn single_widget_chain_explores_one_path() {
    let spec = chain_app(4, 64, 64);
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 11);
    let outcome =
        run_exploration(&chain_config(), sim_factory("chain", spec), &agents).unwrap();

    let tree = &outcome.forest[0];
    assert!(tree.validate().is_empty());

    let explored: Vec<_> =
        tree.nodes.values().filter(|n| n.status == NodeStatus::Explored).collect();
    let terminal: Vec<_> =
        tree.nodes.values().filter(|n| n.status == NodeStatus::Terminal).collect();
    assert_eq!(explored.len(), 4, "one EXPLORED node per chain stage");
    assert_eq!(terminal.len(), 1, "the widget-less final stage terminates the branch");
    assert_eq!(tree.nodes.len(), 6, "root + 4 explored + terminal");

    let stats = exploration_stats(&outcome.forest).unwrap();
    assert_eq!(stats.trajectories, 1);
    assert_eq!(stats.unique_expansions, 4);
    assert_eq!(stats.avg_expansions_per_trajectory, 4.0);
    assert_eq!(outcome.stats.double_expansions, 0);
}

#[test]
fn single_worker_runs_are_byte_deterministic() {
    let spec = hub_app(6, 3, 64, 64);
    let mut config = EngineConfig::new("hub", 42);
    config.policy = BranchingPolicy::new(4, (1, 2), (3, 2, 1));
    config.trees = 2;
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 42);

    let run = || {
        let outcome =
            run_exploration(&config, sim_factory("hub", spec.clone()), &agents).unwrap();
        outcome
            .forest
            .iter()
            .map(|t| serde_json::to_string(t).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn worker_count_does_not_change_the_node_set() {
    let spec = hub_app(8, 4, 64, 64);
    let mut config = EngineConfig::new("hub", 7);
    config.policy = BranchingPolicy::new(5, (2, 3), (3, 2, 1));
    config.trees = 3;
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 7);

    let run = |workers: usize| {
        let mut c = config.clone();
        c.n_workers = workers;
        run_exploration(&c, sim_factory("hub", spec.clone()), &agents).unwrap()
    };
    let single = run(1);
    let multi = run(4);

    assert_eq!(multi.stats.double_expansions, 0);
    for (a, b) in single.forest.iter().zip(&multi.forest) {
        assert!(b.validate().is_empty());
        assert_eq!(node_signatures(a), node_signatures(b));
        assert_eq!(
            serde_json::to_string(&canonicalize(a)).unwrap(),
            serde_json::to_string(&canonicalize(b)).unwrap(),
            "canonical serialization must be worker-count independent"
        );
    }
}

#[test]
fn dead_region_is_pruned_after_consecutive_failures() {
    let spec = dead_region_app();
    let mut config = EngineConfig::new("trap", 3);
    config.policy = BranchingPolicy::new(6, (2, 4), (2, 1, 1));
    config.max_consecutive_failures = 3;
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 3);
    let outcome = run_exploration(&config, sim_factory("trap", spec), &agents).unwrap();

    let tree = &outcome.forest[0];
    assert!(tree.validate().is_empty());
    let pruned: Vec<_> = tree.nodes.values().filter(|n| n.status == NodeStatus::Pruned).collect();
    assert!(!pruned.is_empty(), "self-looping widgets must exhaust the failure budget");
    assert!(pruned.iter().all(|n| n.depth == 3), "a branch dies after exactly 3 NO_CHANGE steps");
    assert!(
        tree.nodes.values().all(|n| n.status != NodeStatus::Terminal),
        "nothing terminates cleanly in the trap"
    );
    assert!(exploration_stats(&outcome.forest).is_err(), "no trajectories -> undefined average");
}

#[test]
fn width_table_bounds_node_count() {
    // widths 2/1/1 with D=3: at most 1 + 2 + 2 + 2 = 7 non-root nodes.
    let spec = hub_app(8, 4, 64, 64);
    let mut config = EngineConfig::new("hub", 5);
    config.policy = BranchingPolicy::new(3, (1, 2), (2, 1, 1));
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 5);
    let outcome = run_exploration(&config, sim_factory("hub", spec), &agents).unwrap();

    let tree = &outcome.forest[0];
    assert!(tree.nodes.len() - 1 <= 7);
    let index = tree.child_index();
    for node in tree.nodes.values() {
        if node.depth < config.policy.max_depth {
            let width = index.get(&node.id).map_or(0, Vec::len) as u32;
            assert!(width <= config.policy.k_max(node.depth).unwrap());
        }
    }
}

struct PanicOnce {
    inner: ScriptedExplorer,
    fired: AtomicUsize,
}

impl ExplorationAgent for PanicOnce {
    fn propose(&self, ctx: &ExplorationContext) -> Result<Vec<ExplorationTuple>, AgentError> {
        if self.fired.fetch_add(1, Ordering::SeqCst) == 1 {
            panic!("injected agent failure");
        }
        self.inner.propose(ctx)
    }
}

#[test]
fn worker_panic_requeues_the_claim_and_the_run_continues() {
    let spec = chain_app(3, 64, 64);
    let mut config = chain_config();
    config.policy = BranchingPolicy::new(4, (1, 2), (1, 1, 1));
    let mut agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 11);
    agents.exploration = Arc::new(PanicOnce {
        inner: ScriptedExplorer::new(Arc::new(spec.clone()), Persona::Diverse, 11),
        fired: AtomicUsize::new(0),
    });

    let outcome = run_exploration(&config, sim_factory("chain", spec), &agents).unwrap();
    let tree = &outcome.forest[0];
    assert!(tree.validate().is_empty());
    assert!(outcome.stats.requeues >= 1, "the panicked claim must be re-enqueued");
    assert_eq!(trajectory_leaf_count(tree), 1, "the run still completes its trajectory");
}

struct CountingExplorer {
    inner: ScriptedExplorer,
    seen: Mutex<std::collections::HashMap<u64, usize>>,
}

impl ExplorationAgent for CountingExplorer {
    fn propose(&self, ctx: &ExplorationContext) -> Result<Vec<ExplorationTuple>, AgentError> {
        // One expansion per node: the (digest, history) context identifies the
        // node within a tree.
        let mut key = ctx.observation.digest.to_le_bytes().to_vec();
        for entry in &ctx.history {
            key.extend_from_slice(entry.step_goal.as_bytes());
            key.push(b'|');
        }
        let key = trajtree_core::model::fnv1a64(&key);
        *self.seen.lock().unwrap().entry(key).or_insert(0) += 1;
        self.inner.propose(ctx)
    }
}

#[test]
fn each_node_is_expanded_at_most_once_under_concurrency() {
    let spec = hub_app(10, 4, 64, 64);
    let mut config = EngineConfig::new("hub", 13);
    config.policy = BranchingPolicy::new(5, (2, 3), (3, 2, 1));
    config.n_workers = 8;
    let counter = Arc::new(CountingExplorer {
        inner: ScriptedExplorer::new(Arc::new(spec.clone()), Persona::Diverse, 13),
        seen: Mutex::new(Default::default()),
    });
    let mut agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 13);
    agents.exploration = counter.clone();

    let outcome = run_exploration(&config, sim_factory("hub", spec), &agents).unwrap();
    assert_eq!(outcome.stats.double_expansions, 0);
    let seen = counter.seen.lock().unwrap();
    assert!(seen.values().all(|&count| count == 1), "a context was proposed twice");
    assert_eq!(seen.len() as u64, outcome.stats.propose_calls);
}

#[test]
fn memory_forces_divergence_across_trees() {
    let spec = hub_app(12, 3, 64, 64);
    let base = {
        let mut c = EngineConfig::new("hub", 99);
        c.policy = BranchingPolicy::new(4, (1, 2), (2, 1, 1));
        c.trees = 3;
        c.prefix_length = 2;
        c
    };
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Biased, 99);

    let root_goals = |outcome: &RunOutcome| -> Vec<std::collections::BTreeSet<String>> {
        outcome
            .forest
            .iter()
            .map(|tree| {
                let index = tree.child_index();
                index[&tree.root_id()]
                    .iter()
                    .map(|id| tree.nodes[id].incoming.as_ref().unwrap().step_goal.clone())
                    .collect()
            })
            .collect()
    };

    let mut with_memory = base.clone();
    with_memory.memory_enabled = true;
    let enabled =
        run_exploration(&with_memory, sim_factory("hub", spec.clone()), &agents).unwrap();
    let goals = root_goals(&enabled);
    for i in 1..goals.len() {
        for j in 0..i {
            assert!(
                goals[i].is_disjoint(&goals[j]),
                "novelty filtering must keep executed root goals disjoint across trees: {:?} vs {:?}",
                goals[i],
                goals[j]
            );
        }
    }

    let mut without = base.clone();
    without.memory_enabled = false;
    let disabled = run_exploration(&without, sim_factory("hub", spec), &agents).unwrap();
    let goals = root_goals(&disabled);
    let any_overlap =
        (1..goals.len()).any(|i| (0..i).any(|j| !goals[i].is_disjoint(&goals[j])));
    assert!(any_overlap, "the biased persona should repeat prominent goals without memory");
}

#[test]
fn fully_memorized_root_prunes_the_next_tree() {
    // Tree 1 executes both root widgets and admits their goals; tree 2's
    // candidates are all filtered at the root, leaving a bare pruned tree.
    let spec = trajtree_core::env::two_panel_app();
    let mut config = EngineConfig::new("apps", 21);
    config.policy = BranchingPolicy::new(3, (1, 2), (2, 1, 1));
    config.trees = 2;
    config.prefix_length = 3;
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 21);
    let outcome = run_exploration(&config, sim_factory("apps", spec), &agents).unwrap();

    let first = &outcome.forest[0];
    assert!(first.nodes.len() > 1);
    let second = &outcome.forest[1];
    assert_eq!(second.nodes.len(), 1, "every root candidate should fail the novelty check");
    assert_eq!(second.nodes[&trajtree_core::model::NodeId(0)].status, NodeStatus::Root);
    assert!(second.validate().is_empty());
}

#[test]
fn restore_explored_node_reproduces_recorded_digests() {
    let spec = chain_app(4, 64, 64);
    let config = chain_config();
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 11);
    let outcome =
        run_exploration(&config, sim_factory("chain", spec.clone()), &agents).unwrap();
    let mut tree = outcome.forest[0].clone();

    let explored: Vec<_> = tree
        .nodes
        .values()
        .filter(|n| n.status == NodeStatus::Explored)
        .map(|n| (n.id, n.observation_digest.unwrap()))
        .collect();
    let env_config = {
        let mut c = trajtree_core::env::EnvironmentConfig::new("chain", tree.seed);
        c.render = config.render;
        c
    };
    for (id, digest) in explored {
        let mut env = SimEnvironment::new("chain", spec.clone());
        let obs = restore_node(
            &mut tree,
            id,
            &mut env,
            &env_config,
            &ReplayPolicy::default(),
            &outcome.store,
        )
        .expect("noise-free replay is exact");
        assert_eq!(obs.digest, digest);
    }
}

#[test]
fn restore_under_heavy_noise_marks_corruption() {
    let spec = chain_app(4, 64, 64);
    let config = chain_config();
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 11);
    let outcome =
        run_exploration(&config, sim_factory("chain", spec.clone()), &agents).unwrap();
    let mut tree = outcome.forest[0].clone();

    let deepest = tree
        .nodes
        .values()
        .filter(|n| n.status == NodeStatus::Explored)
        .max_by_key(|n| n.depth)
        .unwrap()
        .id;
    let mut env_config = trajtree_core::env::EnvironmentConfig::new("chain", tree.seed);
    env_config.noise_amplitude = 8.0;
    let mut env = SimEnvironment::new("chain", spec);
    let report = restore_node(
        &mut tree,
        deepest,
        &mut env,
        &env_config,
        &ReplayPolicy::default(),
        &outcome.store,
    )
    .expect_err("RMS ~8 must fail the 5.0 gate");
    assert!(report.delta > 5.0);
    assert_eq!(tree.nodes[&deepest].status, NodeStatus::Corrupted);
}

#[test]
fn empty_store_restore_is_gate_free_but_replays() {
    // Restoring a node with no recorded observations still replays and
    // returns the final frame.
    let spec = chain_app(2, 64, 64);
    let config = chain_config();
    let agents = AgentSuite::scripted(Arc::new(spec.clone()), Persona::Diverse, 11);
    let outcome =
        run_exploration(&config, sim_factory("chain", spec.clone()), &agents).unwrap();
    let mut tree = outcome.forest[0].clone();
    let leaf = *tree.nodes.keys().last().unwrap();
    let env_config = trajtree_core::env::EnvironmentConfig::new("chain", tree.seed);
    let mut env = SimEnvironment::new("chain", spec);
    let obs = restore_node(
        &mut tree,
        leaf,
        &mut env,
        &env_config,
        &ReplayPolicy::default(),
        &ObsStore::new(),
    )
    .unwrap();
    assert!(obs.pixel_count() > 0);
}
