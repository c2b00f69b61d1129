//! Tree-structured GUI trajectory synthesis.
//!
//! The crate explores a simulated (or remote) GUI environment as a tree whose
//! nodes are interface states and whose edges are actions, sharing trajectory
//! prefixes through deterministic replay. Explored trees are post-processed
//! into step/sub-trajectory/long-trajectory datasets, preference pairs mined
//! at branching nodes, and diversity/efficiency metrics.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`model`] — canonical data types (actions, observations, trees, trajectories)
//! - [`env`] — deterministic simulated GUI environment plus a remote wire adapter
//! - [`agents`] — pluggable exploration/verification/summary/evaluation/reasoning
//!   agents with scripted implementations and an HTTP gateway
//! - [`engine`] — the concurrent tree-building loop with replay gating and
//!   global prefix memory
//! - [`postproc`] — dataset tier construction and quality filtering
//! - [`dpo`] — dual preference-pair mining from branching nodes
//! - [`analytics`] — quantized-action Jaccard, TF-IDF task dedup, TTR,
//!   branching histograms

pub mod agents;
pub mod analytics;
pub mod dpo;
pub mod engine;
pub mod env;
pub mod model;
pub mod postproc;
