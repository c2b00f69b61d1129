//! Diversity and efficiency metrics over explored trees and goal corpora:
//! grid-quantized action signatures with pairwise Jaccard redundancy,
//! TF-IDF unique-task counting, type-token ratio, and branching histograms.

mod tfidf;

pub use tfidf::{
    cosine, max_cosine_to_corpus, normalize_text, pair_cosine, tokenize, SparseVec, TfIdfModel,
};

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Action, ActionKind, ExplorationTree, NodeStatus};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default cosine-similarity threshold for task uniqueness and goal
/// distinctness tests.
pub const UNIQUE_TASK_THRESHOLD: f64 = 0.65;

/// Default spatial quantization grid.
pub const DEFAULT_GRID: u32 = 20;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("coordinate ({x}, {y}) outside screen {width}x{height}")]
    CoordinateOutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("empty sample")]
    EmptySample,
    #[error("redundancy matrix needs at least 2 trees, got {0}")]
    TooFewTrees(usize),
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

/// Spatially quantized action identity: two actions are "the same" when they
/// match in kind, grid cell, and normalized input text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSignature {
    pub kind: ActionKind,
    pub cell: (u32, u32),
    pub text: String,
}

/// Maps an action onto a `grid`x`grid` signature. Coordinate-free actions get
/// cell (0, 0); their kind and text keep them distinguishable.
pub fn quantize(
    action: &Action,
    screen_w: u32,
    screen_h: u32,
    grid: u32,
) -> Result<ActionSignature, AnalyticsError> {
    let cell = match action.coordinate {
        Some((x, y)) => {
            if x >= screen_w || y >= screen_h {
                return Err(AnalyticsError::CoordinateOutOfBounds {
                    x,
                    y,
                    width: screen_w,
                    height: screen_h,
                });
            }
            (
                (u64::from(x) * u64::from(grid) / u64::from(screen_w)) as u32,
                (u64::from(y) * u64::from(grid) / u64::from(screen_h)) as u32,
            )
        }
        None => (0, 0),
    };
    let text = action.text.as_deref().map(normalize_text).unwrap_or_default();
    Ok(ActionSignature { kind: action.kind, cell, text })
}

/// |A ∩ B| / |A ∪ B|, defined as 0 when both sets are empty.
pub fn jaccard(a: &HashSet<ActionSignature>, b: &HashSet<ActionSignature>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Unique signatures of a tree's executed edges. TERMINAL edges are tree-level
/// bookkeeping, not executed transitions, and are excluded.
pub fn executed_signatures(
    tree: &ExplorationTree,
    screen_w: u32,
    screen_h: u32,
    grid: u32,
) -> Result<HashSet<ActionSignature>, AnalyticsError> {
    let mut set = HashSet::new();
    for node in tree.nodes.values() {
        if node.verification.is_none() || node.status == NodeStatus::Terminal {
            continue;
        }
        if let Some(tuple) = &node.incoming {
            set.insert(quantize(&tuple.action, screen_w, screen_h, grid)?);
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub matrix: Vec<Vec<f64>>,
    pub mean_off_diagonal: f64,
}

/// Pairwise Jaccard similarity of the trees' unique executed-action sets.
/// Diagonal entries are pinned to 1.0; the mean is over i < j.
pub fn redundancy_matrix(
    trees: &[ExplorationTree],
    screen_w: u32,
    screen_h: u32,
    grid: u32,
) -> Result<RedundancyReport, AnalyticsError> {
    if trees.len() < 2 {
        return Err(AnalyticsError::TooFewTrees(trees.len()));
    }
    let sets = map_trees(trees, |t| executed_signatures(t, screen_w, screen_h, grid))?;

    let n = sets.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        matrix[i][i] = 1.0;
        for j in (i + 1)..n {
            let value = jaccard(&sets[i], &sets[j]);
            matrix[i][j] = value;
            matrix[j][i] = value;
            sum += value;
            pairs += 1;
        }
    }
    Ok(RedundancyReport { matrix, mean_off_diagonal: sum / pairs as f64 })
}

#[cfg(feature = "parallel")]
fn map_trees<T: Send, E: Send>(
    trees: &[ExplorationTree],
    f: impl Fn(&ExplorationTree) -> Result<T, E> + Send + Sync,
) -> Result<Vec<T>, E> {
    trees.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trees<T, E>(
    trees: &[ExplorationTree],
    f: impl Fn(&ExplorationTree) -> Result<T, E>,
) -> Result<Vec<T>, E> {
    trees.iter().map(f).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniqueTaskReport {
    /// Cumulative unique count after each arrival.
    pub cumulative: Vec<usize>,
    /// Whether each arrival was accepted as unique.
    pub accepted: Vec<bool>,
    /// Indices skipped because they tokenize to nothing.
    pub skipped: Vec<usize>,
}

/// Greedy streaming uniqueness: a description counts as unique iff its cosine
/// similarity to every previously accepted description is below `threshold`.
/// The TF-IDF model is fit on the full corpus first.
pub fn unique_task_count<S: AsRef<str>>(
    descriptions: &[S],
    threshold: f64,
) -> Result<UniqueTaskReport, AnalyticsError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AnalyticsError::BadThreshold(threshold));
    }
    let model = TfIdfModel::fit(descriptions);
    let mut cumulative = Vec::with_capacity(descriptions.len());
    let mut accepted = vec![false; descriptions.len()];
    let mut skipped = Vec::new();
    let mut unique_idx: Vec<usize> = Vec::new();

    for (i, document) in model.documents.iter().enumerate() {
        match document {
            None => skipped.push(i),
            Some(vec) => {
                let max_sim = unique_idx
                    .iter()
                    .map(|&u| cosine(vec, model.documents[u].as_ref().unwrap()))
                    .fold(0.0, f64::max);
                if max_sim < threshold {
                    unique_idx.push(i);
                    accepted[i] = true;
                }
            }
        }
        cumulative.push(unique_idx.len());
    }
    Ok(UniqueTaskReport { cumulative, accepted, skipped })
}

/// Type-token ratio of a goal sample: unique tokens / total tokens.
pub fn ttr<S: AsRef<str>>(goals: &[S]) -> Result<f64, AnalyticsError> {
    let mut total = 0usize;
    let mut unique: HashSet<String> = HashSet::new();
    for goal in goals {
        for token in tokenize(goal.as_ref()) {
            total += 1;
            unique.insert(token);
        }
    }
    if total == 0 {
        return Err(AnalyticsError::EmptySample);
    }
    Ok(unique.len() as f64 / total as f64)
}

/// Seeded repeated subsampling companion to [`ttr`]: draws `repeats` samples
/// of `sample_size` goals without replacement and returns one TTR per draw.
pub fn ttr_samples<S: AsRef<str> + Sync>(
    goals: &[S],
    sample_size: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>, AnalyticsError> {
    if goals.is_empty() {
        return Err(AnalyticsError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = sample_size.min(goals.len());
    let mut values = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let picks = rand::seq::index::sample(&mut rng, goals.len(), amount);
        let sample: Vec<&str> = picks.iter().map(|i| goals[i].as_ref()).collect();
        values.push(ttr(&sample)?);
    }
    Ok(values)
}

/// Mean branching factor per depth, where a node with n children has factor
/// n - 1 and leaves clamp to 0.
pub fn branching_histogram(forest: &[ExplorationTree]) -> BTreeMap<u32, f64> {
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for tree in forest {
        let index = tree.child_index();
        for node in tree.nodes.values() {
            let children = index.get(&node.id).map_or(0, Vec::len);
            let factor = children.saturating_sub(1) as f64;
            let entry = sums.entry(node.depth).or_insert((0.0, 0));
            entry.0 += factor;
            entry.1 += 1;
        }
    }
    sums.into_iter().map(|(depth, (sum, count))| (depth, sum / count as f64)).collect()
}
