//! Global prefix memory: step goals recorded during the first L steps of
//! prior explorations, keyed by (category, step depth, normalized history).
//! New candidates at shallow depth must diverge from what is already stored
//! under an identical historical context.

use std::collections::HashMap;

use crate::agents::HistoryEntry;
use crate::analytics::{max_cosine_to_corpus, normalize_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Normalized exact goal match (scripted desk-scale mode).
    ExactMatch,
    /// TF-IDF cosine against stored goals (remote mode).
    TfIdfCosine,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct MemoryKey {
    category: String,
    depth: u32,
    history: String,
}

/// Normalized textual key of a history prefix.
pub fn history_key(entries: &[HistoryEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}|{}|{}", normalize_text(&e.step_goal), e.action_kind, e.result_type))
        .collect::<Vec<_>>()
        .join("\u{1f}")
}

#[derive(Debug, Clone)]
pub struct PrefixMemory {
    prefix_length: u32,
    similarity_threshold: f64,
    mode: SimilarityMode,
    entries: HashMap<MemoryKey, Vec<String>>,
}

impl PrefixMemory {
    pub fn new(prefix_length: u32, similarity_threshold: f64, mode: SimilarityMode) -> Self {
        PrefixMemory {
            prefix_length: prefix_length.max(1),
            similarity_threshold,
            mode,
            entries: HashMap::new(),
        }
    }

    pub fn prefix_length(&self) -> u32 {
        self.prefix_length
    }

    pub fn stored_goals(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Goals recorded under this exact (category, depth, history) key.
    pub fn view(&self, category: &str, depth: u32, history: &str) -> Vec<String> {
        self.entries
            .get(&MemoryKey {
                category: category.to_string(),
                depth,
                history: history.to_string(),
            })
            .cloned()
            .unwrap_or_default()
    }

    /// True iff the candidate's similarity to every stored goal under the key
    /// stays below the threshold. Vacuously true at depth >= L.
    pub fn is_novel(&self, category: &str, depth: u32, history: &str, candidate: &str) -> bool {
        if depth >= self.prefix_length {
            return true;
        }
        let stored = match self.entries.get(&MemoryKey {
            category: category.to_string(),
            depth,
            history: history.to_string(),
        }) {
            Some(goals) if !goals.is_empty() => goals,
            _ => return true,
        };
        let max_similarity = match self.mode {
            SimilarityMode::ExactMatch => {
                let norm = normalize_text(candidate);
                if stored.iter().any(|g| normalize_text(g) == norm) {
                    1.0
                } else {
                    0.0
                }
            }
            SimilarityMode::TfIdfCosine => max_cosine_to_corpus(stored, candidate),
        };
        max_similarity < self.similarity_threshold
    }

    /// Records an executed step goal. No-op beyond the prefix horizon.
    pub fn admit(&mut self, category: &str, depth: u32, history: &str, goal: &str) {
        if depth >= self.prefix_length {
            return;
        }
        let key = MemoryKey {
            category: category.to_string(),
            depth,
            history: history.to_string(),
        };
        let goals = self.entries.entry(key).or_default();
        let norm = normalize_text(goal);
        if !goals.iter().any(|g| normalize_text(g) == norm) {
            goals.push(goal.to_string());
        }
    }
}

/// Novelty check over raw history entries.
pub fn novelty_check(
    memory: &PrefixMemory,
    category: &str,
    depth: u32,
    history: &[HistoryEntry],
    candidate_goal: &str,
) -> bool {
    memory.is_novel(category, depth, &history_key(history), candidate_goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionKind, ResultType};

    fn entry(goal: &str) -> HistoryEntry {
        HistoryEntry {
            step_goal: goal.to_string(),
            action_kind: ActionKind::Click,
            result_type: ResultType::Success,
        }
    }

    #[test]
    fn empty_memory_is_always_novel() {
        let memory = PrefixMemory::new(3, 0.8, SimilarityMode::ExactMatch);
        assert!(novelty_check(&memory, "cat", 0, &[], "open settings"));
    }

    #[test]
    fn identical_goal_at_same_key_is_rejected() {
        let mut memory = PrefixMemory::new(3, 0.8, SimilarityMode::ExactMatch);
        let history = vec![entry("open panel")];
        let key = history_key(&history);
        memory.admit("cat", 1, &key, "Toggle  Wrap");
        assert!(!memory.is_novel("cat", 1, &key, "toggle wrap"), "normalized match must fail");
        assert!(memory.is_novel("cat", 1, &key, "open terminal"));
        // Different history context: the same goal is fine.
        assert!(memory.is_novel("cat", 1, &history_key(&[entry("other path")]), "toggle wrap"));
        // Different depth: also fine.
        assert!(memory.is_novel("cat", 2, &key, "toggle wrap"));
    }

    #[test]
    fn beyond_prefix_horizon_is_vacuously_novel() {
        let mut memory = PrefixMemory::new(3, 0.8, SimilarityMode::ExactMatch);
        memory.admit("cat", 5, "", "deep goal");
        assert_eq!(memory.stored_goals(), 0, "deep admissions are dropped");
        assert!(memory.is_novel("cat", 5, "", "deep goal"));
    }

    #[test]
    fn tfidf_mode_rejects_near_duplicates_only() {
        let mut memory = PrefixMemory::new(3, 0.65, SimilarityMode::TfIdfCosine);
        memory.admit("cat", 0, "", "open the history page now");
        assert!(!memory.is_novel("cat", 0, "", "open the history page now"));
        assert!(memory.is_novel("cat", 0, "", "configure spell check dictionaries"));
    }

    #[test]
    fn admit_deduplicates() {
        let mut memory = PrefixMemory::new(2, 0.8, SimilarityMode::ExactMatch);
        memory.admit("cat", 0, "", "open file");
        memory.admit("cat", 0, "", "Open File");
        assert_eq!(memory.stored_goals(), 1);
    }
}
