//! Helpers shared by the integration test binaries.

#![allow(dead_code)]

use trajtree_core::analytics::tokenize;

/// Independent uniqueness oracle: dense TF-IDF vectors built from scratch and
/// a literal restatement of the greedy uniqueness rule.
pub fn brute_force_unique_counts(corpus: &[String], threshold: f64) -> Vec<usize> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(d)).collect();
    let mut vocab: Vec<String> = docs.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let df: Vec<f64> = vocab
        .iter()
        .map(|t| docs.iter().filter(|d| d.contains(t)).count() as f64)
        .collect();
    let n = corpus.len() as f64;
    let dense: Vec<Option<Vec<f64>>> = docs
        .iter()
        .map(|tokens| {
            if tokens.is_empty() {
                return None;
            }
            let mut v = vec![0.0; vocab.len()];
            for token in tokens {
                let idx = vocab.binary_search(token).unwrap();
                v[idx] += 1.0;
            }
            for (i, w) in v.iter_mut().enumerate() {
                *w *= (n / (1.0 + df[i])).ln() + 1.0;
            }
            let norm = v.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm == 0.0 {
                return None;
            }
            for w in &mut v {
                *w /= norm;
            }
            Some(v)
        })
        .collect();
    let cosine = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut accepted: Vec<usize> = Vec::new();
    let mut counts = Vec::new();
    for (i, vec) in dense.iter().enumerate() {
        if let Some(v) = vec {
            let blocked =
                accepted.iter().any(|&u| cosine(v, dense[u].as_ref().unwrap()) >= threshold);
            if !blocked {
                accepted.push(i);
            }
        }
        counts.push(accepted.len());
    }
    counts
}

/// Seeded synthetic corpora for fuzzing the uniqueness metrics.
pub fn corpus_from_seed(seed: u64, docs: usize, vocab: usize) -> Vec<String> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize
    };
    (0..docs)
        .map(|_| {
            let len = 1 + next() % 6;
            (0..len).map(|_| format!("tok{}", next() % vocab)).collect::<Vec<_>>().join(" ")
        })
        .collect()
}
