//! TF-IDF vectorization with a fixed, documented convention so similarity
//! thresholds are reproducible: raw term frequency, idf = ln(N/(1+df)) + 1,
//! L2-normalized document vectors. Tokenization lowercases and splits on
//! non-alphanumeric runs; no stemming, no stop words.

use std::collections::BTreeMap;

/// Lowercased alphanumeric tokens, empty tokens dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Lowercase with whitespace runs collapsed to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sparse unit-norm vector: (vocabulary index, weight) pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct TfIdfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// One entry per input document; `None` when the document had no tokens
    /// (zero vectors are excluded from the model).
    pub documents: Vec<Option<SparseVec>>,
}

impl TfIdfModel {
    /// Fits vocabulary, document frequencies, and normalized vectors on the
    /// full corpus.
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Self {
        let token_lists: Vec<Vec<String>> =
            corpus.iter().map(|d| tokenize(d.as_ref())).collect();

        let mut vocabulary: BTreeMap<String, usize> = BTreeMap::new();
        for tokens in &token_lists {
            for token in tokens {
                let next = vocabulary.len();
                vocabulary.entry(token.clone()).or_insert(next);
            }
        }

        let mut df = vec![0usize; vocabulary.len()];
        for tokens in &token_lists {
            let mut seen = vec![false; vocabulary.len()];
            for token in tokens {
                let idx = vocabulary[token];
                if !seen[idx] {
                    seen[idx] = true;
                    df[idx] += 1;
                }
            }
        }

        let n = corpus.len() as f64;
        let idf: Vec<f64> =
            df.iter().map(|&d| (n / (1.0 + d as f64)).ln() + 1.0).collect();

        let documents = token_lists
            .iter()
            .map(|tokens| Self::vector_from_tokens(tokens, &vocabulary, &idf))
            .collect();

        TfIdfModel { vocabulary, idf, documents }
    }

    fn vector_from_tokens(
        tokens: &[String],
        vocabulary: &BTreeMap<String, usize>,
        idf: &[f64],
    ) -> Option<SparseVec> {
        if tokens.is_empty() {
            return None;
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokens {
            // Out-of-vocabulary tokens only occur for texts outside the fitted
            // corpus; they contribute nothing.
            if let Some(&idx) = vocabulary.get(token) {
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        let mut vec: SparseVec =
            counts.into_iter().map(|(idx, tf)| (idx, tf * idf[idx])).collect();
        let norm = vec.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        for (_, w) in &mut vec {
            *w /= norm;
        }
        Some(vec)
    }

    /// Vector for an arbitrary text under this model's vocabulary and idf.
    pub fn vectorize(&self, text: &str) -> Option<SparseVec> {
        Self::vector_from_tokens(&tokenize(text), &self.vocabulary, &self.idf)
    }

    /// Cosine similarity between two fitted documents; 0 when either is a
    /// zero vector.
    pub fn document_cosine(&self, a: usize, b: usize) -> f64 {
        match (&self.documents[a], &self.documents[b]) {
            (Some(va), Some(vb)) => cosine(va, vb),
            _ => 0.0,
        }
    }
}

/// Dot product of unit-norm sparse vectors.
pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Cosine of two texts under a model fitted on just that pair.
pub fn pair_cosine(a: &str, b: &str) -> f64 {
    let model = TfIdfModel::fit(&[a, b]);
    model.document_cosine(0, 1)
}

/// Maximum cosine of `query` against each text in `corpus`, under a model
/// fitted on corpus + query. 0 for an empty corpus.
pub fn max_cosine_to_corpus<S: AsRef<str>>(corpus: &[S], query: &str) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let mut docs: Vec<&str> = corpus.iter().map(|s| s.as_ref()).collect();
    docs.push(query);
    let model = TfIdfModel::fit(&docs);
    let query_idx = docs.len() - 1;
    (0..corpus.len())
        .map(|i| model.document_cosine(i, query_idx))
        .fold(0.0, f64::max)
}
