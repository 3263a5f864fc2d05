//! Okapi BM25 over short sentences.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::dsl::normalize_sentence;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Bm25Error {
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    documents: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    lengths: Vec<usize>,
    doc_freq: HashMap<String, u32>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn new(documents: Vec<String>) -> Self {
        Self::with_params(documents, 1.2, 0.75)
    }

    pub fn with_params(documents: Vec<String>, k1: f64, b: f64) -> Self {
        let mut term_freqs = Vec::with_capacity(documents.len());
        let mut lengths = Vec::with_capacity(documents.len());
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        for d in &documents {
            let tokens = tokenize(d);
            lengths.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let avg_len = if documents.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / documents.len() as f64
        };
        Self { documents, term_freqs, lengths, doc_freq, avg_len, k1, b }
    }

    pub fn documents(&self) -> &[String] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.documents.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of document `doc` for `query`; repeated query terms count once.
    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let terms: HashSet<String> = tokenize(query).into_iter().collect();
        self.score_terms(&terms, doc)
    }

    fn score_terms(&self, terms: &HashSet<String>, doc: usize) -> f64 {
        let tf = &self.term_freqs[doc];
        let norm = if self.avg_len > 0.0 { self.lengths[doc] as f64 / self.avg_len } else { 0.0 };
        terms
            .iter()
            .filter_map(|t| tf.get(t).map(|&f| (t, f as f64)))
            .map(|(t, f)| self.idf(t) * f * (self.k1 + 1.0) / (f + self.k1 * (1.0 - self.b + self.b * norm)))
            .sum()
    }

    /// Best `k` documents as `(index, score)`, highest first, ties by index.
    /// Documents equal to an excluded sentence (after normalization) are
    /// removed before truncating.
    pub fn top_k(&self, query: &str, k: usize, exclude: &HashSet<String>) -> Result<Vec<(usize, f64)>, Bm25Error> {
        if self.documents.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let excluded: HashSet<String> = exclude.iter().map(|s| normalize_sentence(s)).collect();
        let terms: HashSet<String> = tokenize(query).into_iter().collect();
        let mut scored: Vec<(usize, f64)> = (0..self.documents.len())
            .filter(|&i| !excluded.contains(&normalize_sentence(&self.documents[i])))
            .map(|i| (i, self.score_terms(&terms, i)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}
