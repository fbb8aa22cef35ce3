use std::collections::BTreeSet;

use crate::numerics::{normalized_similarity, token_mean, Matrix};

/// Fraction of relevant labels with at least one retained frame; vacuously 1
/// when nothing is relevant.
pub fn recall_at_capacity(retained_labels: &BTreeSet<u32>, relevant_labels: &BTreeSet<u32>) -> f64 {
    if relevant_labels.is_empty() {
        return 1.0;
    }
    let covered = relevant_labels.intersection(retained_labels).count();
    covered as f64 / relevant_labels.len() as f64
}

/// Mean normalized token-mean similarity over all unordered pairs; 0 below two entries.
pub fn redundancy(entries: &[&Matrix]) -> f64 {
    if entries.len() < 2 {
        return 0.0;
    }
    let means: Vec<Vec<f64>> = entries.iter().map(|e| token_mean(e)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            total += normalized_similarity(&means[i], &means[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}
