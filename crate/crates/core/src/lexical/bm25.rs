//! Okapi BM25 scoring against the inverted index.

use std::collections::BTreeSet;

use super::index::InvertedIndex;
use super::rank::RankedList;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Inverse document frequency, smoothed so every matching term contributes
/// a positive score: `ln((N - df + 0.5) / (df + 0.5) + 1)`.
pub fn idf(doc_count: u32, df: u32) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Per-term frequency saturation with document-length normalization.
pub fn tf_component(tf: u32, doc_len: u32, avg_doc_len: f64, k1: f64, b: f64) -> f64 {
    let tf = tf as f64;
    let norm = if avg_doc_len > 0.0 {
        1.0 - b + b * doc_len as f64 / avg_doc_len
    } else {
        1.0
    };
    tf * (k1 + 1.0) / (tf + k1 * norm)
}

/// Rank the top `k` items for a query. Duplicate query terms count once;
/// items with no overlapping term are excluded. Ties break by ascending
/// item id.
pub fn bm25_rank(
    pair_id: &str,
    query_tokens: &[String],
    index: &InvertedIndex,
    k: usize,
    k1: f64,
    b: f64,
) -> RankedList {
    assert!(k >= 1, "candidate depth must be at least 1");
    let terms: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
    let mut scores = vec![0.0f64; index.items.len()];
    let mut touched = vec![false; index.items.len()];
    for term in terms {
        let Some(posts) = index.postings.get(term) else {
            continue;
        };
        let w = idf(index.doc_count(), posts.len() as u32);
        for &(doc, tf) in posts {
            scores[doc as usize] += w
                * tf_component(tf, index.doc_lengths[doc as usize], index.avg_doc_length, k1, b);
            touched[doc as usize] = true;
        }
    }
    let entries = scores
        .iter()
        .zip(touched.iter())
        .enumerate()
        .filter(|(_, (_, &t))| t)
        .map(|(doc, (&s, _))| (index.items[doc].clone(), s))
        .collect();
    RankedList::from_scores(pair_id.to_string(), entries).truncated(k)
}
