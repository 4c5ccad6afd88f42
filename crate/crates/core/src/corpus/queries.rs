//! Query construction from multi-level category paths.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::normalize::normalize_text;
use super::{ItemMeta, Query};

/// Normalize a category path into a query token sequence: concatenate the
/// words level by level, drop stopwords, and drop later duplicates.
pub fn normalized_path_tokens(path: &[String], stopwords: &BTreeSet<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for level in path {
        for token in normalize_text(level) {
            if stopwords.contains(&token) {
                continue;
            }
            if seen.insert(token.clone()) {
                out.push(token);
            }
        }
    }
    out
}

/// Build one query per distinct category path. Identical token sequences
/// share a query id corpus-wide; ids are assigned in first-encounter order
/// over the metadata (so rebuilding from the same input reproduces them).
///
/// Returns the deduplicated queries and the item -> query-id map. Paths that
/// normalize to nothing are skipped and counted.
pub fn build_queries(
    meta: &[ItemMeta],
    stopwords: &BTreeSet<String>,
) -> (Vec<Query>, BTreeMap<String, Vec<u32>>, usize) {
    let mut queries: Vec<Query> = Vec::new();
    let mut by_tokens: HashMap<Vec<String>, u32> = HashMap::new();
    let mut item_queries: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    let mut skipped = 0;

    for m in meta {
        let ids = item_queries.entry(m.item_id.clone()).or_default();
        for path in &m.category_paths {
            let tokens = normalized_path_tokens(path, stopwords);
            if tokens.is_empty() {
                skipped += 1;
                continue;
            }
            let id = *by_tokens.entry(tokens.clone()).or_insert_with(|| {
                let id = queries.len() as u32;
                queries.push(Query {
                    query_id: id,
                    tokens,
                    source_path: path.clone(),
                });
                id
            });
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    (queries, item_queries, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize::default_stopwords;

    fn meta(item: &str, paths: &[&[&str]]) -> ItemMeta {
        ItemMeta {
            item_id: item.to_string(),
            category_paths: paths
                .iter()
                .map(|p| p.iter().map(|s| s.to_string()).collect())
                .collect(),
            description_tokens: Vec::new(),
        }
    }

    #[test]
    fn clothing_socks_path() {
        let path = [
            "Clothing, Shoes & Jewelry",
            "Men",
            "Big & Tall",
            "Active",
            "Athletic Socks",
        ];
        let m = meta("i1", &[&path]);
        let (queries, item_queries, skipped) = build_queries(&[m], &default_stopwords());
        assert_eq!(skipped, 0);
        assert_eq!(queries.len(), 1);
        assert_eq!(
            queries[0].text(),
            "clothing shoe jewelry men big tall active athletic sock"
        );
        assert_eq!(item_queries["i1"], vec![0]);
    }

    #[test]
    fn cds_path() {
        let m = meta("i1", &[&["CDs & Vinyl", "Jazz", "Europe"]]);
        let (queries, _, _) = build_queries(&[m], &default_stopwords());
        assert_eq!(queries[0].text(), "cd vinyl jazz europe");
    }

    #[test]
    fn duplicates_within_path_removed() {
        let m = meta("i1", &[&["Sports & Outdoors", "Outdoors", "Sports Gloves"]]);
        let (queries, _, _) = build_queries(&[m], &default_stopwords());
        assert_eq!(queries[0].text(), "sport outdoor glove");
    }

    #[test]
    fn all_stopword_path_skipped() {
        let m = meta("i1", &[&["The", "And"]]);
        let (queries, item_queries, skipped) = build_queries(&[m], &default_stopwords());
        assert!(queries.is_empty());
        assert_eq!(skipped, 1);
        assert!(item_queries["i1"].is_empty());
    }

    #[test]
    fn identical_paths_share_ids() {
        let m1 = meta("i1", &[&["CDs & Vinyl", "Jazz"]]);
        let m2 = meta("i2", &[&["CDs & Vinyl", "Jazz"], &["CDs & Vinyl", "Rock"]]);
        let (queries, item_queries, _) = build_queries(&[m1, m2], &default_stopwords());
        assert_eq!(queries.len(), 2);
        assert_eq!(item_queries["i1"], vec![0]);
        assert_eq!(item_queries["i2"], vec![0, 1]);
    }

    #[test]
    fn rebuild_reproduces_ids() {
        let metas = vec![
            meta("i1", &[&["CDs & Vinyl", "Jazz"]]),
            meta("i2", &[&["Sports & Outdoors", "Running"]]),
        ];
        let (q1, iq1, _) = build_queries(&metas, &default_stopwords());
        let (q2, iq2, _) = build_queries(&metas, &default_stopwords());
        assert_eq!(q1, q2);
        assert_eq!(iq1, iq2);
    }
}
