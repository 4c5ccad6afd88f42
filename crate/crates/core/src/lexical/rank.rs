//! Ranked lists, the popularity baseline, and run-file I/O.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Corpus, Partition};
use crate::error::LexicalError;

/// A per-(query, user) ranking: entries ordered by score descending, ties by
/// ascending item id, no duplicate items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedList {
    pub pair_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Establish the ordering invariant from unordered scores.
    pub fn from_scores(pair_id: String, mut entries: Vec<(String, f64)>) -> RankedList {
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        debug_assert!(
            entries.windows(2).all(|w| w[0].0 != w[1].0),
            "duplicate item in ranked list"
        );
        RankedList { pair_id, entries }
    }

    pub fn truncated(mut self, k: usize) -> RankedList {
        self.entries.truncate(k);
        self
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(i, _)| i.as_str())
    }
}

/// Query-independent popularity ranking: train purchase count descending,
/// ties by ascending item id. Items never purchased in train rank after all
/// purchased ones (count zero).
pub fn popularity_rank(corpus: &Corpus, items: &[String], k: usize) -> RankedList {
    let mut counts: BTreeMap<&str, u64> = items.iter().map(|i| (i.as_str(), 0)).collect();
    for (r, part) in corpus.reviews.iter().zip(&corpus.review_partition) {
        if *part == Partition::Train {
            if let Some(c) = counts.get_mut(r.item_id.as_str()) {
                *c += 1;
            }
        }
    }
    let entries = counts
        .into_iter()
        .map(|(item, c)| (item.to_string(), c as f64))
        .collect();
    RankedList::from_scores("POP".to_string(), entries).truncated(k)
}

/// Write run files: `pair_id Q0 item_id rank score tag`, rank starting at 1,
/// scores with more than six significant digits.
pub fn write_run(path: &Path, runs: &[RankedList], tag: &str) -> Result<(), LexicalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for list in runs {
        for (rank, (item, score)) in list.entries.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {:.6e} {}", list.pair_id, item, rank + 1, score, tag)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a run file back into ranked lists, preserving pair order of first
/// appearance and entry order within each pair.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>, LexicalError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut by_pair: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(LexicalError::MalformedRun {
                line: lineno + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let rank: usize = fields[3].parse().map_err(|_| LexicalError::MalformedRun {
            line: lineno + 1,
            message: format!("bad rank {:?}", fields[3]),
        })?;
        let score: f64 = fields[4].parse().map_err(|_| LexicalError::MalformedRun {
            line: lineno + 1,
            message: format!("bad score {:?}", fields[4]),
        })?;
        let pair = fields[0].to_string();
        if !by_pair.contains_key(&pair) {
            order.push(pair.clone());
        }
        by_pair
            .entry(pair)
            .or_default()
            .push((rank, fields[2].to_string(), score));
    }
    let mut out = Vec::with_capacity(order.len());
    for pair in order {
        let mut rows = by_pair.remove(&pair).unwrap();
        rows.sort_by_key(|(rank, _, _)| *rank);
        out.push(RankedList {
            pair_id: pair,
            entries: rows.into_iter().map(|(_, item, score)| (item, score)).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ReviewRecord;

    #[test]
    fn ordering_is_total_and_deterministic() {
        let list = RankedList::from_scores(
            "p".into(),
            vec![
                ("i2".into(), 1.0),
                ("i1".into(), 1.0),
                ("i3".into(), 2.0),
            ],
        );
        let ids: Vec<&str> = list.items().collect();
        assert_eq!(ids, vec!["i3", "i1", "i2"]);
    }

    #[test]
    fn popularity_counts_and_ties() {
        let mut corpus = Corpus::default();
        for (user, item) in [
            ("u1", "i1"),
            ("u2", "i1"),
            ("u3", "i1"),
            ("u1", "i2"),
            ("u2", "i2"),
            ("u3", "i2"),
            ("u4", "i2"),
            ("u5", "i2"),
        ] {
            corpus.reviews.push(ReviewRecord {
                user_id: user.into(),
                item_id: item.into(),
                tokens: vec!["w".into()],
                timestamp: 0,
                rating: None,
            });
            corpus.review_partition.push(Partition::Train);
        }
        let items = vec!["i1".to_string(), "i2".to_string(), "i9".to_string()];
        let list = popularity_rank(&corpus, &items, 10);
        let ids: Vec<&str> = list.items().collect();
        // i2 count 5, i1 count 3, unseen i9 counts zero and ranks last
        assert_eq!(ids, vec!["i2", "i1", "i9"]);

        // tie on counts resolves by ascending id
        let tied = RankedList::from_scores(
            "POP".into(),
            vec![("i2".into(), 2.0), ("i1".into(), 2.0)],
        );
        assert_eq!(tied.items().collect::<Vec<_>>(), vec!["i1", "i2"]);
    }

    #[test]
    fn run_file_roundtrip() {
        let runs = vec![
            RankedList::from_scores(
                "q0:u1".into(),
                vec![("i1".into(), 0.25), ("i2".into(), 0.125)],
            ),
            RankedList::from_scores("q1:u2".into(), vec![("i9".into(), -1.5)]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.run");
        write_run(&path, &runs, "unit").unwrap();
        let loaded = read_run(&path).unwrap();
        assert_eq!(loaded, runs);
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "q0:u1 Q0 i1 1 2.500000e-1 unit");
    }
}
