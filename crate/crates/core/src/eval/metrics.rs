//! Ranking metrics over run files: reciprocal rank, NDCG@k with binary
//! gains, and recall@k.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::EvalError;
use crate::lexical::RankedList;

/// Relevance judgments: pair id -> purchased items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Qrels {
    pub pairs: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn add(&mut self, pair_id: &str, item: &str) {
        self.pairs
            .entry(pair_id.to_string())
            .or_default()
            .insert(item.to_string());
    }

    pub fn get(&self, pair_id: &str) -> Option<&BTreeSet<String>> {
        self.pairs.get(pair_id)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `pair_id 0 item_id 1` per line.
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (pair, items) in &self.pairs {
            for item in items {
                writeln!(w, "{pair} 0 {item} 1")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Qrels, EvalError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut qrels = Qrels::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(EvalError::MalformedQrels {
                    line: lineno + 1,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            if fields[3] != "0" {
                qrels.add(fields[0], fields[2]);
            }
        }
        Ok(qrels)
    }
}

/// Reciprocal rank of the first relevant item; 0 when no relevant item
/// appears anywhere in the run.
pub fn mrr(run: &RankedList, relevant: &BTreeSet<String>) -> f64 {
    for (rank0, (item, _)) in run.entries.iter().enumerate() {
        if relevant.contains(item) {
            return 1.0 / (rank0 + 1) as f64;
        }
    }
    0.0
}

/// NDCG@k with binary gains: DCG sums 1/log2(rank+1) over relevant items in
/// the top k; the ideal places min(|relevant|, k) relevant items first.
pub fn ndcg_at_k(run: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1);
    let mut dcg = 0.0;
    for (rank0, (item, _)) in run.entries.iter().take(k).enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((rank0 + 2) as f64).log2();
        }
    }
    let ideal = relevant.len().min(k);
    if ideal == 0 {
        return 0.0;
    }
    let idcg: f64 = (0..ideal).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Fraction of the relevant items retrieved in the top k.
pub fn recall_at_k(run: &RankedList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1);
    if relevant.is_empty() {
        return 0.0;
    }
    let hit = run
        .entries
        .iter()
        .take(k)
        .filter(|(item, _)| relevant.contains(item))
        .count();
    hit as f64 / relevant.len() as f64
}

/// Per-pair metric values plus corpus means.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    /// pair -> (mrr, ndcg@k, recall@k), ordered by pair id.
    pub per_pair: BTreeMap<String, [f64; 3]>,
    pub k: usize,
    /// Pairs present in the run but missing from the qrels.
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn pair_count(&self) -> usize {
        self.per_pair.len()
    }

    pub fn means(&self) -> [f64; 3] {
        let n = self.per_pair.len();
        if n == 0 {
            return [0.0; 3];
        }
        let mut sums = [0.0; 3];
        for values in self.per_pair.values() {
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
        }
        sums.map(|s| s / n as f64)
    }

    pub fn metric_values(&self, metric: usize) -> Vec<f64> {
        self.per_pair.values().map(|v| v[metric]).collect()
    }

    /// Tab-separated `metric mean n` block, optionally followed by a
    /// per-pair dump.
    pub fn render(&self, per_pair: bool) -> String {
        let means = self.means();
        let n = self.pair_count();
        let mut out = String::new();
        out.push_str(&format!("mrr\t{:.6}\t{n}\n", means[0]));
        out.push_str(&format!("ndcg@{}\t{:.6}\t{n}\n", self.k, means[1]));
        out.push_str(&format!("recall@{}\t{:.6}\t{n}\n", self.k, means[2]));
        if per_pair {
            for (pair, v) in &self.per_pair {
                out.push_str(&format!(
                    "pair\t{pair}\t{:.6}\t{:.6}\t{:.6}\n",
                    v[0], v[1], v[2]
                ));
            }
        }
        out
    }
}

/// Evaluate a run against qrels. Pairs missing from the qrels are skipped
/// and reported; pairs in the qrels but absent from the run are not scored.
pub fn evaluate_run(runs: &[RankedList], qrels: &Qrels, k: usize) -> MetricReport {
    let mut report = MetricReport {
        k,
        ..MetricReport::default()
    };
    for run in runs {
        match qrels.get(&run.pair_id) {
            Some(relevant) if !relevant.is_empty() => {
                report.per_pair.insert(
                    run.pair_id.clone(),
                    [
                        mrr(run, relevant),
                        ndcg_at_k(run, relevant, k),
                        recall_at_k(run, relevant, k),
                    ],
                );
            }
            _ => report.skipped.push(run.pair_id.clone()),
        }
    }
    report
}
