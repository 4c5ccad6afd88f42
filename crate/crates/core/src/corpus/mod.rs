//! Corpus ingestion and preparation: review/meta parsing, k-core filtering,
//! query construction from category paths, chronological splits, review
//! history assembly, and the synthetic corpus generator.

pub mod history;
pub mod ingest;
pub mod kcore;
pub mod normalize;
pub mod queries;
pub mod split;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// One review: who reviewed what, when, with which (normalized) words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub tokens: Vec<String>,
    pub timestamp: i64,
    pub rating: Option<f64>,
}

/// Item metadata: taxonomy paths (normalized per level) and description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub category_paths: Vec<Vec<String>>,
    pub description_tokens: Vec<String>,
}

/// A search query synthesized from one category path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u32,
    pub tokens: Vec<String>,
    pub source_path: Vec<String>,
}

impl Query {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        match s {
            "train" => Ok(Partition::Train),
            "valid" => Ok(Partition::Valid),
            "test" => Ok(Partition::Test),
            other => Err(CorpusError::UnknownPartition(other.to_string())),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (query, user, item) triple assigned to a partition. `review_idx`
/// points at the purchase event (review) backing the triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub query_id: u32,
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    pub partition: Partition,
    pub review_idx: usize,
}

impl Interaction {
    /// The evaluation key: one ranked list is produced per (query, user).
    pub fn pair_id(&self) -> String {
        pair_id(self.query_id, &self.user_id)
    }
}

pub fn pair_id(query_id: u32, user_id: &str) -> String {
    format!("q{query_id}:{user_id}")
}

/// The prepared corpus: filtered reviews with partition labels, metadata,
/// queries, and the expanded interaction set.
///
/// Once built the corpus is immutable; reads are safe from any thread.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub reviews: Vec<ReviewRecord>,
    /// Partition of each review's purchase event, parallel to `reviews`.
    pub review_partition: Vec<Partition>,
    pub meta: BTreeMap<String, ItemMeta>,
    pub queries: Vec<Query>,
    /// Item -> query ids derived from its category paths.
    pub item_queries: BTreeMap<String, Vec<u32>>,
    pub interactions: Vec<Interaction>,
    /// Query ids reserved for training by the 70/30 query split.
    pub train_only_queries: BTreeSet<u32>,
}

impl Corpus {
    pub fn query(&self, id: u32) -> &Query {
        &self.queries[id as usize]
    }
}

/// Items and users with their train-partition review lists; the universe
/// the rankers operate over.
#[derive(Clone, Debug, Default)]
pub struct Catalogue {
    /// Sorted ascending; position is the dense item id.
    pub items: Vec<String>,
    pub item_index: HashMap<String, u32>,
    /// Per item: indices into `Corpus::reviews`, chronological.
    pub item_reviews: Vec<Vec<usize>>,
    pub item_desc: Vec<Vec<String>>,
    /// Sorted ascending; position is the dense user id.
    pub users: Vec<String>,
    pub user_index: HashMap<String, u32>,
    /// Per user: indices into `Corpus::reviews`, chronological.
    pub user_reviews: Vec<Vec<usize>>,
}

impl Catalogue {
    /// Collect every item seen in reviews or metadata, with train-partition
    /// review histories. Items referenced by interactions always appear.
    pub fn build(corpus: &Corpus) -> Catalogue {
        let mut item_set: BTreeSet<&str> = corpus.meta.keys().map(String::as_str).collect();
        let mut user_set: BTreeSet<&str> = BTreeSet::new();
        for r in &corpus.reviews {
            item_set.insert(&r.item_id);
            user_set.insert(&r.user_id);
        }
        let items: Vec<String> = item_set.into_iter().map(str::to_string).collect();
        let users: Vec<String> = user_set.into_iter().map(str::to_string).collect();
        let item_index: HashMap<String, u32> = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let user_index: HashMap<String, u32> = users
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();

        let mut item_reviews = vec![Vec::new(); items.len()];
        let mut user_reviews = vec![Vec::new(); users.len()];
        let mut order: Vec<usize> = (0..corpus.reviews.len()).collect();
        order.sort_by_key(|&i| (corpus.reviews[i].timestamp, i));
        for idx in order {
            if corpus.review_partition[idx] != Partition::Train {
                continue;
            }
            let r = &corpus.reviews[idx];
            item_reviews[item_index[&r.item_id] as usize].push(idx);
            user_reviews[user_index[&r.user_id] as usize].push(idx);
        }

        let item_desc = items
            .iter()
            .map(|id| {
                corpus
                    .meta
                    .get(id)
                    .map(|m| m.description_tokens.clone())
                    .unwrap_or_default()
            })
            .collect();

        Catalogue {
            items,
            item_index,
            item_reviews,
            item_desc,
            users,
            user_index,
            user_reviews,
        }
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }
}

/// Review histories for one interaction: the user's reviews (`R_u`) and the
/// item's reviews (`R_i`), as indices into `Corpus::reviews`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoryView {
    pub user_reviews: Vec<usize>,
    pub item_reviews: Vec<usize>,
}

impl HistoryView {
    pub fn m(&self) -> usize {
        self.user_reviews.len()
    }

    pub fn n(&self) -> usize {
        self.item_reviews.len()
    }
}

/// Token vocabulary with frequency counts, ordered by (count desc, word asc).
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    pub words: Vec<String>,
    pub index: HashMap<String, u32>,
    pub counts: Vec<u64>,
}

impl Vocab {
    /// Vocabulary over train-partition review tokens, item descriptions, and
    /// query tokens, so every unit the model encodes can be resolved.
    pub fn build(corpus: &Corpus) -> Vocab {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for (r, part) in corpus.reviews.iter().zip(&corpus.review_partition) {
            if *part != Partition::Train {
                continue;
            }
            for t in &r.tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        for m in corpus.meta.values() {
            for t in &m.description_tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        for q in &corpus.queries {
            for t in &q.tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        let mut pairs: Vec<(&str, u64)> = counts.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words: Vec<String> = pairs.iter().map(|(w, _)| w.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let counts = pairs.iter().map(|(_, c)| *c).collect();
        Vocab {
            words,
            index,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Map tokens to ids, dropping out-of-vocabulary words.
    pub fn resolve(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(w, "{word}\t{count}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, CorpusError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut words = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (word, count) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: expected word<TAB>count", lineno + 1),
            })?;
            words.push(word.to_string());
            counts.push(count.parse().map_err(|_| CorpusError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: bad count {count:?}", lineno + 1),
            })?);
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w): (usize, &String)| (w.clone(), i as u32))
            .collect();
        Ok(Vocab {
            words,
            index,
            counts,
        })
    }
}

const REVIEWS_FILE: &str = "reviews.jsonl";
const META_FILE: &str = "meta.jsonl";
const QUERIES_FILE: &str = "queries.jsonl";
const ITEM_QUERIES_FILE: &str = "item_queries.tsv";
const INTERACTIONS_FILE: &str = "interactions.tsv";
const SPLIT_FILE: &str = "split.tsv";
const TRAIN_QUERIES_FILE: &str = "train_queries.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Serialize, Deserialize)]
struct ReviewRow<'a> {
    #[serde(borrow)]
    user: &'a str,
    #[serde(borrow)]
    item: &'a str,
    tokens: Vec<String>,
    time: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rating: Option<f64>,
    partition: String,
}

impl Corpus {
    /// Persist the prepared corpus under `dir` (created if missing).
    ///
    /// Writes the split manifest (`split.tsv`, one `interaction_id<TAB>partition`
    /// line per interaction) alongside the full artifact files.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(REVIEWS_FILE))?);
        for (r, part) in self.reviews.iter().zip(&self.review_partition) {
            let row = ReviewRow {
                user: &r.user_id,
                item: &r.item_id,
                tokens: r.tokens.clone(),
                time: r.timestamp,
                rating: r.rating,
                partition: part.as_str().to_string(),
            };
            serde_json::to_writer(&mut w, &row).map_err(io_invalid)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join(META_FILE))?);
        for m in self.meta.values() {
            serde_json::to_writer(&mut w, m).map_err(io_invalid)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join(QUERIES_FILE))?);
        for q in &self.queries {
            serde_json::to_writer(&mut w, q).map_err(io_invalid)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join(INTERACTIONS_FILE))?);
        for (id, it) in self.interactions.iter().enumerate() {
            writeln!(
                w,
                "{id}\t{}\t{}\t{}\t{}\t{}\t{}",
                it.query_id, it.user_id, it.item_id, it.timestamp, it.partition, it.review_idx
            )?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join(SPLIT_FILE))?);
        for (id, it) in self.interactions.iter().enumerate() {
            writeln!(w, "{id}\t{}", it.partition)?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join(TRAIN_QUERIES_FILE))?);
        for q in &self.train_only_queries {
            writeln!(w, "{q}")?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join(ITEM_QUERIES_FILE))?);
        for (item, qids) in &self.item_queries {
            let joined: Vec<String> = qids.iter().map(|q| q.to_string()).collect();
            writeln!(w, "{item}\t{}", joined.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus, CorpusError> {
        let path = dir.join(REVIEWS_FILE);
        let mut reviews = Vec::new();
        let mut review_partition = Vec::new();
        for (lineno, line) in read_lines(&path)?.iter().enumerate() {
            let row: ReviewRow = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                path: path.clone(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            review_partition.push(Partition::parse(&row.partition)?);
            reviews.push(ReviewRecord {
                user_id: row.user.to_string(),
                item_id: row.item.to_string(),
                tokens: row.tokens,
                timestamp: row.time,
                rating: row.rating,
            });
        }

        let path = dir.join(META_FILE);
        let mut meta = BTreeMap::new();
        for (lineno, line) in read_lines(&path)?.iter().enumerate() {
            let m: ItemMeta = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                path: path.clone(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            meta.insert(m.item_id.clone(), m);
        }

        let path = dir.join(QUERIES_FILE);
        let mut queries = Vec::new();
        for (lineno, line) in read_lines(&path)?.iter().enumerate() {
            let q: Query = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                path: path.clone(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            queries.push(q);
        }
        queries.sort_by_key(|q| q.query_id);

        let path = dir.join(INTERACTIONS_FILE);
        let mut interactions = Vec::new();
        for (lineno, line) in read_lines(&path)?.iter().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(CorpusError::Malformed {
                    path: path.clone(),
                    message: format!("line {}: expected 7 fields", lineno + 1),
                });
            }
            let bad = |m: &str| CorpusError::Malformed {
                path: path.clone(),
                message: format!("line {}: {m}", lineno + 1),
            };
            interactions.push(Interaction {
                query_id: fields[1].parse().map_err(|_| bad("bad query id"))?,
                user_id: fields[2].to_string(),
                item_id: fields[3].to_string(),
                timestamp: fields[4].parse().map_err(|_| bad("bad timestamp"))?,
                partition: Partition::parse(fields[5])?,
                review_idx: fields[6].parse().map_err(|_| bad("bad review index"))?,
            });
        }

        let path = dir.join(TRAIN_QUERIES_FILE);
        let mut train_only_queries = BTreeSet::new();
        for (lineno, line) in read_lines(&path)?.iter().enumerate() {
            train_only_queries.insert(line.parse().map_err(|_| CorpusError::Malformed {
                path: path.clone(),
                message: format!("line {}: bad query id", lineno + 1),
            })?);
        }

        let path = dir.join(ITEM_QUERIES_FILE);
        let mut item_queries: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (lineno, line) in read_lines(&path)?.iter().enumerate() {
            let (item, rest) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
                path: path.clone(),
                message: format!("line {}: expected item<TAB>ids", lineno + 1),
            })?;
            let mut ids = Vec::new();
            for part in rest.split(',').filter(|s| !s.is_empty()) {
                ids.push(part.parse().map_err(|_| CorpusError::Malformed {
                    path: path.clone(),
                    message: format!("line {}: bad query id {part:?}", lineno + 1),
                })?);
            }
            item_queries.insert(item.to_string(), ids);
        }

        Ok(Corpus {
            reviews,
            review_partition,
            meta,
            queries,
            item_queries,
            interactions,
            train_only_queries,
        })
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

fn io_invalid(e: serde_json::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
