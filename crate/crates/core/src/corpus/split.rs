//! Chronological train/valid/test splitting with a disjoint query pool for
//! evaluation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Interaction, Partition, Query, ReviewRecord};

/// Counters describing what the split did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitStats {
    /// Users with too few purchases to cut; everything went to train.
    pub users_all_train: usize,
    /// Valid/test purchases with no shared-pool query, moved back to train.
    pub moved_back: usize,
    /// Purchases that produced no interaction (no usable query).
    pub unassigned: usize,
}

/// Outcome of [`chronological_split`].
#[derive(Debug)]
pub struct SplitOutcome {
    /// Partition per review (purchase event), parallel to the input records.
    pub review_partition: Vec<Partition>,
    pub interactions: Vec<Interaction>,
    /// Query ids reserved for training by the random 70/30 query split.
    pub train_only_queries: BTreeSet<u32>,
    pub stats: SplitStats,
}

/// Split purchases per user by time at `ratios` (train/valid/test) and
/// expand them into (query, user, item) interactions.
///
/// `train_query_fraction` of all query ids is reserved for training; the
/// remainder is shared by valid and test so evaluation queries are unseen in
/// training. A valid/test purchase whose item has no shared-pool query is
/// moved back to the training set. Users with fewer than three purchases go
/// entirely to train.
pub fn chronological_split(
    reviews: &[ReviewRecord],
    queries: &[Query],
    item_queries: &BTreeMap<String, Vec<u32>>,
    ratios: (f64, f64, f64),
    train_query_fraction: f64,
    seed: u64,
) -> SplitOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_query_ids: Vec<u32> = queries.iter().map(|q| q.query_id).collect();
    all_query_ids.shuffle(&mut rng);
    let n_train_queries =
        ((all_query_ids.len() as f64) * train_query_fraction).round() as usize;
    let train_only_queries: BTreeSet<u32> =
        all_query_ids[..n_train_queries.min(all_query_ids.len())]
            .iter()
            .copied()
            .collect();

    // Purchases per user, in chronological order (ties by input position).
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, r) in reviews.iter().enumerate() {
        by_user.entry(&r.user_id).or_default().push(idx);
    }
    for purchases in by_user.values_mut() {
        purchases.sort_by_key(|&i| (reviews[i].timestamp, i));
    }

    let mut review_partition = vec![Partition::Train; reviews.len()];
    let mut stats = SplitStats::default();
    for purchases in by_user.values() {
        let n = purchases.len();
        if n < 3 {
            stats.users_all_train += 1;
            continue;
        }
        let n_valid = ((ratios.1 * n as f64).floor() as usize).max(1);
        let n_test = ((ratios.2 * n as f64).floor() as usize).max(1);
        let n_train = n - n_valid - n_test;
        for (pos, &idx) in purchases.iter().enumerate() {
            review_partition[idx] = if pos < n_train {
                Partition::Train
            } else if pos < n_train + n_valid {
                Partition::Valid
            } else {
                Partition::Test
            };
        }
    }

    // Expand purchases into interactions, moving valid/test purchases with
    // no shared-pool query back to train.
    let no_queries: Vec<u32> = Vec::new();
    let mut interactions = Vec::new();
    for (idx, r) in reviews.iter().enumerate() {
        let qids = item_queries.get(&r.item_id).unwrap_or(&no_queries);
        let partition = review_partition[idx];
        let (pool_ok, moved): (Vec<u32>, bool) = match partition {
            Partition::Train => (
                qids.iter()
                    .copied()
                    .filter(|q| train_only_queries.contains(q))
                    .collect(),
                false,
            ),
            Partition::Valid | Partition::Test => {
                let shared: Vec<u32> = qids
                    .iter()
                    .copied()
                    .filter(|q| !train_only_queries.contains(q))
                    .collect();
                if shared.is_empty() {
                    // Moved back: the purchase becomes training data.
                    review_partition[idx] = Partition::Train;
                    stats.moved_back += 1;
                    (
                        qids.iter()
                            .copied()
                            .filter(|q| train_only_queries.contains(q))
                            .collect(),
                        true,
                    )
                } else {
                    (shared, false)
                }
            }
        };
        let _ = moved;
        if pool_ok.is_empty() {
            stats.unassigned += 1;
            continue;
        }
        let effective = review_partition[idx];
        for qid in pool_ok {
            interactions.push(Interaction {
                query_id: qid,
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                timestamp: r.timestamp,
                partition: effective,
                review_idx: idx,
            });
        }
    }

    SplitOutcome {
        review_partition,
        interactions,
        train_only_queries,
        stats,
    }
}
