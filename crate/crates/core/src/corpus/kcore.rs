//! Iterative k-core filtering of the user-item review graph.

use std::collections::HashMap;

use super::ReviewRecord;

/// Keep only reviews whose user and item both retain at least `k` reviews,
/// iterating removal to a fixpoint. Order of surviving records is preserved.
pub fn k_core_filter(records: Vec<ReviewRecord>, k: usize) -> Vec<ReviewRecord> {
    assert!(k >= 1, "k-core requires k >= 1");
    if k == 1 {
        return records;
    }
    let mut alive = vec![true; records.len()];
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for (r, &a) in records.iter().zip(alive.iter()) {
            if a {
                *user_counts.entry(&r.user_id).or_insert(0) += 1;
                *item_counts.entry(&r.item_id).or_insert(0) += 1;
            }
        }
        let mut removed = false;
        for (r, a) in records.iter().zip(alive.iter_mut()) {
            if *a && (user_counts[r.user_id.as_str()] < k || item_counts[r.item_id.as_str()] < k)
            {
                *a = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    records
        .into_iter()
        .zip(alive)
        .filter_map(|(r, a)| a.then_some(r))
        .collect()
}
