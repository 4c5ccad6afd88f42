//! Review history assembly for scoring: the user's and item's most recent
//! train-partition reviews.

use super::{Catalogue, Corpus, HistoryView};

/// Assemble `R_u` and `R_i` for scoring item `item_id` on behalf of
/// `user_id`.
///
/// Only train-partition reviews are eligible (the catalogue is built that
/// way), so valid/test scoring never sees future information. Reviews
/// written by the user never appear in `R_i`.
///
/// When scoring a training interaction, pass its timestamp as `before`:
/// both histories are then cut to reviews strictly earlier than the
/// purchase. This keeps the label review (written at the purchase time) out
/// of `R_u`, and treats the positive and its sampled negatives identically,
/// so no "one review is missing" signature distinguishes them. Pass `None`
/// for valid/test scoring, where every train review already precedes the
/// interaction.
///
/// Histories keep chronological order (most recent last) and are capped to
/// the latest `m_max` / `n_max` entries. Both sides may come back empty:
/// `m = 0` scores non-personalized, `n = 0` falls back to the description.
pub fn assemble_history(
    corpus: &Corpus,
    catalogue: &Catalogue,
    user_id: &str,
    item_id: &str,
    before: Option<i64>,
    m_max: usize,
    n_max: usize,
) -> HistoryView {
    let cutoff = before.unwrap_or(i64::MAX);
    let earlier = |idx: &usize| -> bool {
        before.is_none() || corpus.reviews[*idx].timestamp < cutoff
    };
    let user_reviews = match catalogue.user_index.get(user_id) {
        Some(&u) => tail(
            catalogue.user_reviews[u as usize]
                .iter()
                .copied()
                .filter(|idx| earlier(idx)),
            m_max,
        ),
        None => Vec::new(),
    };
    let item_reviews = match catalogue.item_index.get(item_id) {
        Some(&i) => tail(
            catalogue.item_reviews[i as usize]
                .iter()
                .copied()
                .filter(|idx| earlier(idx) && corpus.reviews[*idx].user_id != user_id),
            n_max,
        ),
        None => Vec::new(),
    };
    HistoryView {
        user_reviews,
        item_reviews,
    }
}

/// Last `cap` elements of an iterator, preserving order.
fn tail(iter: impl Iterator<Item = usize>, cap: usize) -> Vec<usize> {
    let all: Vec<usize> = iter.collect();
    let start = all.len().saturating_sub(cap);
    all[start..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Partition, ReviewRecord};

    fn review(user: &str, item: &str, t: i64) -> ReviewRecord {
        ReviewRecord {
            user_id: user.to_string(),
            item_id: item.to_string(),
            tokens: vec!["w".to_string()],
            timestamp: t,
            rating: None,
        }
    }

    fn corpus_with(reviews: Vec<ReviewRecord>, partitions: Vec<Partition>) -> Corpus {
        Corpus {
            review_partition: partitions,
            reviews,
            ..Corpus::default()
        }
    }

    #[test]
    fn keeps_latest_m_in_order() {
        let reviews: Vec<ReviewRecord> = (0..12)
            .map(|t| review("u1", &format!("i{t}"), t as i64))
            .collect();
        let parts = vec![Partition::Train; 12];
        let corpus = corpus_with(reviews, parts);
        let catalogue = Catalogue::build(&corpus);
        let h = assemble_history(&corpus, &catalogue, "u1", "other", None, 10, 30);
        assert_eq!(h.m(), 10);
        // latest ten, chronological
        let times: Vec<i64> = h
            .user_reviews
            .iter()
            .map(|&i| corpus.reviews[i].timestamp)
            .collect();
        assert_eq!(times, (2..12).collect::<Vec<i64>>());
    }

    #[test]
    fn target_user_excluded_from_item_side() {
        let reviews = vec![
            review("u1", "i1", 1),
            review("u2", "i1", 2),
            review("u3", "i1", 3),
        ];
        let parts = vec![Partition::Train; 3];
        let corpus = corpus_with(reviews, parts);
        let catalogue = Catalogue::build(&corpus);
        let h = assemble_history(&corpus, &catalogue, "u1", "i1", None, 10, 30);
        assert_eq!(h.n(), 2);
        for &idx in &h.item_reviews {
            assert_ne!(corpus.reviews[idx].user_id, "u1");
        }
        // u1's own review of i1 stays in R_u for evaluation-time scoring
        assert_eq!(h.m(), 1);
        // scoring the purchase itself (time 1) hides the label review
        let h = assemble_history(&corpus, &catalogue, "u1", "i1", Some(1), 10, 30);
        assert_eq!(h.m(), 0);
        assert_eq!(h.n(), 0);
    }

    #[test]
    fn non_train_reviews_are_ineligible() {
        let reviews = vec![
            review("u1", "i1", 1),
            review("u1", "i2", 2),
            review("u1", "i3", 3),
        ];
        let parts = vec![Partition::Train, Partition::Valid, Partition::Test];
        let corpus = corpus_with(reviews, parts);
        let catalogue = Catalogue::build(&corpus);
        let h = assemble_history(&corpus, &catalogue, "u1", "other", None, 10, 30);
        assert_eq!(h.m(), 1);
        assert_eq!(corpus.reviews[h.user_reviews[0]].timestamp, 1);
    }

    #[test]
    fn brand_new_user_yields_empty_history() {
        let corpus = corpus_with(vec![review("u1", "i1", 1)], vec![Partition::Train]);
        let catalogue = Catalogue::build(&corpus);
        let h = assemble_history(&corpus, &catalogue, "nobody", "i1", None, 10, 30);
        assert_eq!(h.m(), 0);
        assert_eq!(h.n(), 1);
    }
}
