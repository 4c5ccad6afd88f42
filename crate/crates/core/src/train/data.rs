//! Resolution of corpus structures into token-id inputs for the scorer.

use crate::corpus::{Catalogue, Corpus, Interaction, Partition, Vocab};
use crate::model::{RtmConfig, ScoreInputs};

/// One item's scorable material: its train reviews (author, timestamp,
/// resolved tokens already cut to `review_len_max`) in chronological order,
/// plus the resolved description.
#[derive(Clone, Debug, Default)]
pub struct ItemData {
    pub reviews: Vec<(u32, i64, Vec<u32>)>,
    pub description: Vec<u32>,
}

/// A training triple with its resolved user history. Histories contain only
/// reviews strictly earlier than the purchase, so the label review never
/// appears and candidates cannot be told apart by history bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub query_id: u32,
    pub user: u32,
    pub positive: u32,
    pub timestamp: i64,
    pub query: Vec<u32>,
    pub user_reviews: Vec<Vec<u32>>,
}

/// Token-resolved view of a corpus, shared by training, re-ranking, and
/// explanation. Immutable after construction.
pub struct ScoringContext<'a> {
    pub corpus: &'a Corpus,
    pub catalogue: &'a Catalogue,
    pub vocab: &'a Vocab,
    pub config: RtmConfig,
    pub items: Vec<ItemData>,
}

impl<'a> ScoringContext<'a> {
    pub fn new(
        corpus: &'a Corpus,
        catalogue: &'a Catalogue,
        vocab: &'a Vocab,
        config: RtmConfig,
    ) -> ScoringContext<'a> {
        let items = catalogue
            .items
            .iter()
            .enumerate()
            .map(|(dense, _)| {
                let reviews = catalogue.item_reviews[dense]
                    .iter()
                    .map(|&idx| {
                        let r = &corpus.reviews[idx];
                        let author = catalogue.user_index[&r.user_id];
                        (
                            author,
                            r.timestamp,
                            resolve_capped(vocab, &r.tokens, config.review_len_max),
                        )
                    })
                    .collect();
                ItemData {
                    reviews,
                    description: resolve_capped(
                        vocab,
                        &catalogue.item_desc[dense],
                        config.review_len_max,
                    ),
                }
            })
            .collect();
        ScoringContext {
            corpus,
            catalogue,
            vocab,
            config,
            items,
        }
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    /// Resolved `R_u` for a user, most recent `m_max` reviews. Training
    /// passes the purchase timestamp as `before` so only strictly earlier
    /// reviews qualify; evaluation passes `None`.
    pub fn user_history(&self, user_id: &str, before: Option<i64>) -> Vec<Vec<u32>> {
        let Some(&user) = self.catalogue.user_index.get(user_id) else {
            return Vec::new();
        };
        let cutoff = before.unwrap_or(i64::MAX);
        let eligible: Vec<usize> = self.catalogue.user_reviews[user as usize]
            .iter()
            .copied()
            .filter(|&idx| before.is_none() || self.corpus.reviews[idx].timestamp < cutoff)
            .collect();
        let start = eligible.len().saturating_sub(self.config.m_max);
        eligible[start..]
            .iter()
            .map(|&idx| {
                resolve_capped(
                    self.vocab,
                    &self.corpus.reviews[idx].tokens,
                    self.config.review_len_max,
                )
            })
            .collect()
    }

    /// Scoring inputs for one candidate item given the (query, user) pair's
    /// already-resolved history. `before` restricts `R_i` to reviews
    /// strictly earlier than a training purchase; evaluation passes `None`.
    pub fn inputs_for(
        &self,
        query: &[u32],
        user_dense: u32,
        user_reviews: &[Vec<u32>],
        item_dense: u32,
        before: Option<i64>,
    ) -> ScoreInputs {
        let data = &self.items[item_dense as usize];
        let cutoff = before.unwrap_or(i64::MAX);
        let eligible: Vec<Vec<u32>> = data
            .reviews
            .iter()
            .filter(|(author, time, _)| {
                *author != user_dense && (before.is_none() || *time < cutoff)
            })
            .map(|(_, _, tokens)| tokens.clone())
            .collect();
        let start = eligible.len().saturating_sub(self.config.n_max);
        ScoreInputs {
            query: query.to_vec(),
            user_reviews: user_reviews.to_vec(),
            item_reviews: eligible[start..].to_vec(),
            item_description: data.description.clone(),
            pad_slots: 0,
        }
    }

    /// Resolve every train-partition interaction into a training example.
    /// Examples whose query has no in-vocabulary token are skipped.
    pub fn train_examples(&self) -> Vec<TrainExample> {
        let mut out = Vec::new();
        for it in &self.corpus.interactions {
            if it.partition != Partition::Train {
                continue;
            }
            if let Some(example) = self.example_for(it) {
                out.push(example);
            }
        }
        out
    }

    fn example_for(&self, it: &Interaction) -> Option<TrainExample> {
        let query = self.vocab.resolve(&self.corpus.query(it.query_id).tokens);
        if query.is_empty() {
            return None;
        }
        let user = *self.catalogue.user_index.get(&it.user_id)?;
        let positive = *self.catalogue.item_index.get(&it.item_id)?;
        let user_reviews = self.user_history(&it.user_id, Some(it.timestamp));
        Some(TrainExample {
            query_id: it.query_id,
            user,
            positive,
            timestamp: it.timestamp,
            query,
            user_reviews,
        })
    }
}

fn resolve_capped(vocab: &Vocab, tokens: &[String], cap: usize) -> Vec<u32> {
    vocab.resolve(&tokens[..tokens.len().min(cap)])
}
