//! The negative-sampling training objective.

use serde::{Deserialize, Serialize};

use super::data::{ScoringContext, TrainExample};
use crate::error::TrainError;
use crate::model::{build_and_score_with_units, encode_unit, ParamNodes, UnitKind};
use crate::numeric::{NodeId, Tape};

/// How the full-softmax likelihood is estimated from the sampled items.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Word2vec-style: -(log sigmoid(s+) + sum log sigmoid(-s-)).
    Logistic,
    /// Softmax restricted to the sampled candidates:
    /// -log(exp(s+) / (exp(s+) + sum exp(s-))).
    SampledSoftmax,
}

impl LossMode {
    pub fn parse(s: &str) -> Option<LossMode> {
        match s {
            "logistic" => Some(LossMode::Logistic),
            "sampled-softmax" => Some(LossMode::SampledSoftmax),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Logistic => "logistic",
            LossMode::SampledSoftmax => "sampled-softmax",
        }
    }
}

/// One example with its sampled negatives.
pub struct BatchEntry<'a> {
    pub example: &'a TrainExample,
    pub negatives: Vec<u32>,
}

/// Build the batch loss on `tape`: the chosen estimator per example,
/// averaged over the batch. No regularization term is added.
///
/// The query and user units are encoded once per example and shared by the
/// positive and all negatives.
pub fn ns_loss(
    tape: &mut Tape,
    nodes: &ParamNodes,
    ctx: &ScoringContext,
    batch: &[BatchEntry],
    mode: LossMode,
) -> Result<NodeId, TrainError> {
    assert!(!batch.is_empty(), "empty batch");
    let mut example_losses = Vec::with_capacity(batch.len());
    for entry in batch {
        let ex = entry.example;
        let query = encode_unit(tape, nodes, &ex.query, UnitKind::Query)
            .ok_or(crate::error::ModelError::EmptyQuery)?;
        let user_units: Vec<Option<NodeId>> = ex
            .user_reviews
            .iter()
            .map(|r| encode_unit(tape, nodes, r, UnitKind::Review))
            .collect();
        let score_of = |tape: &mut Tape, item: u32| -> Result<NodeId, TrainError> {
            let inputs = ctx.inputs_for(&ex.query, ex.user, &ex.user_reviews, item, Some(ex.timestamp));
            let out =
                build_and_score_with_units(tape, nodes, &ctx.config, query, &user_units, &inputs)?;
            Ok(out.score)
        };
        let pos = score_of(tape, ex.positive)?;
        let mut negs = Vec::with_capacity(entry.negatives.len());
        for &n in &entry.negatives {
            negs.push(score_of(tape, n)?);
        }
        let loss = match mode {
            LossMode::Logistic => {
                let mut terms = Vec::with_capacity(1 + negs.len());
                terms.push(tape.log_sigmoid(pos));
                for n in negs {
                    let flipped = tape.neg(n);
                    terms.push(tape.log_sigmoid(flipped));
                }
                let stacked = tape.stack_scalars(&terms);
                let total = tape.sum(stacked);
                tape.neg(total)
            }
            LossMode::SampledSoftmax => {
                let mut all = Vec::with_capacity(1 + negs.len());
                all.push(pos);
                all.extend(negs);
                let stacked = tape.stack_scalars(&all);
                let lse = tape.log_sum_exp(stacked);
                let neg_pos = tape.neg(pos);
                tape.add(neg_pos, lse)
            }
        };
        example_losses.push(loss);
    }
    let stacked = tape.stack_scalars(&example_losses);
    Ok(tape.mean_all(stacked))
}
