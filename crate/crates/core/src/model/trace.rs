//! Attention traces captured during scoring, the raw material for ranking
//! explanations.

use std::fmt;

use super::forward::ForwardOutput;
use crate::numeric::{Tape, Tensor};

/// What a sequence position holds. Review indices are 1-based, matching the
/// chronological order within each history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitLabel {
    Query,
    UserReview(u32),
    ItemReview(u32),
    Pad,
}

impl fmt::Display for UnitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitLabel::Query => write!(f, "q"),
            UnitLabel::UserReview(k) => write!(f, "ur{k}"),
            UnitLabel::ItemReview(k) => write!(f, "ir{k}"),
            UnitLabel::Pad => write!(f, "pad"),
        }
    }
}

/// Per-layer, per-head attention matrices restricted to real (unmasked)
/// units. Every row is a softmax output: nonnegative, summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub labels: Vec<UnitLabel>,
    /// `layers[l][h]` is an R x R matrix over the real units.
    pub layers: Vec<Vec<Tensor>>,
}

impl AttentionTrace {
    /// Pull the softmax matrices out of a finished forward pass, dropping
    /// masked rows and columns.
    pub fn extract(tape: &Tape, out: &ForwardOutput) -> AttentionTrace {
        let real: Vec<usize> = out
            .mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let labels: Vec<UnitLabel> = real.iter().map(|&i| out.labels[i]).collect();
        let r = real.len();
        let layers = out
            .attention
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|&node| {
                        let full = tape.value(node);
                        let mut data = Vec::with_capacity(r * r);
                        for &row in &real {
                            let src = full.row(row);
                            for &col in &real {
                                data.push(src[col]);
                            }
                        }
                        Tensor::matrix(r, r, data)
                    })
                    .collect()
            })
            .collect();
        AttentionTrace { labels, layers }
    }

    pub fn unit_count(&self) -> usize {
        self.labels.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn head_count(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    /// Mean attention row over heads for the given reference unit at a layer
    /// (0-based).
    pub fn mean_row(&self, layer: usize, reference: usize) -> Vec<f64> {
        let heads = &self.layers[layer];
        let r = self.unit_count();
        let mut out = vec![0.0; r];
        for head in heads {
            for (o, v) in out.iter_mut().zip(head.row(reference)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= heads.len() as f64;
        }
        out
    }
}
