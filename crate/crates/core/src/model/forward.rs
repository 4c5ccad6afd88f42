//! The scoring network: unit encoding, input assembly with optional
//! position/segment embeddings, masked multi-head self-attention layers, and
//! the scalar scoring head.

use std::rc::Rc;

use super::config::{Activation, RtmConfig, LN_EPS};
use super::params::RtmParameters;
use super::trace::{AttentionTrace, UnitLabel};
use crate::error::ModelError;
use crate::numeric::{NodeId, Tape, Tensor};

/// Tape handles for every parameter tensor, in `RtmParameters::visit` order.
pub struct ParamNodes {
    pub word_emb: NodeId,
    pub pos_emb: NodeId,
    pub seg_emb: NodeId,
    pub query_w: NodeId,
    pub query_b: NodeId,
    pub review_w: NodeId,
    pub review_b: NodeId,
    pub layers: Vec<LayerNodes>,
    pub out_w: NodeId,
}

pub struct LayerNodes {
    pub attn_q: NodeId,
    pub attn_k: NodeId,
    pub attn_v: NodeId,
    pub attn_out: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
}

impl RtmParameters {
    /// Put every parameter on the tape. `trainable` decides whether the
    /// leaves participate in backward.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamNodes {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ParamNodes {
            word_emb: put(&self.word_emb),
            pos_emb: put(&self.pos_emb),
            seg_emb: put(&self.seg_emb),
            query_w: put(&self.query_w),
            query_b: put(&self.query_b),
            review_w: put(&self.review_w),
            review_b: put(&self.review_b),
            layers: self
                .layers
                .iter()
                .map(|l| LayerNodes {
                    attn_q: put(&l.attn_q),
                    attn_k: put(&l.attn_k),
                    attn_v: put(&l.attn_v),
                    attn_out: put(&l.attn_out),
                    ffn_w1: put(&l.ffn_w1),
                    ffn_b1: put(&l.ffn_b1),
                    ffn_w2: put(&l.ffn_w2),
                    ffn_b2: put(&l.ffn_b2),
                    ln1_gain: put(&l.ln1_gain),
                    ln1_bias: put(&l.ln1_bias),
                    ln2_gain: put(&l.ln2_gain),
                    ln2_bias: put(&l.ln2_bias),
                })
                .collect(),
            out_w: put(&self.out_w),
        }
    }

    /// Gather gradients back out of a tape in `visit` order.
    pub fn collect_gradients(
        &self,
        nodes: &ParamNodes,
        tape: &Tape,
        grads: &crate::numeric::Gradients,
    ) -> Result<Vec<Tensor>, ModelError> {
        let ids = nodes.named();
        let mut out = Vec::with_capacity(ids.len());
        for (_, id) in ids {
            out.push(grads.get(id, tape.value(id))?);
        }
        Ok(out)
    }
}

impl ParamNodes {
    /// Node handles in `RtmParameters::visit` order.
    pub fn named(&self) -> Vec<(String, NodeId)> {
        let mut out: Vec<(String, NodeId)> = vec![
            ("word_emb".into(), self.word_emb),
            ("pos_emb".into(), self.pos_emb),
            ("seg_emb".into(), self.seg_emb),
            ("query_proj.w".into(), self.query_w),
            ("query_proj.b".into(), self.query_b),
            ("review_proj.w".into(), self.review_w),
            ("review_proj.b".into(), self.review_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn.wq"), l.attn_q));
            out.push((format!("layers.{i}.attn.wk"), l.attn_k));
            out.push((format!("layers.{i}.attn.wv"), l.attn_v));
            out.push((format!("layers.{i}.attn.wo"), l.attn_out));
            out.push((format!("layers.{i}.ffn.w1"), l.ffn_w1));
            out.push((format!("layers.{i}.ffn.b1"), l.ffn_b1));
            out.push((format!("layers.{i}.ffn.w2"), l.ffn_w2));
            out.push((format!("layers.{i}.ffn.b2"), l.ffn_b2));
            out.push((format!("layers.{i}.ln1.gain"), l.ln1_gain));
            out.push((format!("layers.{i}.ln1.bias"), l.ln1_bias));
            out.push((format!("layers.{i}.ln2.gain"), l.ln2_gain));
            out.push((format!("layers.{i}.ln2.bias"), l.ln2_bias));
        }
        out.push(("out.w".into(), self.out_w));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Query,
    Review,
}

/// Encode one unit: tanh(W * mean(word embeddings) + b), with the query or
/// review projection chosen by `kind`. Out-of-vocabulary tokens were already
/// dropped by the resolver; an empty token list yields `None` and the caller
/// masks the unit.
pub fn encode_unit(
    tape: &mut Tape,
    nodes: &ParamNodes,
    token_ids: &[u32],
    kind: UnitKind,
) -> Option<NodeId> {
    if token_ids.is_empty() {
        return None;
    }
    let indices: Rc<Vec<usize>> = Rc::new(token_ids.iter().map(|&t| t as usize).collect());
    let gathered = tape.gather_rows(nodes.word_emb, indices);
    let mean = tape.mean_rows(gathered);
    let (w, b) = match kind {
        UnitKind::Query => (nodes.query_w, nodes.query_b),
        UnitKind::Review => (nodes.review_w, nodes.review_b),
    };
    let proj = tape.matmul(mean, w);
    let shifted = tape.add(proj, b);
    Some(tape.tanh(shifted))
}

/// The assembled input: unit matrix, validity mask, and unit labels.
/// Position 0 (the query) is always real; masked rows are zero vectors.
pub struct SequenceBatch {
    pub x: NodeId,
    pub mask: Rc<Vec<bool>>,
    pub labels: Vec<UnitLabel>,
    pub m: usize,
    pub n: usize,
}

/// Sum each unit with its optional position and segment embeddings and stack
/// the results. User review k sits at position k, item review k' at position
/// m + k' (computed from the actual m, no gaps). `pad_slots` masked zero
/// rows are appended at the end.
pub fn build_input_sequence(
    tape: &mut Tape,
    nodes: &ParamNodes,
    config: &RtmConfig,
    query: NodeId,
    user_units: &[Option<NodeId>],
    item_units: &[Option<NodeId>],
    pad_slots: usize,
) -> Result<SequenceBatch, ModelError> {
    let m = user_units.len();
    let n = item_units.len();
    if m > config.m_max {
        return Err(ModelError::HistoryTooLong {
            kind: "user",
            len: m,
            max: config.m_max,
        });
    }
    if n > config.n_max {
        return Err(ModelError::HistoryTooLong {
            kind: "item",
            len: n,
            max: config.n_max,
        });
    }

    let zero_row = tape.constant(Tensor::zeros(&[1, config.d]));
    let mut rows = Vec::with_capacity(1 + m + n + pad_slots);
    let mut mask = Vec::with_capacity(1 + m + n + pad_slots);
    let mut labels = Vec::with_capacity(1 + m + n + pad_slots);

    let mut place = |tape: &mut Tape,
                     unit: Option<NodeId>,
                     position: usize,
                     segment: usize,
                     label: UnitLabel| {
        match unit {
            Some(mut node) => {
                if config.use_pos {
                    let pos = tape.gather_rows(nodes.pos_emb, Rc::new(vec![position]));
                    node = tape.add(node, pos);
                }
                if config.use_seg {
                    let seg = tape.gather_rows(nodes.seg_emb, Rc::new(vec![segment]));
                    node = tape.add(node, seg);
                }
                rows.push(node);
                mask.push(true);
            }
            None => {
                rows.push(zero_row);
                mask.push(false);
            }
        }
        labels.push(label);
    };

    place(tape, Some(query), 0, 0, UnitLabel::Query);
    for (k, unit) in user_units.iter().enumerate() {
        place(tape, *unit, k + 1, 1, UnitLabel::UserReview(k as u32 + 1));
    }
    for (k, unit) in item_units.iter().enumerate() {
        place(tape, *unit, m + k + 1, 2, UnitLabel::ItemReview(k as u32 + 1));
    }
    for _ in 0..pad_slots {
        place(tape, None, 0, 0, UnitLabel::Pad);
    }

    let x = tape.concat_rows(&rows);
    Ok(SequenceBatch {
        x,
        mask: Rc::new(mask),
        labels,
        m,
        n,
    })
}

/// One multi-head self-attention sub-layer. Returns the mixed output and the
/// per-head attention matrices (softmax outputs) for tracing.
pub fn multi_head_attention(
    tape: &mut Tape,
    layer: &LayerNodes,
    x: NodeId,
    mask: &Rc<Vec<bool>>,
    config: &RtmConfig,
) -> Result<(NodeId, Vec<NodeId>), ModelError> {
    let q = tape.matmul(x, layer.attn_q);
    let k = tape.matmul(x, layer.attn_k);
    let v = tape.matmul(x, layer.attn_v);
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(config.heads);
    let mut probs = Vec::with_capacity(config.heads);
    for j in 0..config.heads {
        let cols = j * dh..(j + 1) * dh;
        let qj = tape.slice_cols(q, cols.clone());
        let kj = tape.slice_cols(k, cols.clone());
        let vj = tape.slice_cols(v, cols);
        let logits = tape.matmul_nt(qj, kj);
        let scaled = tape.scale(logits, scale);
        let p = tape.softmax_rows_masked(scaled, mask.clone())?;
        outs.push(tape.matmul(p, vj));
        probs.push(p);
    }
    let concat = tape.concat_cols(&outs);
    let mixed = tape.matmul(concat, layer.attn_out);
    Ok((mixed, probs))
}

/// One transformer layer: attention and position-wise FFN, each wrapped in a
/// residual connection followed by layer normalization.
pub fn transformer_layer(
    tape: &mut Tape,
    layer: &LayerNodes,
    x: NodeId,
    mask: &Rc<Vec<bool>>,
    config: &RtmConfig,
) -> Result<(NodeId, Vec<NodeId>), ModelError> {
    let (attn, probs) = multi_head_attention(tape, layer, x, mask, config)?;
    let res1 = tape.add(x, attn);
    let y = tape.layer_norm_rows(res1, layer.ln1_gain, layer.ln1_bias, LN_EPS);
    let h = tape.matmul(y, layer.ffn_w1);
    let h = tape.add_row_broadcast(h, layer.ffn_b1);
    let h = match config.activation {
        Activation::Relu => tape.relu(h),
        Activation::Gelu => tape.gelu(h),
    };
    let h = tape.matmul(h, layer.ffn_w2);
    let ffn = tape.add_row_broadcast(h, layer.ffn_b2);
    let res2 = tape.add(y, ffn);
    let out = tape.layer_norm_rows(res2, layer.ln2_gain, layer.ln2_bias, LN_EPS);
    Ok((out, probs))
}

/// A completed scoring forward pass on some tape.
pub struct ForwardOutput {
    pub score: NodeId,
    /// Per layer, per head: the full (L, L) attention matrices.
    pub attention: Vec<Vec<NodeId>>,
    pub mask: Rc<Vec<bool>>,
    pub labels: Vec<UnitLabel>,
}

/// Run the layer stack over an assembled sequence and read the score from
/// the query row.
pub fn forward_score(
    tape: &mut Tape,
    nodes: &ParamNodes,
    config: &RtmConfig,
    seq: SequenceBatch,
) -> Result<ForwardOutput, ModelError> {
    let mut x = seq.x;
    let mut attention = Vec::with_capacity(nodes.layers.len());
    for layer in &nodes.layers {
        let (next, probs) = transformer_layer(tape, layer, x, &seq.mask, config)?;
        x = next;
        attention.push(probs);
    }
    let q_final = tape.slice_rows(x, 0..1);
    let projected = tape.matmul(q_final, nodes.out_w);
    let score = tape.sum(projected);
    Ok(ForwardOutput {
        score,
        attention,
        mask: seq.mask,
        labels: seq.labels,
    })
}

/// Token-resolved inputs for scoring one (query, user, item) triple.
///
/// Reviews must already be cut to `review_len_max` tokens and histories to
/// the m/n caps; [`crate::train::TrainData`] does this when resolving.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreInputs {
    pub query: Vec<u32>,
    pub user_reviews: Vec<Vec<u32>>,
    pub item_reviews: Vec<Vec<u32>>,
    /// Used as a single pseudo-review when `item_reviews` is empty.
    pub item_description: Vec<u32>,
    /// Extra masked positions appended after the real units.
    pub pad_slots: usize,
}

/// Encode all units of one example and run the scorer. The query and user
/// units may be shared across items by callers that score several candidates
/// for one (query, user); see [`build_and_score_with_units`].
pub fn build_and_score(
    tape: &mut Tape,
    nodes: &ParamNodes,
    config: &RtmConfig,
    inputs: &ScoreInputs,
) -> Result<ForwardOutput, ModelError> {
    let query =
        encode_unit(tape, nodes, &inputs.query, UnitKind::Query).ok_or(ModelError::EmptyQuery)?;
    let user_units: Vec<Option<NodeId>> = inputs
        .user_reviews
        .iter()
        .map(|r| encode_unit(tape, nodes, r, UnitKind::Review))
        .collect();
    build_and_score_with_units(tape, nodes, config, query, &user_units, inputs)
}

/// Scoring continuation for callers that already encoded the query and user
/// units (they are item-independent and can be reused across candidates).
pub fn build_and_score_with_units(
    tape: &mut Tape,
    nodes: &ParamNodes,
    config: &RtmConfig,
    query: NodeId,
    user_units: &[Option<NodeId>],
    inputs: &ScoreInputs,
) -> Result<ForwardOutput, ModelError> {
    let item_units: Vec<Option<NodeId>> = if inputs.item_reviews.is_empty() {
        // description fallback: a single pseudo-review in an item slot
        vec![encode_unit(
            tape,
            nodes,
            &inputs.item_description,
            UnitKind::Review,
        )]
    } else {
        inputs
            .item_reviews
            .iter()
            .map(|r| encode_unit(tape, nodes, r, UnitKind::Review))
            .collect()
    };
    let seq = build_input_sequence(
        tape,
        nodes,
        config,
        query,
        user_units,
        &item_units,
        inputs.pad_slots,
    )?;
    forward_score(tape, nodes, config, seq)
}

/// Score one item for a (query, user) pair. A pure function of
/// (inputs, params, config); parameters are not mutated and any number of
/// calls may run concurrently against one parameter snapshot.
pub fn score_item(
    params: &RtmParameters,
    config: &RtmConfig,
    inputs: &ScoreInputs,
) -> Result<(f64, AttentionTrace), ModelError> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let out = build_and_score(&mut tape, &nodes, config, inputs)?;
    let score = tape.value(out.score).item();
    let trace = AttentionTrace::extract(&tape, &out);
    Ok((score, trace))
}
