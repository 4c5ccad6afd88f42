//! The review-transformer scoring model: unit encoding over review words,
//! input assembly with optional position/segment embeddings, masked
//! multi-head self-attention layers, and the scalar scoring head read from
//! the query position.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod trace;

pub use checkpoint::{Checkpoint, Section};
pub use config::{Activation, RtmConfig, LN_EPS};
pub use forward::{
    build_and_score, build_and_score_with_units, build_input_sequence, encode_unit,
    forward_score, multi_head_attention, score_item, transformer_layer, ForwardOutput,
    LayerNodes, ParamNodes, ScoreInputs, SequenceBatch, UnitKind,
};
pub use params::{LayerParams, RtmParameters};
pub use trace::{AttentionTrace, UnitLabel};

#[cfg(test)]
mod tests;
