//! Personalized product-search re-ranking engine.
//!
//! The pipeline: ingest review corpora, filter to a k-core, synthesize
//! queries from category taxonomies, split chronologically, retrieve
//! candidates with BM25 over item reviews, re-rank them with a transformer
//! that encodes the sequence (query, user reviews, item reviews), evaluate
//! with MRR/NDCG@20/Recall@20 plus a Fisher randomization test, and explain
//! rankings from the attention weights.

pub mod binio;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod explain;
pub mod lexical;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod train;
