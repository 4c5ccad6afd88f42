//! First-stage lexical retrieval: tokenized inverted index, Okapi BM25, and
//! the popularity baseline.

pub mod bm25;
pub mod index;
pub mod rank;

pub use bm25::{bm25_rank, DEFAULT_B, DEFAULT_K1};
pub use index::InvertedIndex;
pub use rank::{popularity_rank, read_run, write_run, RankedList};
