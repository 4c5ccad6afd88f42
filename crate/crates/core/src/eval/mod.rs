//! Ranked-list evaluation (MRR, NDCG@k, Recall@k) and the Fisher
//! randomization significance test.

pub mod fisher;
pub mod metrics;

pub use fisher::{fisher_monte_carlo, fisher_randomization_test, EXHAUSTIVE_LIMIT};
pub use metrics::{evaluate_run, mrr, ndcg_at_k, recall_at_k, MetricReport, Qrels};
