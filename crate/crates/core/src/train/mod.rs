//! Training: negative sampling, the likelihood estimator, the optimizer
//! loop, and skip-gram embedding pretraining.

pub mod data;
pub mod loss;
pub mod negatives;
pub mod trainer;
pub mod word2vec;

pub use data::{ItemData, ScoringContext, TrainExample};
pub use loss::{ns_loss, BatchEntry, LossMode};
pub use negatives::sample_negatives;
pub use trainer::{train, TrainSettings, TrainSinks, TrainerState};
pub use word2vec::{load_embeddings, pretrain_embeddings, save_embeddings, W2vConfig};
