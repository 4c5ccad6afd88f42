//! Flat `key = value` run configuration with override layering: defaults,
//! then the config file, then command-line `--set` flags.

use std::path::{Path, PathBuf};

use crate::corpus::synth::SynthConfig;
use crate::model::{Activation, RtmConfig};
use crate::train::{LossMode, TrainSettings, W2vConfig};

/// Everything a pipeline run can be told. Unknown keys are rejected.
#[derive(Clone, Debug)]
pub struct RunConfig {
    // paths
    pub reviews: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub workdir: PathBuf,
    pub stopwords: Option<PathBuf>,
    /// Optional pretrained word-embedding table for training.
    pub embeddings: Option<PathBuf>,
    // corpus
    pub k_core: usize,
    pub split_seed: u64,
    pub train_query_fraction: f64,
    // lexical
    pub candidates_k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    // model
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub use_pos: bool,
    pub use_seg: bool,
    pub m_max: usize,
    pub n_max: usize,
    pub review_len_max: usize,
    pub k_neg: usize,
    pub activation: Activation,
    // training
    pub epochs: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub warmup: u64,
    pub train_seed: u64,
    pub loss_mode: LossMode,
    // word2vec pretraining
    pub w2v_epochs: usize,
    pub w2v_window: usize,
    pub w2v_negative: usize,
    pub w2v_subsample: f64,
    pub w2v_lr: f64,
    // evaluation
    pub metric_k: usize,
    pub sigtest_rounds: usize,
    pub sigtest_seed: u64,
    // synthetic corpus
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_aspects: usize,
    pub synth_group_size: usize,
    pub synth_vocab_per_aspect: usize,
    pub synth_reviews_per_user: usize,
    pub synth_review_len: usize,
    pub synth_noise_rate: f64,
    pub synth_cat_rate: f64,
    pub synth_pref_strength: f64,
    pub synth_drift: bool,
    pub synth_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reviews: None,
            meta: None,
            workdir: PathBuf::from("work"),
            stopwords: None,
            embeddings: None,
            k_core: 5,
            split_seed: 42,
            train_query_fraction: 0.7,
            candidates_k: 100,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            d: 128,
            heads: 8,
            layers: 1,
            d_ff: 256,
            use_pos: true,
            use_seg: true,
            m_max: 10,
            n_max: 30,
            review_len_max: 100,
            k_neg: 5,
            activation: Activation::Relu,
            epochs: 30,
            batch: 128,
            base_lr: 0.005,
            warmup: 8000,
            train_seed: 1,
            loss_mode: LossMode::Logistic,
            w2v_epochs: 3,
            w2v_window: 5,
            w2v_negative: 5,
            w2v_subsample: 1e-5,
            w2v_lr: 0.025,
            metric_k: 20,
            sigtest_rounds: 100_000,
            sigtest_seed: 7,
            synth_users: 200,
            synth_items: 100,
            synth_aspects: 8,
            synth_group_size: 4,
            synth_vocab_per_aspect: 30,
            synth_reviews_per_user: 8,
            synth_review_len: 12,
            synth_noise_rate: 0.2,
            synth_cat_rate: 0.15,
            synth_pref_strength: 0.9,
            synth_drift: false,
            synth_seed: 7,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for key {key:?}: {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

impl RunConfig {
    /// Parse a config file and apply it over the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        config.apply_file(path)?;
        Ok(config)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let content = std::fs::read_to_string(path)?;
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::BadLine { line: idx + 1 })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply one `key = value` pair.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            key: &str,
            value: &str,
            expected: &'static str,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })
        }
        fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
            match value {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "boolean",
                }),
            }
        }
        match key {
            "reviews" => self.reviews = Some(PathBuf::from(value)),
            "meta" => self.meta = Some(PathBuf::from(value)),
            "workdir" => self.workdir = PathBuf::from(value),
            "stopwords" => self.stopwords = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "k_core" => self.k_core = parse(key, value, "integer >= 1")?,
            "split_seed" => self.split_seed = parse(key, value, "integer")?,
            "train_query_fraction" => {
                self.train_query_fraction = parse(key, value, "fraction in [0,1]")?
            }
            "candidates_k" => self.candidates_k = parse(key, value, "integer >= 1")?,
            "bm25_k1" => self.bm25_k1 = parse(key, value, "number")?,
            "bm25_b" => self.bm25_b = parse(key, value, "number")?,
            "d" => self.d = parse(key, value, "integer")?,
            "heads" => self.heads = parse(key, value, "integer")?,
            "layers" => self.layers = parse(key, value, "integer")?,
            "d_ff" => self.d_ff = parse(key, value, "integer")?,
            "use_pos" => self.use_pos = parse_bool(key, value)?,
            "use_seg" => self.use_seg = parse_bool(key, value)?,
            "m_max" => self.m_max = parse(key, value, "integer")?,
            "n_max" => self.n_max = parse(key, value, "integer")?,
            "review_len_max" => self.review_len_max = parse(key, value, "integer >= 1")?,
            "k_neg" => self.k_neg = parse(key, value, "integer >= 1")?,
            "activation" => {
                self.activation = Activation::parse(value).ok_or(ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "relu or gelu",
                })?
            }
            "epochs" => self.epochs = parse(key, value, "integer")?,
            "batch" => self.batch = parse(key, value, "integer >= 1")?,
            "base_lr" => self.base_lr = parse(key, value, "number")?,
            "warmup" => self.warmup = parse(key, value, "integer >= 1")?,
            "train_seed" => self.train_seed = parse(key, value, "integer")?,
            "loss_mode" => {
                self.loss_mode = LossMode::parse(value).ok_or(ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "logistic or sampled-softmax",
                })?
            }
            "w2v_epochs" => self.w2v_epochs = parse(key, value, "integer")?,
            "w2v_window" => self.w2v_window = parse(key, value, "integer >= 1")?,
            "w2v_negative" => self.w2v_negative = parse(key, value, "integer >= 1")?,
            "w2v_subsample" => self.w2v_subsample = parse(key, value, "number")?,
            "w2v_lr" => self.w2v_lr = parse(key, value, "number")?,
            "metric_k" => self.metric_k = parse(key, value, "integer >= 1")?,
            "sigtest_rounds" => self.sigtest_rounds = parse(key, value, "integer")?,
            "sigtest_seed" => self.sigtest_seed = parse(key, value, "integer")?,
            "synth_users" => self.synth_users = parse(key, value, "integer")?,
            "synth_items" => self.synth_items = parse(key, value, "integer")?,
            "synth_aspects" => self.synth_aspects = parse(key, value, "integer")?,
            "synth_group_size" => self.synth_group_size = parse(key, value, "integer >= 1")?,
            "synth_vocab_per_aspect" => {
                self.synth_vocab_per_aspect = parse(key, value, "integer")?
            }
            "synth_reviews_per_user" => {
                self.synth_reviews_per_user = parse(key, value, "integer")?
            }
            "synth_review_len" => self.synth_review_len = parse(key, value, "integer")?,
            "synth_noise_rate" => self.synth_noise_rate = parse(key, value, "number")?,
            "synth_cat_rate" => self.synth_cat_rate = parse(key, value, "number")?,
            "synth_pref_strength" => self.synth_pref_strength = parse(key, value, "number")?,
            "synth_drift" => self.synth_drift = parse_bool(key, value)?,
            "synth_seed" => self.synth_seed = parse(key, value, "integer")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Apply `key=value` override flags (they win over the file).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for entry in overrides {
            let (key, value) = entry.split_once('=').ok_or(ConfigError::BadLine { line: 0 })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn rtm_config(&self, vocab_size: usize) -> RtmConfig {
        RtmConfig {
            d: self.d,
            heads: self.heads,
            layers: self.layers,
            d_ff: self.d_ff,
            use_pos: self.use_pos,
            use_seg: self.use_seg,
            m_max: self.m_max,
            n_max: self.n_max,
            review_len_max: self.review_len_max,
            k_neg: self.k_neg,
            vocab_size,
            activation: self.activation,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch,
            base_lr: self.base_lr,
            warmup: self.warmup,
            seed: self.train_seed,
            mode: self.loss_mode,
        }
    }

    pub fn w2v_config(&self) -> W2vConfig {
        W2vConfig {
            dim: self.d,
            window: self.w2v_window,
            negative: self.w2v_negative,
            epochs: self.w2v_epochs,
            subsample: self.w2v_subsample,
            lr0: self.w2v_lr,
            seed: self.train_seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            users: self.synth_users,
            items: self.synth_items,
            aspects: self.synth_aspects,
            group_size: self.synth_group_size,
            vocab_per_aspect: self.synth_vocab_per_aspect,
            reviews_per_user: self.synth_reviews_per_user,
            review_len: self.synth_review_len,
            noise_rate: self.synth_noise_rate,
            cat_rate: self.synth_cat_rate,
            pref_strength: self.synth_pref_strength,
            drift: self.synth_drift,
            k_core: self.k_core,
        }
    }
}
