//! The epoch/batch training loop with warm-up learning-rate scheduling and
//! per-epoch checkpointing.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{ScoringContext, TrainExample};
use super::loss::{ns_loss, BatchEntry, LossMode};
use super::negatives::sample_negatives;
use crate::error::TrainError;
use crate::model::{Checkpoint, RtmParameters, Section};
use crate::numeric::{lr_at_step, AdamState, Tape};

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup: u64,
    pub seed: u64,
    pub mode: LossMode,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 30,
            batch_size: 128,
            base_lr: 0.005,
            warmup: 8000,
            seed: 1,
            mode: LossMode::Logistic,
        }
    }
}

/// Mutable training bookkeeping. Serializable into checkpoint sections so a
/// stopped run resumes exactly (epochs are reseeded individually, so the
/// random stream has no cross-epoch carryover).
pub struct TrainerState {
    pub adam: AdamState,
    pub global_step: u64,
    pub epoch: usize,
    pub seed: u64,
    /// Mean loss per completed epoch.
    pub loss_history: Vec<f64>,
}

impl TrainerState {
    pub fn new(params: &RtmParameters, seed: u64) -> TrainerState {
        let tensors: Vec<&crate::numeric::Tensor> =
            params.named().into_iter().map(|(_, t)| t).collect();
        TrainerState {
            adam: AdamState::new(&tensors),
            global_step: 0,
            epoch: 0,
            seed,
            loss_history: Vec::new(),
        }
    }

    /// Append trainer sections to a checkpoint.
    pub fn add_to(&self, ck: &mut Checkpoint, params: &RtmParameters) {
        ck.sections
            .insert("trainer.step".into(), Section::U64(vec![self.global_step]));
        ck.sections
            .insert("trainer.epoch".into(), Section::U64(vec![self.epoch as u64]));
        ck.sections
            .insert("trainer.seed".into(), Section::U64(vec![self.seed]));
        ck.sections.insert(
            "trainer.loss_history".into(),
            Section::F64(crate::numeric::Tensor::vector(self.loss_history.clone())),
        );
        ck.sections
            .insert("adam.t".into(), Section::U64(vec![self.adam.t]));
        for ((name, _), slot) in params.named().iter().zip(&self.adam.slots) {
            ck.sections
                .insert(format!("adam.m.{name}"), Section::F64(slot.m.clone()));
            ck.sections
                .insert(format!("adam.v.{name}"), Section::F64(slot.v.clone()));
        }
    }

    /// Restore trainer sections from a checkpoint, if present.
    pub fn from_checkpoint(ck: &Checkpoint, params: &RtmParameters) -> Option<TrainerState> {
        let step = ck.sections.get("trainer.step")?.as_u64()?[0];
        let epoch = ck.sections.get("trainer.epoch")?.as_u64()?[0] as usize;
        let seed = ck.sections.get("trainer.seed")?.as_u64()?[0];
        let loss_history = match ck.sections.get("trainer.loss_history") {
            Some(Section::F64(t)) => t.data().to_vec(),
            _ => Vec::new(),
        };
        let mut state = TrainerState::new(params, seed);
        state.global_step = step;
        state.epoch = epoch;
        state.loss_history = loss_history;
        state.adam.t = ck.sections.get("adam.t")?.as_u64()?[0];
        for ((name, _), slot) in params.named().iter().zip(state.adam.slots.iter_mut()) {
            slot.m = ck
                .sections
                .get(&format!("adam.m.{name}"))?
                .to_tensor()?;
            slot.v = ck
                .sections
                .get(&format!("adam.v.{name}"))?
                .to_tensor()?;
        }
        Some(state)
    }
}

/// Where training writes its artifacts.
#[derive(Default)]
pub struct TrainSinks<'a> {
    /// Per-step log lines: `epoch step lr loss`.
    pub log: Option<&'a mut dyn Write>,
    /// Per-epoch checkpoints (`epoch_N.ckpt`), plus `diverged.ckpt` on abort.
    pub checkpoint_dir: Option<&'a Path>,
    /// Called after each epoch with (epoch, mean loss).
    pub on_epoch: Option<&'a mut dyn FnMut(usize, f64)>,
}

/// Run (or resume) training until `settings.epochs` epochs are complete.
///
/// Single-threaded and deterministic: triples are shuffled per epoch under
/// a per-epoch seed, negatives drawn in example order, gradients averaged in
/// batch order.
pub fn train(
    ctx: &ScoringContext,
    examples: &[TrainExample],
    params: &mut RtmParameters,
    state: &mut TrainerState,
    settings: &TrainSettings,
    sinks: &mut TrainSinks,
) -> Result<(), TrainError> {
    assert!(settings.batch_size >= 1);
    let item_count = ctx.item_count();
    if item_count < ctx.config.k_neg + 1 {
        return Err(TrainError::CatalogueTooSmall {
            got: item_count,
            need: ctx.config.k_neg + 1,
        });
    }

    while state.epoch < settings.epochs {
        let epoch = state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(settings.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let ex = &examples[idx];
                let negatives =
                    sample_negatives(item_count, ex.positive, ctx.config.k_neg, &mut rng)?;
                batch.push(BatchEntry {
                    example: ex,
                    negatives,
                });
            }
            let mut tape = Tape::new();
            let nodes = params.register(&mut tape, true);
            let loss_node = ns_loss(&mut tape, &nodes, ctx, &batch, settings.mode)?;
            let loss = tape.value(loss_node).item();
            if !loss.is_finite() {
                if let Some(dir) = sinks.checkpoint_dir {
                    let mut ck =
                        Checkpoint::with_params(ctx.config.clone(), params, false);
                    state.add_to(&mut ck, params);
                    let _ = ck.save(&dir.join("diverged.ckpt"));
                }
                return Err(TrainError::Diverged {
                    epoch,
                    step: state.global_step + 1,
                });
            }
            let grads = tape.backward(loss_node)?;
            let grad_tensors = params.collect_gradients(&nodes, &tape, &grads)?;

            state.global_step += 1;
            let lr = lr_at_step(state.global_step, settings.base_lr, settings.warmup);
            let mut tensors = params.tensors_mut();
            let mut refs: Vec<&mut crate::numeric::Tensor> =
                tensors.iter_mut().map(|(_, t)| &mut **t).collect();
            let grad_refs: Vec<&crate::numeric::Tensor> = grad_tensors.iter().collect();
            state.adam.step(&mut refs, &grad_refs, lr);

            epoch_loss += loss;
            batches += 1;
            if let Some(log) = sinks.log.as_deref_mut() {
                writeln!(log, "{} {} {:.6e} {:.6e}", epoch, state.global_step, lr, loss)?;
            }
        }

        let mean_loss = if batches > 0 {
            epoch_loss / batches as f64
        } else {
            0.0
        };
        state.loss_history.push(mean_loss);
        state.epoch += 1;
        if let Some(dir) = sinks.checkpoint_dir {
            let mut ck = Checkpoint::with_params(ctx.config.clone(), params, false);
            state.add_to(&mut ck, params);
            ck.save(&dir.join(format!("epoch_{}.ckpt", state.epoch)))
                .map_err(|e| TrainError::Io(std::io::Error::other(e.to_string())))?;
        }
        if let Some(cb) = sinks.on_epoch.as_deref_mut() {
            cb(state.epoch, mean_loss);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Catalogue, Corpus, Partition, ReviewRecord, Vocab};
    use crate::model::RtmConfig;

    fn toy_corpus() -> Corpus {
        let mut reviews = Vec::new();
        let words = ["red", "blue", "green", "warm", "cool", "soft"];
        for u in 0..4 {
            for i in 0..5 {
                let w1 = words[(u + i) % words.len()];
                let w2 = words[(u * 2 + i) % words.len()];
                reviews.push(ReviewRecord {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i}"),
                    tokens: vec![w1.to_string(), w2.to_string()],
                    timestamp: (u * 5 + i) as i64,
                    rating: None,
                });
            }
        }
        Corpus {
            review_partition: vec![Partition::Train; reviews.len()],
            reviews,
            ..Corpus::default()
        }
    }

    fn toy_examples(ctx: &ScoringContext) -> Vec<TrainExample> {
        let vocab = ctx.vocab;
        (0..4)
            .flat_map(|u| {
                let user_id = format!("u{u}");
                let user = ctx.catalogue.user_index[&user_id];
                (0..3u32).map(move |i| TrainExample {
                    query_id: 0,
                    user,
                    positive: i,
                    timestamp: 100,
                    query: vocab.resolve(&["red".to_string()]),
                    user_reviews: vec![vec![0], vec![1]],
                })
            })
            .collect()
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let corpus = toy_corpus();
        let catalogue = Catalogue::build(&corpus);
        let vocab = Vocab::build(&corpus);
        let cfg = RtmConfig {
            d: 4,
            heads: 2,
            d_ff: 8,
            k_neg: 2,
            vocab_size: vocab.len(),
            ..RtmConfig::default()
        };
        let ctx = ScoringContext::new(&corpus, &catalogue, &vocab, cfg);
        let examples = toy_examples(&ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = RtmParameters::init(&ctx.config, &mut rng);
        let before = params.clone();
        let mut state = TrainerState::new(&params, 3);
        let settings = TrainSettings {
            epochs: 2,
            batch_size: 4,
            base_lr: 0.0,
            warmup: 10,
            seed: 3,
            mode: LossMode::Logistic,
        };
        train(
            &ctx,
            &examples,
            &mut params,
            &mut state,
            &settings,
            &mut TrainSinks::default(),
        )
        .unwrap();
        assert_eq!(params, before);
        assert_eq!(state.epoch, 2);
        assert!(state.global_step > 0);
    }

    #[test]
    fn same_seed_reproduces_loss_trajectory() {
        let corpus = toy_corpus();
        let catalogue = Catalogue::build(&corpus);
        let vocab = Vocab::build(&corpus);
        let cfg = RtmConfig {
            d: 4,
            heads: 2,
            d_ff: 8,
            k_neg: 2,
            vocab_size: vocab.len(),
            ..RtmConfig::default()
        };
        let ctx = ScoringContext::new(&corpus, &catalogue, &vocab, cfg);
        let examples = toy_examples(&ctx);
        let run = || -> (Vec<f64>, RtmParameters) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut params = RtmParameters::init(&ctx.config, &mut rng);
            let mut state = TrainerState::new(&params, 7);
            let settings = TrainSettings {
                epochs: 3,
                batch_size: 4,
                base_lr: 0.01,
                warmup: 10,
                seed: 7,
                mode: LossMode::Logistic,
            };
            train(
                &ctx,
                &examples,
                &mut params,
                &mut state,
                &settings,
                &mut TrainSinks::default(),
            )
            .unwrap();
            (state.loss_history, params)
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la.len(), 3);
        for (a, b) in la.iter().zip(&lb) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(pa, pb);
    }

    #[test]
    fn resume_reproduces_straight_run() {
        let corpus = toy_corpus();
        let catalogue = Catalogue::build(&corpus);
        let vocab = Vocab::build(&corpus);
        let cfg = RtmConfig {
            d: 4,
            heads: 2,
            d_ff: 8,
            k_neg: 2,
            vocab_size: vocab.len(),
            ..RtmConfig::default()
        };
        let ctx = ScoringContext::new(&corpus, &catalogue, &vocab, cfg);
        let examples = toy_examples(&ctx);
        let settings = |epochs: usize| TrainSettings {
            epochs,
            batch_size: 4,
            base_lr: 0.01,
            warmup: 10,
            seed: 11,
            mode: LossMode::Logistic,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let init = RtmParameters::init(&ctx.config, &mut rng);

        // straight 4-epoch run
        let mut straight = init.clone();
        let mut state = TrainerState::new(&straight, 11);
        train(
            &ctx,
            &examples,
            &mut straight,
            &mut state,
            &settings(4),
            &mut TrainSinks::default(),
        )
        .unwrap();

        // 2 epochs, checkpoint through the container, then resume to 4
        let mut resumed = init.clone();
        let mut state2 = TrainerState::new(&resumed, 11);
        train(
            &ctx,
            &examples,
            &mut resumed,
            &mut state2,
            &settings(2),
            &mut TrainSinks::default(),
        )
        .unwrap();
        let mut ck = Checkpoint::with_params(ctx.config.clone(), &resumed, false);
        state2.add_to(&mut ck, &resumed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let mut resumed = loaded.to_params().unwrap();
        let mut state3 = TrainerState::from_checkpoint(&loaded, &resumed).unwrap();
        train(
            &ctx,
            &examples,
            &mut resumed,
            &mut state3,
            &settings(4),
            &mut TrainSinks::default(),
        )
        .unwrap();

        assert_eq!(straight, resumed);
        assert_eq!(state.loss_history.len(), state3.loss_history.len());
        for (a, b) in state.loss_history.iter().zip(&state3.loss_history) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
