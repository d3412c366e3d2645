//! AdaDelta training with global-norm gradient clipping.
//!
//! Randomness is derived per epoch from (seed, epoch), never carried across
//! epochs, so resuming from an epoch checkpoint continues bit-identically
//! with an uninterrupted run.

use std::path::PathBuf;
use std::time::Instant;

use log::warn;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, TrainMeta};
use crate::data::{self, ExamplePair, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Tape, Tensor};

pub const RHO: f64 = 0.95;
pub const EPS: f64 = 1e-6;

struct Slot {
    name: String,
    param: Tensor,
    g2: Tensor,
    dx2: Tensor,
}

/// AdaDelta state: running averages of squared gradients and squared updates
/// for every parameter tensor.
pub struct AdaDelta {
    slots: Vec<Slot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN or infinity; nothing was changed.
    SkippedNonFinite,
}

impl AdaDelta {
    pub fn new(params: &ModelParams) -> AdaDelta {
        let slots = params
            .named()
            .into_iter()
            .map(|(name, param)| {
                let (r, c) = param.shape();
                Slot { name, param, g2: Tensor::zeros(r, c), dx2: Tensor::zeros(r, c) }
            })
            .collect();
        AdaDelta { slots }
    }

    /// Restore accumulators from checkpoint tensors named
    /// `opt.g2.<param>` / `opt.dx2.<param>`.
    pub fn from_named(params: &ModelParams, state: Vec<(String, Tensor)>) -> Result<AdaDelta> {
        let mut by_name: std::collections::HashMap<String, Tensor> = state.into_iter().collect();
        let mut opt = AdaDelta::new(params);
        for slot in &mut opt.slots {
            for (prefix, store) in
                [("opt.g2.", &mut slot.g2), ("opt.dx2.", &mut slot.dx2)]
            {
                let key = format!("{}{}", prefix, slot.name);
                let t = by_name
                    .remove(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {}", key)))?;
                if t.shape() != slot.param.shape() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer tensor {} has shape {}x{}, parameter is {}x{}",
                        key,
                        t.rows(),
                        t.cols(),
                        slot.param.rows(),
                        slot.param.cols()
                    )));
                }
                *store = t;
            }
        }
        if let Some(key) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected optimizer tensor {}", key)));
        }
        Ok(opt)
    }

    /// Accumulators as checkpoint tensors.
    pub fn named_state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.slots.len() * 2);
        for slot in &self.slots {
            out.push((format!("opt.g2.{}", slot.name), slot.g2.clone()));
            out.push((format!("opt.dx2.{}", slot.name), slot.dx2.clone()));
        }
        out
    }

    /// Apply one AdaDelta update from the gradients currently stored on the
    /// parameters. Gradients are scaled so their global L2 norm is at most
    /// `clip_norm` (0 disables clipping). A non-finite gradient anywhere
    /// skips the whole update.
    pub fn step(&mut self, clip_norm: f64) -> StepOutcome {
        let grads: Vec<Vec<f64>> = self
            .slots
            .iter()
            .map(|s| s.param.grad().expect("parameter tensors track gradients"))
            .collect();
        let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
        if !sq.is_finite() {
            return StepOutcome::SkippedNonFinite;
        }
        let norm = sq.sqrt();
        let scale = if clip_norm > 0.0 && norm > clip_norm { clip_norm / norm } else { 1.0 };

        for (slot, grad) in self.slots.iter_mut().zip(&grads) {
            slot.g2.with_data_mut(|g2| {
                slot.dx2.with_data_mut(|dx2| {
                    slot.param.with_data_mut(|x| {
                        for i in 0..x.len() {
                            let g = grad[i] * scale;
                            g2[i] = RHO * g2[i] + (1.0 - RHO) * g * g;
                            let dx = -((dx2[i] + EPS).sqrt() / (g2[i] + EPS).sqrt()) * g;
                            dx2[i] = RHO * dx2[i] + (1.0 - RHO) * dx * dx;
                            x[i] += dx;
                        }
                    });
                });
            });
        }
        StepOutcome::Applied
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Progress line every this many updates (0: epoch ends only).
    pub log_every: u64,
    /// Where to write per-epoch and best checkpoints; None skips saving.
    pub save_dir: Option<PathBuf>,
    /// Run configuration stored verbatim in every checkpoint written.
    pub run_config: Option<serde_json::Value>,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            epochs: 10,
            batch_size: 32,
            clip_norm: 1.0,
            seed: 1,
            log_every: 10,
            save_dir: None,
            run_config: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss_per_token: f64,
    pub updates: u64,
    pub skipped: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub meta: TrainMeta,
    pub epochs: Vec<EpochSummary>,
}

/// Model, optimizer, and the vocabularies needed to write checkpoints.
pub struct Trainer<'a> {
    pub params: &'a ModelParams,
    pub opt: &'a mut AdaDelta,
    pub src_vocab: &'a Vocabulary,
    pub tgt_vocab: &'a Vocabulary,
    pub label_vocab: Option<&'a Vocabulary>,
}

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Epoch-local RNG seed: splitmix64 finalizer over (seed, epoch, stream).
fn derive_seed(seed: u64, epoch: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Trainer<'_> {
    /// Train from `start.epoch` up to `opts.epochs`, emitting
    /// `epoch<TAB>update<TAB>loss/token<TAB>seconds` lines to `sink`.
    pub fn run(
        &mut self,
        examples: &[ExamplePair],
        opts: &TrainOptions,
        start: TrainMeta,
        sink: &mut dyn FnMut(&str),
    ) -> Result<TrainReport> {
        if examples.is_empty() {
            return Err(Error::data("no training examples survived preprocessing"));
        }
        if let Some(dir) = &opts.save_dir {
            std::fs::create_dir_all(dir)?;
        }
        let t0 = Instant::now();
        let mut meta = start;
        let mut summaries = Vec::new();

        for epoch in meta.epoch..opts.epochs {
            let mut shuffle_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, epoch as u64, SHUFFLE_STREAM));
            let mut dropout_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, epoch as u64, DROPOUT_STREAM));
            let batches = data::batches(examples, opts.batch_size, &mut shuffle_rng)?;

            let mut epoch_loss = 0.0;
            let mut epoch_tokens = 0usize;
            let mut updates_this_epoch = 0u64;
            let mut skipped = 0u64;
            for batch in &batches {
                self.params.zero_grads();
                let mut tape = Tape::new();
                let loss = self.params.batch_loss(&mut tape, batch, true, &mut dropout_rng)?;
                let loss_value = loss.item();
                let outcome = if loss_value.is_finite() {
                    tape.backward(&loss)?;
                    self.opt.step(opts.clip_norm)
                } else {
                    StepOutcome::SkippedNonFinite
                };
                match outcome {
                    StepOutcome::Applied => {
                        meta.update += 1;
                        updates_this_epoch += 1;
                        epoch_loss += loss_value;
                        epoch_tokens += batch.target_tokens;
                        if opts.log_every > 0 && meta.update % opts.log_every == 0 {
                            sink(&progress_line(epoch, meta.update, epoch_loss, epoch_tokens, t0));
                        }
                    }
                    StepOutcome::SkippedNonFinite => {
                        skipped += 1;
                        warn!(
                            "epoch {}: skipped an update with non-finite gradients",
                            epoch + 1
                        );
                    }
                }
            }

            let loss_per_token =
                if epoch_tokens > 0 { epoch_loss / epoch_tokens as f64 } else { f64::NAN };
            meta.epoch = epoch + 1;
            sink(&progress_line(epoch, meta.update, epoch_loss, epoch_tokens, t0));
            summaries.push(EpochSummary {
                epoch: epoch + 1,
                loss_per_token,
                updates: updates_this_epoch,
                skipped,
            });

            let improved = match meta.best_loss {
                Some(best) => loss_per_token < best,
                None => loss_per_token.is_finite(),
            };
            if improved {
                meta.best_loss = Some(loss_per_token);
            }
            if let Some(dir) = &opts.save_dir {
                let mut tensors = self.params.named();
                tensors.extend(self.opt.named_state());
                let path = dir.join(format!("epoch-{:03}.ckpt", epoch + 1));
                self.save(&path, &meta, opts.run_config.as_ref(), &tensors)?;
                if improved {
                    self.save(&dir.join("best.ckpt"), &meta, opts.run_config.as_ref(), &tensors)?;
                }
            }
        }
        Ok(TrainReport { meta, epochs: summaries })
    }

    fn save(
        &self,
        path: &std::path::Path,
        meta: &TrainMeta,
        run_config: Option<&serde_json::Value>,
        tensors: &[(String, Tensor)],
    ) -> Result<()> {
        checkpoint::save(
            path,
            &self.params.config,
            self.src_vocab,
            self.tgt_vocab,
            self.label_vocab,
            meta,
            run_config,
            tensors,
        )
    }
}

fn progress_line(epoch: usize, update: u64, loss: f64, tokens: usize, t0: Instant) -> String {
    let per_token = if tokens > 0 { loss / tokens as f64 } else { f64::NAN };
    format!(
        "{}\t{}\t{:.6}\t{:.1}",
        epoch + 1,
        update,
        per_token,
        t0.elapsed().as_secs_f64()
    )
}
