//! Round-based training: each round draws one training and one validation
//! trace, runs a flat-rate phase and a decaying-rate phase of plain gradient
//! descent, then resets the rate and keeps the weights for the next round.
//!
//! Mini-batch gradients are computed over fixed sub-chunks of windows that may
//! run in parallel; sub-chunk results are summed in a fixed order, so the
//! trained parameters do not depend on the execution mode or thread count.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{backward, forward, logloss, target_vector, DropoutMasks};
use super::LstmModel;
use crate::error::{Error, Result};
use crate::markov::hex;
use crate::seed::derive;
use crate::trace::Trace;

/// Windows per sequential accumulation unit inside a batch.
const SUB_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub rounds: usize,
    pub epochs_flat: usize,
    pub epochs_decay: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplier applied during the decay phase.
    pub decay: f64,
    pub batch_size: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Evenly strided subset of validation windows; `None` uses all of them.
    pub max_validation_windows: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            rounds: 1,
            epochs_flat: 10,
            epochs_decay: 20,
            learning_rate: 0.2,
            decay: 1.0 / 1.1,
            batch_size: 16,
            clip_norm: 5.0,
            max_validation_windows: None,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    pub fn epochs_per_round(&self) -> usize {
        self.epochs_flat + self.epochs_decay
    }

    /// Learning rate of 1-based `epoch` within a round.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decayed = epoch.saturating_sub(self.epochs_flat);
        self.learning_rate * self.decay.powi(decayed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.batch_size == 0 || self.epochs_per_round() == 0 {
            return Err(Error::InvalidSpec(
                "rounds, batch size and epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.decay > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidSpec(
                "learning rate, decay and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_trace: String,
    pub validation_trace: String,
    pub start_checksum: String,
    pub end_checksum: String,
    pub epochs: Vec<EpochMetrics>,
}

/// A window `seq[start..=end]` and the `n` indices that follow it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub start: usize,
    pub end: usize,
}

/// Every window ending at a position that still has `horizon` successors.
pub(crate) fn windows(len: usize, unroll: usize, horizon: usize) -> Vec<Window> {
    if len <= horizon {
        return Vec::new();
    }
    (0..len - horizon)
        .map(|end| Window {
            start: (end + 1).saturating_sub(unroll),
            end,
        })
        .collect()
}

fn strided<T: Copy>(items: &[T], max: Option<usize>) -> Vec<T> {
    match max {
        Some(m) if m > 0 && items.len() > m => (0..m).map(|i| items[i * items.len() / m]).collect(),
        _ => items.to_vec(),
    }
}

impl LstmModel {
    /// Mean inference-mode logloss over the given windows of `seq`.
    pub(crate) fn mean_loss(&self, seq: &[usize], wins: &[Window]) -> f64 {
        if wins.is_empty() {
            return f64::NAN;
        }
        let n = self.config.direct_horizon;
        let losses = crate::par::map(wins, |w| {
            let out = forward(&self.layout, &self.params, &seq[w.start..=w.end], None).output;
            logloss(&out, &target_vector(self.config.vocab, &seq[w.end + 1..w.end + 1 + n]))
        });
        losses.iter().sum::<f64>() / wins.len() as f64
    }

    /// Summed loss and gradient over one batch of windows.
    fn batch_gradient(&self, seq: &[usize], batch: &[(usize, Window)], mask_seed: u64) -> (f64, Vec<f64>) {
        let n = self.config.direct_horizon;
        let chunks: Vec<&[(usize, Window)]> = batch.chunks(SUB_CHUNK).collect();
        let partials = crate::par::map(&chunks, |chunk| {
            let mut grad = vec![0.0; self.layout.total];
            let mut loss = 0.0;
            for &(ordinal, w) in chunk.iter() {
                let window = &seq[w.start..=w.end];
                let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
                rng.set_stream(ordinal as u64);
                let masks = DropoutMasks::sample(&self.config, window.len(), &mut rng);
                let pass = forward(&self.layout, &self.params, window, Some(&masks));
                let targets = &seq[w.end + 1..w.end + 1 + n];
                loss += backward(&self.layout, &self.params, &pass, targets, Some(&masks), &mut grad);
            }
            (loss, grad)
        });
        let mut total = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v;
            }
        }
        (loss, total)
    }

    fn apply_update(&mut self, grad: &mut [f64], lr: f64, clip_norm: f64) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        for (p, g) in self.params.as_mut_slice().iter_mut().zip(grad.iter()) {
            *p -= lr * scale * g;
        }
    }

    /// Trains on `pool` following `schedule`. Weights carry over between
    /// rounds and the learning rate restarts every round.
    pub fn train(&mut self, pool: &[Trace], schedule: &TrainingSchedule) -> Result<Vec<RoundMetrics>> {
        schedule.validate()?;
        if pool.len() < 2 {
            return Err(Error::InsufficientTraces {
                needed: 2,
                available: pool.len(),
            });
        }
        let encoded: Vec<Vec<usize>> = pool.iter().map(|t| self.dict.indices(t)).collect();
        let mut prior = vec![0u64; self.config.vocab];
        for seq in &encoded {
            for &i in seq {
                prior[i] += 1;
            }
        }
        self.prior = prior;

        let (unroll, n) = (self.config.unroll_steps, self.config.direct_horizon);
        let mut metrics = Vec::with_capacity(schedule.rounds);
        for round in 0..schedule.rounds {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(schedule.seed, &format!("round-{round}")));
            let picked = sample(&mut rng, pool.len(), 2);
            let (ti, vi) = (picked.index(0), picked.index(1));
            let train_seq = &encoded[ti];
            let val_seq = &encoded[vi];
            let train_windows = windows(train_seq.len(), unroll, n);
            if train_windows.is_empty() {
                return Err(Error::InvalidSpec(format!(
                    "trace {} is too short to form a training window",
                    pool[ti].label
                )));
            }
            let val_windows = strided(&windows(val_seq.len(), unroll, n), schedule.max_validation_windows);

            let start_checksum = hex(&self.params.checksum());
            let mut epochs = Vec::with_capacity(schedule.epochs_per_round());
            for epoch in 1..=schedule.epochs_per_round() {
                let lr = schedule.learning_rate_at(epoch);
                let mut order: Vec<(usize, Window)> = train_windows.iter().copied().enumerate().collect();
                order.shuffle(&mut rng);
                let mask_seed = derive(schedule.seed, &format!("masks-{round}-{epoch}"));
                let mut loss_sum = 0.0;
                for batch in order.chunks(schedule.batch_size) {
                    let (loss, mut grad) = self.batch_gradient(train_seq, batch, mask_seed);
                    loss_sum += loss;
                    let inv = 1.0 / batch.len() as f64;
                    grad.iter_mut().for_each(|g| *g *= inv);
                    self.apply_update(&mut grad, lr, schedule.clip_norm);
                }
                epochs.push(EpochMetrics {
                    epoch,
                    learning_rate: lr,
                    train_loss: loss_sum / train_windows.len() as f64,
                    validation_loss: self.mean_loss(val_seq, &val_windows),
                });
            }
            self.rounds_trained += 1;
            metrics.push(RoundMetrics {
                round,
                train_trace: pool[ti].label.clone(),
                validation_trace: pool[vi].label.clone(),
                start_checksum,
                end_checksum: hex(&self.params.checksum()),
                epochs,
            });
        }
        if !self.params.all_finite() {
            return Err(Error::InvalidSpec("training diverged to non-finite parameters".into()));
        }
        Ok(metrics)
    }
}
