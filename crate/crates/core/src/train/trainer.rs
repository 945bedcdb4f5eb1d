//! Per-note training loop with dev-set early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::NoteRecord;
use crate::error::{Error, Result};
use crate::metrics::{report, MetricsReport, PredictionSet};
use crate::model::Model;
use crate::rng::{derive_seed_indexed, seeded_rng};
use crate::tensor::{Tape, Tensor};

use super::{clip_global_norm, Adam};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    /// Gradients accumulate over this many notes before each optimizer
    /// step; notes are never padded into fixed-shape batches.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev micro-F1 improvement before stopping.
    pub patience: usize,
    /// Global-norm gradient clip; the shared kernel's gradient is a
    /// depth-fold sum, so it is the tensor this protects.
    pub clip_norm: Option<f64>,
    /// Binarization threshold for dev F1.
    pub threshold: f64,
    /// Cut-off for the dev P@k column of the log.
    pub eval_k: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 1e-3,
            batch_size: 1,
            max_epochs: 30,
            patience: 10,
            clip_norm: Some(5.0),
            threshold: 0.5,
            eval_k: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-note loss over the epoch.
    pub train_loss: f64,
    #[serde(flatten)]
    pub dev: MetricsReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_dev_micro_f1: f64,
    pub log: Vec<EpochLog>,
}

/// Eval-mode scores for a set of notes against the model's code universe.
pub fn collect_predictions(model: &Model, notes: &[NoteRecord]) -> Result<PredictionSet> {
    let m = model.config.code_count;
    let mut scores = Vec::with_capacity(notes.len() * m);
    let mut gold = Vec::with_capacity(notes.len() * m);
    for note in notes {
        let mut tape = Tape::new();
        let probs = model.forward(&mut tape, &note.token_ids, false, 0)?;
        scores.extend(probs.values().iter());
        let mut row = vec![false; m];
        for &id in &note.code_ids {
            row[id] = true;
        }
        gold.extend(row);
    }
    PredictionSet::new(notes.len(), m, scores, gold)
}

/// Trains in place; on return the model holds the parameters of the best
/// dev epoch. Deterministic given `seed`: the shuffle and dropout streams
/// are both derived from it.
pub fn train(
    model: &mut Model,
    train_set: &[NoteRecord],
    dev_set: &[NoteRecord],
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs non-empty train and dev splits".into(),
        ));
    }
    if settings.batch_size == 0 || settings.max_epochs == 0 {
        return Err(Error::InvalidArgument(
            "batch_size and max_epochs must be >= 1".into(),
        ));
    }
    let m = model.config.code_count;
    let params: Vec<Tensor> = model.params.named().into_iter().map(|(_, t)| t).collect();
    let mut optimizer = Adam::new(settings.lr, &params);
    model.params.zero_grads();

    let mut best_snapshot = model.params.snapshot();
    let mut best_micro_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs_since_best = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=settings.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed_indexed(
            seed,
            "train-shuffle",
            epoch as u64,
        )));

        let mut epoch_loss = 0.0;
        let mut pending = 0usize;
        for (step, &idx) in order.iter().enumerate() {
            let note = &train_set[idx];
            let targets = {
                let mut row = vec![0.0; m];
                for &id in &note.code_ids {
                    row[id] = 1.0;
                }
                Tensor::constant(1, m, row)?
            };
            let dropout_seed =
                derive_seed_indexed(seed, "dropout", (epoch * train_set.len() + step) as u64);
            let mut tape = Tape::new();
            let logits = model.forward_logits(&mut tape, &note.token_ids, true, dropout_seed)?;
            let loss = tape.bce_with_logits(&logits, &targets)?;
            let loss_value = loss.get_flat(0);
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    note_id: note.id.clone(),
                });
            }
            epoch_loss += loss_value;
            tape.backward(&loss)?;
            pending += 1;
            if pending == settings.batch_size || step + 1 == order.len() {
                if let Some(max_norm) = settings.clip_norm {
                    clip_global_norm(&params, max_norm);
                }
                optimizer.step(&params)?;
                pending = 0;
            }
        }

        let dev_preds = collect_predictions(model, dev_set)?;
        let dev = report(&dev_preds, settings.threshold, settings.eval_k)?;
        let micro_f1 = dev.micro_f1;
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            dev,
        });

        if micro_f1 > best_micro_f1 {
            best_micro_f1 = micro_f1;
            best_epoch = epoch;
            best_snapshot = model.params.snapshot();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= settings.patience {
                break;
            }
        }
    }

    model.params.restore(&best_snapshot)?;
    Ok(TrainOutcome {
        best_epoch,
        best_dev_micro_f1: best_micro_f1,
        log,
    })
}
