//! Continuous-bag-of-words embedding pretraining with negative sampling.
//!
//! The mean of the context word vectors predicts the center word; one
//! positive and `negatives` sampled targets per position, negatives drawn
//! from the unigram distribution raised to 0.75. Fully deterministic
//! given the config seed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed_indexed, seeded_rng};
use crate::text::EmbeddingTable;

#[derive(Clone, Debug)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CbowStats {
    /// Mean loss per (center, target) pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// The seeded random table training starts from; `epochs = 0` returns it
/// unchanged.
pub fn initial_table(vocab_size: usize, cfg: &CbowConfig) -> EmbeddingTable {
    EmbeddingTable::random_init(vocab_size, cfg.dim, derive_seed(cfg.seed, "cbow-init"))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains CBOW word embeddings on an id-encoded corpus.
pub fn train_cbow(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &CbowConfig,
) -> Result<(EmbeddingTable, CbowStats)> {
    if cfg.dim < 1 {
        return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
    }
    if cfg.window < 1 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let total_tokens: usize = corpus.iter().map(Vec::len).sum();
    if corpus.is_empty() || total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    if let Some(&bad) = corpus.iter().flatten().find(|&&id| id >= vocab_size) {
        return Err(Error::IdOutOfRange {
            id: bad,
            rows: vocab_size,
        });
    }

    let dim = cfg.dim;
    let mut input = initial_table(vocab_size, cfg);
    let mut output = vec![0.0f64; vocab_size * dim];

    // Unigram^0.75 cumulative distribution for negative sampling.
    let mut counts = vec![0usize; vocab_size];
    for &id in corpus.iter().flatten() {
        counts[id] += 1;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total_weight: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total_weight;
        cumulative.push(acc);
    }

    let total_centers = (total_tokens * cfg.epochs.max(1)) as f64;
    let lr_floor = cfg.initial_lr * 1e-4;
    let mut processed = 0usize;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut hidden = vec![0.0f64; dim];
    let mut hidden_err = vec![0.0f64; dim];

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed_indexed(
            cfg.seed,
            "cbow-order",
            epoch as u64,
        )));
        let mut rng = seeded_rng(derive_seed_indexed(cfg.seed, "cbow-sample", epoch as u64));

        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        for &doc_idx in &order {
            let doc = &corpus[doc_idx];
            for center_pos in 0..doc.len() {
                processed += 1;
                let lr = (cfg.initial_lr * (1.0 - processed as f64 / total_centers)).max(lr_floor);
                let lo = center_pos.saturating_sub(cfg.window);
                let hi = (center_pos + cfg.window + 1).min(doc.len());
                let context: Vec<usize> = (lo..hi)
                    .filter(|&p| p != center_pos)
                    .map(|p| doc[p])
                    .collect();
                if context.is_empty() {
                    continue;
                }

                hidden.fill(0.0);
                let inv = 1.0 / context.len() as f64;
                for &c in &context {
                    for (h, v) in hidden.iter_mut().zip(input.row(c)) {
                        *h += v * inv;
                    }
                }

                hidden_err.fill(0.0);
                let center = doc[center_pos];
                for neg in 0..=cfg.negatives {
                    let (target, label) = if neg == 0 {
                        (center, 1.0)
                    } else {
                        let r: f64 = rng.random();
                        let idx = cumulative.partition_point(|&c| c <= r).min(vocab_size - 1);
                        if idx == center {
                            continue;
                        }
                        (idx, 0.0)
                    };
                    let out_row = &mut output[target * dim..(target + 1) * dim];
                    let score: f64 = hidden.iter().zip(out_row.iter()).map(|(h, o)| h * o).sum();
                    loss_sum += if label == 1.0 {
                        softplus(-score)
                    } else {
                        softplus(score)
                    };
                    pair_count += 1;
                    let g = sigmoid(score) - label;
                    for ((e, o), h) in hidden_err.iter_mut().zip(out_row.iter_mut()).zip(&hidden) {
                        *e += g * *o;
                        *o -= lr * g * h;
                    }
                }

                for &c in &context {
                    let row = &mut input.values[c * dim..(c + 1) * dim];
                    for (v, e) in row.iter_mut().zip(&hidden_err) {
                        *v -= lr * e * inv;
                    }
                }
            }
        }
        epoch_losses.push(if pair_count == 0 {
            0.0
        } else {
            loss_sum / pair_count as f64
        });
    }

    Ok((input, CbowStats { epoch_losses }))
}

/// Cosine similarity between two equal-length vectors; 0 when either is
/// all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
