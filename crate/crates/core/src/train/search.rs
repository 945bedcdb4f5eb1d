//! Random hyper-parameter search over learning rate, kernel size, depth,
//! and hidden width.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::NoteRecord;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::rng::{derive_seed, derive_seed_indexed, seeded_rng};
use crate::text::EmbeddingTable;

use super::{train, TrainSettings};

#[derive(Clone, Debug)]
pub struct SearchSpace {
    /// Log-uniform learning-rate interval.
    pub lr_range: (f64, f64),
    pub kernel_choices: Vec<usize>,
    pub level_choices: Vec<usize>,
    /// Encoder feature widths; each maps to gate_dim = hidden / 4, so
    /// a draw not divisible by 4 is rejected and resampled.
    pub hidden_choices: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr_range: (1e-6, 1e-2),
            kernel_choices: vec![2, 3, 5, 9],
            level_choices: vec![1, 2, 3, 4, 5],
            hidden_choices: vec![100, 200, 300, 400, 500, 600],
        }
    }
}

/// One candidate: a full model configuration plus its learning rate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Candidate {
    pub lr: f64,
    pub kernel_size: usize,
    pub levels: usize,
    pub hidden_dim: usize,
}

impl Candidate {
    pub fn to_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.kernel_size = self.kernel_size;
        cfg.levels = self.levels;
        cfg.dilations = ModelConfig::default_dilations(self.levels);
        cfg.gate_dim = self.hidden_dim / 4;
        cfg.code_dim = cfg.feature_dim();
        cfg
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub lr: f64,
    pub kernel_size: usize,
    pub levels: usize,
    pub hidden_dim: usize,
    pub gate_dim: usize,
    pub dev_micro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub best_trial: usize,
    pub trials: Vec<TrialResult>,
}

/// Everything one trial needs besides its sampled configuration.
pub struct TrialContext<'a> {
    pub train_set: &'a [NoteRecord],
    pub dev_set: &'a [NoteRecord],
    pub embedding: &'a EmbeddingTable,
    pub code_descs: Rc<Vec<Vec<usize>>>,
    pub unk_id: usize,
}

/// Draws the candidate list: the base configuration first, then
/// `budget - 1` random samples. Deterministic given the seed.
pub fn sample_candidates(
    space: &SearchSpace,
    base: &Candidate,
    budget: usize,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("search budget must be >= 1".into()));
    }
    if space.kernel_choices.is_empty()
        || space.level_choices.is_empty()
        || space.hidden_choices.is_empty()
    {
        return Err(Error::InvalidArgument("empty search space".into()));
    }
    let (lo, hi) = space.lr_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument(format!(
            "bad learning-rate range [{lo}, {hi}]"
        )));
    }
    let mut rng = seeded_rng(derive_seed(seed, "search-sample"));
    let mut out = vec![base.clone()];
    while out.len() < budget {
        let lr = 10f64.powf(rng.random_range(lo.log10()..=hi.log10()));
        let kernel_size = space.kernel_choices[rng.random_range(0..space.kernel_choices.len())];
        let levels = space.level_choices[rng.random_range(0..space.level_choices.len())];
        let mut hidden = None;
        for _ in 0..100 {
            let h = space.hidden_choices[rng.random_range(0..space.hidden_choices.len())];
            if h.is_multiple_of(4) {
                hidden = Some(h);
                break;
            }
        }
        let hidden_dim = hidden.ok_or_else(|| {
            Error::InvalidArgument("no hidden width divisible by 4 in the search space".into())
        })?;
        out.push(Candidate {
            lr,
            kernel_size,
            levels,
            hidden_dim,
        });
    }
    Ok(out)
}

/// Trains every candidate briefly and ranks by dev micro-F1 (ties keep
/// the earliest trial). Trial 0 is always the supplied base candidate, so
/// the best result can never fall below a single default run.
pub fn random_search(
    space: &SearchSpace,
    base_config: &ModelConfig,
    base_candidate: &Candidate,
    budget: usize,
    epochs_per_trial: usize,
    ctx: &TrialContext<'_>,
    seed: u64,
) -> Result<SearchOutcome> {
    let candidates = sample_candidates(space, base_candidate, budget, seed)?;
    let mut trials = Vec::with_capacity(candidates.len());
    let mut best_trial = 0usize;
    let mut best_f1 = f64::NEG_INFINITY;
    for (trial, cand) in candidates.iter().enumerate() {
        let cfg = cand.to_config(base_config);
        cfg.validate()?;
        let params = ModelParams::init(
            &cfg,
            Some(ctx.embedding),
            derive_seed_indexed(seed, "search-init", trial as u64),
        )?;
        let mut model = Model::new(cfg, params, Rc::clone(&ctx.code_descs), ctx.unk_id)?;
        let settings = TrainSettings {
            lr: cand.lr,
            max_epochs: epochs_per_trial,
            patience: epochs_per_trial,
            ..TrainSettings::default()
        };
        let outcome = train(
            &mut model,
            ctx.train_set,
            ctx.dev_set,
            &settings,
            derive_seed_indexed(seed, "search-train", trial as u64),
        )?;
        if outcome.best_dev_micro_f1 > best_f1 {
            best_f1 = outcome.best_dev_micro_f1;
            best_trial = trial;
        }
        trials.push(TrialResult {
            trial,
            lr: cand.lr,
            kernel_size: cand.kernel_size,
            levels: cand.levels,
            hidden_dim: cand.hidden_dim,
            gate_dim: cand.hidden_dim / 4,
            dev_micro_f1: outcome.best_dev_micro_f1,
            best_epoch: outcome.best_epoch,
        });
    }
    Ok(SearchOutcome {
        best: candidates[best_trial].clone(),
        best_trial,
        trials,
    })
}

/// Trial table as CSV, one row per candidate.
pub fn trials_to_csv(trials: &[TrialResult]) -> String {
    let mut out =
        String::from("trial,lr,kernel_size,levels,hidden_dim,gate_dim,dev_micro_f1,best_epoch\n");
    for t in trials {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.trial,
            t.lr,
            t.kernel_size,
            t.levels,
            t.hidden_dim,
            t.gate_dim,
            t.dev_micro_f1,
            t.best_epoch
        ));
    }
    out
}
