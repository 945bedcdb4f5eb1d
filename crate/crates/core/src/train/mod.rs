//! Optimization: Adam, the per-note training loop with early stopping,
//! and random hyper-parameter search.

mod adam;
mod search;
mod trainer;

pub use adam::{clip_global_norm, Adam};
pub use search::{
    random_search, sample_candidates, trials_to_csv, Candidate, SearchOutcome, SearchSpace,
    TrialContext, TrialResult,
};
pub use trainer::{collect_predictions, train, EpochLog, TrainOutcome, TrainSettings};
