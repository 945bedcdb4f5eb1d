//! Synthetic trigger dataset.
//!
//! Each code owns a disjoint set of trigger tokens drawn from the front
//! of the vocabulary pool; a note's gold set is exactly the codes whose
//! trigger was planted in it, optionally corrupted by symmetric label
//! flips. Code descriptions reuse the trigger tokens, so a description-
//! aware scorer has a direct path to the signal. Generation is
//! deterministic per seed and per split.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RawNote;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Total token pool; triggers claim the front of it.
    pub vocab_size: usize,
    pub n_codes: usize,
    pub train_notes: usize,
    pub dev_notes: usize,
    pub test_notes: usize,
    /// Inclusive token-length range per note.
    pub note_len: (usize, usize),
    pub triggers_per_code: usize,
    /// Probability that a code's trigger is planted in a note.
    pub plant_prob: f64,
    /// Per-label symmetric flip probability.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 500,
            n_codes: 20,
            train_notes: 2000,
            dev_notes: 300,
            test_notes: 300,
            note_len: (30, 40),
            triggers_per_code: 4,
            plant_prob: 0.5,
            noise_rate: 0.05,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub train: Vec<RawNote>,
    pub dev: Vec<RawNote>,
    pub test: Vec<RawNote>,
    /// `(code, description)` pairs; descriptions are the trigger tokens.
    pub code_descriptions: Vec<(String, String)>,
}

fn code_name(j: usize) -> String {
    format!("{:03}.{:02}", 100 + j / 100, j % 100)
}

fn trigger_token(code: usize, t: usize) -> String {
    format!("t{code:02}x{t}")
}

fn filler_token(i: usize) -> String {
    format!("w{i:04}")
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_codes == 0 || self.triggers_per_code == 0 {
            return fail("need at least one code and one trigger per code".into());
        }
        let trigger_count = self.n_codes * self.triggers_per_code;
        if trigger_count >= self.vocab_size {
            return fail(format!(
                "{trigger_count} trigger tokens exceed the vocabulary pool of {}",
                self.vocab_size
            ));
        }
        if self.note_len.0 == 0 || self.note_len.0 > self.note_len.1 {
            return fail(format!("bad note length range {:?}", self.note_len));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return fail(format!(
                "noise rate must be in [0, 0.5), got {}",
                self.noise_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.plant_prob) {
            return fail(format!(
                "plant probability must be in [0, 1], got {}",
                self.plant_prob
            ));
        }
        Ok(())
    }

    fn gen_split(&self, split: &str, count: usize) -> Vec<RawNote> {
        let mut rng = seeded_rng(derive_seed(self.seed, &format!("synth-{split}")));
        let filler_count = self.vocab_size - self.n_codes * self.triggers_per_code;
        (0..count)
            .map(|i| {
                let planted: Vec<bool> = (0..self.n_codes)
                    .map(|_| rng.random_bool(self.plant_prob))
                    .collect();
                let planted_count = planted.iter().filter(|&&p| p).count();
                let len = rng
                    .random_range(self.note_len.0..=self.note_len.1)
                    .max(planted_count * self.triggers_per_code);

                let mut tokens: Vec<String> = Vec::with_capacity(len);
                for (code, &is_planted) in planted.iter().enumerate() {
                    if is_planted {
                        for t in 0..self.triggers_per_code {
                            tokens.push(trigger_token(code, t));
                        }
                    }
                }
                while tokens.len() < len {
                    tokens.push(filler_token(rng.random_range(0..filler_count)));
                }
                tokens.shuffle(&mut rng);

                let codes: Vec<String> = planted
                    .iter()
                    .enumerate()
                    .filter_map(|(code, &is_planted)| {
                        let label = if rng.random_bool(self.noise_rate) {
                            !is_planted
                        } else {
                            is_planted
                        };
                        label.then(|| code_name(code))
                    })
                    .collect();

                RawNote {
                    id: format!("{split}-{i:05}"),
                    text: tokens.join(" "),
                    codes,
                }
            })
            .collect()
    }
}

/// Generates the three splits and the code-description table.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let code_descriptions = (0..spec.n_codes)
        .map(|code| {
            let desc = (0..spec.triggers_per_code)
                .map(|t| trigger_token(code, t))
                .collect::<Vec<_>>()
                .join(" ");
            (code_name(code), desc)
        })
        .collect();
    Ok(SynthData {
        train: spec.gen_split("train", spec.train_notes),
        dev: spec.gen_split("dev", spec.dev_notes),
        test: spec.gen_split("test", spec.test_notes),
        code_descriptions,
    })
}

/// Gold codes recoverable by trigger lookup alone; the rule-based oracle
/// for noise-free data.
pub fn trigger_oracle_codes(spec: &SynthSpec, text: &str) -> Vec<String> {
    let tokens: std::collections::HashSet<&str> = text.split_whitespace().collect();
    (0..spec.n_codes)
        .filter(|&code| {
            (0..spec.triggers_per_code).any(|t| tokens.contains(trigger_token(code, t).as_str()))
        })
        .map(code_name)
        .collect()
}
