//! File-level pipeline steps: synthesize, preprocess, pretrain
//! embeddings, train, evaluate, predict, gradient-check, ablate, search.
//! The command-line binary is a thin wrapper over these.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    read_code_descriptions_tsv, read_encoded_jsonl, read_notes_jsonl, write_code_descriptions_tsv,
    write_encoded_jsonl, write_notes_jsonl, CodeSet, NoteRecord, RawNote,
};
use crate::error::{Error, Result};
use crate::metrics::{report, top_k_indices, MetricsReport};
use crate::model::{
    load_checkpoint, save_checkpoint, HeadParams, Model, ModelConfig, ModelParams, Variant,
};
use crate::rng::{derive_seed, seeded_rng};
use crate::synth::{generate, SynthSpec};
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Tape};
use crate::text::{
    load_embeddings, save_embeddings, tokenize, train_cbow, CbowConfig, CbowStats, EmbeddingTable,
    Vocabulary,
};
use crate::train::{
    collect_predictions, random_search, train, Candidate, SearchOutcome, SearchSpace, TrainOutcome,
    TrainSettings, TrialContext,
};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const CODES_FILE: &str = "codes.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

pub fn encoded_split_file(split: &str) -> String {
    format!("{split}.encoded.jsonl")
}

/// Writes the three raw note splits and the code-description TSV.
pub fn write_synth_files(spec: &SynthSpec, out_dir: &Path) -> Result<()> {
    let data = generate(spec)?;
    fs::create_dir_all(out_dir)?;
    write_notes_jsonl(&out_dir.join("train.jsonl"), &data.train)?;
    write_notes_jsonl(&out_dir.join("dev.jsonl"), &data.dev)?;
    write_notes_jsonl(&out_dir.join("test.jsonl"), &data.test)?;
    write_code_descriptions_tsv(&out_dir.join("codes.tsv"), &data.code_descriptions)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub min_doc_count: usize,
    pub max_len: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_doc_count: 3,
            max_len: 2500,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PreprocessSummary {
    pub vocab_size: usize,
    pub code_count: usize,
    pub split_counts: Vec<(String, usize)>,
    /// Notes skipped because tokenization left nothing.
    pub dropped_empty: usize,
    /// Code references in dev/test that are outside the code universe.
    pub unknown_code_refs: usize,
    /// Codes observed in training data but absent from the TSV.
    pub missing_descriptions: Vec<String>,
}

/// Builds the vocabulary and code universe from the training split, then
/// encodes every provided split into `out_dir`.
pub fn preprocess(
    train_path: &Path,
    dev_path: Option<&Path>,
    test_path: Option<&Path>,
    codes_tsv: &Path,
    out_dir: &Path,
    opts: &PreprocessOptions,
) -> Result<PreprocessSummary> {
    let train_notes = read_notes_jsonl(train_path)?;
    if train_notes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let train_tokens: Vec<Vec<String>> = train_notes.iter().map(|n| tokenize(&n.text)).collect();
    let vocab = Vocabulary::build(&train_tokens, opts.min_doc_count)?;

    let description_pairs = read_code_descriptions_tsv(codes_tsv)?;
    let observed: BTreeSet<String> = train_notes
        .iter()
        .flat_map(|n| n.codes.iter().cloned())
        .collect();
    let (codes, missing_descriptions) = CodeSet::build(&description_pairs, &observed, &vocab);

    fs::create_dir_all(out_dir)?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;
    write_code_descriptions_tsv(&out_dir.join(CODES_FILE), &codes.description_pairs())?;

    let mut dropped_empty = 0usize;
    let mut unknown_code_refs = 0usize;
    let mut split_counts = Vec::new();
    let mut encode_split =
        |split: &str, notes: &[RawNote], tokens: Option<&[Vec<String>]>| -> Result<usize> {
            let mut records = Vec::with_capacity(notes.len());
            for (i, note) in notes.iter().enumerate() {
                let toks = match tokens {
                    Some(t) => t[i].clone(),
                    None => tokenize(&note.text),
                };
                if toks.is_empty() {
                    dropped_empty += 1;
                    continue;
                }
                let token_ids = vocab.encode(&toks, opts.max_len);
                let (code_ids, unknown) = codes.encode_codes(&note.codes);
                unknown_code_refs += unknown;
                records.push(NoteRecord {
                    id: note.id.clone(),
                    token_ids,
                    code_ids,
                });
            }
            write_encoded_jsonl(&out_dir.join(encoded_split_file(split)), &records)?;
            Ok(records.len())
        };

    split_counts.push((
        "train".to_string(),
        encode_split("train", &train_notes, Some(&train_tokens))?,
    ));
    if let Some(path) = dev_path {
        let notes = read_notes_jsonl(path)?;
        split_counts.push(("dev".to_string(), encode_split("dev", &notes, None)?));
    }
    if let Some(path) = test_path {
        let notes = read_notes_jsonl(path)?;
        split_counts.push(("test".to_string(), encode_split("test", &notes, None)?));
    }

    Ok(PreprocessSummary {
        vocab_size: vocab.len(),
        code_count: codes.len(),
        split_counts,
        dropped_empty,
        unknown_code_refs,
        missing_descriptions,
    })
}

/// Artifacts written by [`preprocess`], reloaded.
pub struct Preprocessed {
    pub vocab: Vocabulary,
    pub codes: CodeSet,
    pub train: Vec<NoteRecord>,
    pub dev: Vec<NoteRecord>,
    pub test: Vec<NoteRecord>,
}

impl Preprocessed {
    pub fn split(&self, name: &str) -> Result<&[NoteRecord]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?}; expected train, dev, or test"
            ))),
        }
    }
}

pub fn load_preprocessed(dir: &Path) -> Result<Preprocessed> {
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let pairs = read_code_descriptions_tsv(&dir.join(CODES_FILE))?;
    let (codes, _) = CodeSet::build(&pairs, &BTreeSet::new(), &vocab);
    let read_split = |split: &str| -> Result<Vec<NoteRecord>> {
        let path = dir.join(encoded_split_file(split));
        if path.exists() {
            read_encoded_jsonl(&path)
        } else {
            Ok(Vec::new())
        }
    };
    Ok(Preprocessed {
        vocab,
        codes,
        train: read_split("train")?,
        dev: read_split("dev")?,
        test: read_split("test")?,
    })
}

/// Pretrains CBOW embeddings on the encoded training split and writes
/// them in the text embedding format.
pub fn train_embeddings(data_dir: &Path, out_path: &Path, cfg: &CbowConfig) -> Result<CbowStats> {
    let pre = load_preprocessed(data_dir)?;
    let corpus: Vec<Vec<usize>> = pre.train.iter().map(|n| n.token_ids.clone()).collect();
    let (table, stats) = train_cbow(&corpus, pre.vocab.len(), cfg)?;
    save_embeddings(out_path, &pre.vocab, &table)?;
    Ok(stats)
}

/// Model and optimization hyper-parameters as read from `--config`.
/// Everything has a default, so a partial JSON file is fine. The
/// embedding width comes from the embeddings file and the vocabulary and
/// code counts from the data, never from here.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub gate_dim: usize,
    pub kernel_size: usize,
    pub levels: usize,
    /// Defaults to the doubling schedule 1, 2, 4, ...
    pub dilations: Option<Vec<usize>>,
    pub dropout: f64,
    pub max_len: usize,
    pub lstm_style_output: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: Option<f64>,
    pub threshold: f64,
    pub eval_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gate_dim: 25,
            kernel_size: 3,
            levels: 2,
            dilations: None,
            dropout: 0.2,
            max_len: 2500,
            lstm_style_output: false,
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

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn model_config(
        &self,
        vocab_size: usize,
        embed_dim: usize,
        code_count: usize,
        variant: Variant,
    ) -> ModelConfig {
        let mut cfg = ModelConfig {
            vocab_size,
            embed_dim,
            gate_dim: self.gate_dim,
            kernel_size: self.kernel_size,
            levels: self.levels,
            dilations: self
                .dilations
                .clone()
                .unwrap_or_else(|| ModelConfig::default_dilations(self.levels)),
            dropout: self.dropout,
            code_dim: 0,
            code_count,
            max_len: self.max_len,
            variant,
            lstm_style_output: self.lstm_style_output,
        };
        cfg.code_dim = cfg.feature_dim();
        cfg
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            clip_norm: self.clip_norm,
            threshold: self.threshold,
            eval_k: self.eval_k,
        }
    }
}

fn load_table_for(data: &Preprocessed, embeddings_path: &Path) -> Result<EmbeddingTable> {
    let (tokens, table) = load_embeddings(embeddings_path)?;
    if tokens != data.vocab.tokens() {
        return Err(Error::Config(format!(
            "embedding file {} does not match the vocabulary (token list differs)",
            embeddings_path.display()
        )));
    }
    Ok(table)
}

fn build_model(
    data: &Preprocessed,
    table: &EmbeddingTable,
    run: &RunConfig,
    variant: Variant,
    seed: u64,
) -> Result<Model> {
    let cfg = run.model_config(data.vocab.len(), table.dim, data.codes.len(), variant);
    let params = ModelParams::init(&cfg, Some(table), derive_seed(seed, "init"))?;
    Model::new(
        cfg,
        params,
        Rc::new(data.codes.description_ids().to_vec()),
        data.vocab.unk_id(),
    )
}

pub struct TrainArtifacts {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub outcome: TrainOutcome,
}

/// Full training run: load artifacts, train with early stopping, write
/// the best checkpoint and the per-epoch JSONL log.
pub fn train_model(
    data_dir: &Path,
    embeddings_path: &Path,
    run: &RunConfig,
    variant: Variant,
    out_dir: &Path,
    seed: u64,
) -> Result<TrainArtifacts> {
    let data = load_preprocessed(data_dir)?;
    let table = load_table_for(&data, embeddings_path)?;
    let mut model = build_model(&data, &table, run, variant, seed)?;
    let outcome = train(
        &mut model,
        &data.train,
        &data.dev,
        &run.train_settings(),
        seed,
    )?;

    fs::create_dir_all(out_dir)?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(
        &checkpoint_path,
        &model.config,
        &model.params,
        &data.vocab.content_hash(),
        &data.codes.content_hash(),
    )?;
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    let mut log_text = String::new();
    for entry in &outcome.log {
        log_text.push_str(&serde_json::to_string(entry).map_err(|e| Error::Json {
            path: log_path.display().to_string(),
            source: e,
        })?);
        log_text.push('\n');
    }
    fs::write(&log_path, log_text)?;

    Ok(TrainArtifacts {
        checkpoint_path,
        log_path,
        outcome,
    })
}

fn load_model_for_inference(checkpoint: &Path, data: &Preprocessed) -> Result<Model> {
    let (header, params) = load_checkpoint(checkpoint)?;
    header.verify_hashes(&data.vocab, &data.codes)?;
    Model::new(
        header.config,
        params,
        Rc::new(data.codes.description_ids().to_vec()),
        data.vocab.unk_id(),
    )
}

/// Evaluates a checkpoint on one encoded split.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data_dir: &Path,
    split: &str,
    threshold: f64,
    k: usize,
) -> Result<MetricsReport> {
    let data = load_preprocessed(data_dir)?;
    let model = load_model_for_inference(checkpoint, &data)?;
    let notes = data.split(split)?;
    if notes.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split:?} is empty")));
    }
    let preds = collect_predictions(&model, notes)?;
    report(&preds, threshold, k)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoredCode {
    pub code: String,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predictions: Vec<ScoredCode>,
}

/// Scores raw notes and keeps the top-k codes per note, using the same
/// tie rule as precision-at-k. Returns the records and the count of
/// notes skipped because they tokenized to nothing.
pub fn predict_notes(
    checkpoint: &Path,
    data_dir: &Path,
    notes_path: &Path,
    k: usize,
) -> Result<(Vec<PredictionRecord>, usize)> {
    let data = load_preprocessed(data_dir)?;
    let model = load_model_for_inference(checkpoint, &data)?;
    if k == 0 || k > model.config.code_count {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            model.config.code_count
        )));
    }
    let notes = read_notes_jsonl(notes_path)?;
    let mut records = Vec::with_capacity(notes.len());
    let mut skipped = 0usize;
    for note in &notes {
        let tokens = tokenize(&note.text);
        if tokens.is_empty() {
            skipped += 1;
            continue;
        }
        let token_ids = data.vocab.encode(&tokens, model.config.max_len);
        let mut tape = Tape::new();
        let probs = model.forward(&mut tape, &token_ids, false, 0)?;
        let scores = probs.to_vec();
        let predictions = top_k_indices(&scores, k)
            .into_iter()
            .map(|idx| ScoredCode {
                code: data.codes.code(idx).to_string(),
                score: scores[idx],
            })
            .collect();
        records.push(PredictionRecord {
            id: note.id.clone(),
            predictions,
        });
    }
    Ok((records, skipped))
}

/// Full-model gradient check on a self-contained toy instance.
///
/// The output head is nudged away from its zero initialization first;
/// otherwise no gradient reaches the encoder and the check is vacuous.
pub fn full_model_grad_check(
    variant: Variant,
    tokens: usize,
    codes: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>> {
    if tokens == 0 || codes == 0 {
        return Err(Error::InvalidArgument(
            "need at least one token and one code".into(),
        ));
    }
    let vocab_size = 30usize;
    let mut model_cfg = ModelConfig {
        vocab_size,
        embed_dim: 8,
        gate_dim: 4,
        kernel_size: 3,
        levels: 2,
        dilations: vec![1, 2],
        dropout: 0.0,
        code_dim: 16,
        code_count: codes,
        max_len: tokens.max(16),
        variant: Variant::Full,
        lstm_style_output: false,
    };
    model_cfg = model_cfg.for_variant(variant);

    let mut rng = seeded_rng(derive_seed(seed, "gradcheck-toy"));
    let table = EmbeddingTable::random_init(
        vocab_size,
        model_cfg.embed_dim,
        derive_seed(seed, "gradcheck-emb"),
    );
    let params = ModelParams::init(&model_cfg, Some(&table), seed)?;
    match &params.head {
        HeadParams::Interaction {
            out_scale,
            out_bias,
            ..
        } => {
            let scales: Vec<f64> = (0..codes).map(|_| rng.random_range(0.2..0.6)).collect();
            out_scale.set_values(&scales)?;
            let biases: Vec<f64> = (0..codes).map(|_| rng.random_range(-0.2..0.2)).collect();
            out_bias.set_values(&biases)?;
        }
        HeadParams::MaxPoolLinear { out_weight, .. } => {
            let n = out_weight.len();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            out_weight.set_values(&values)?;
        }
    }

    let descs: Vec<Vec<usize>> = (0..codes)
        .map(|_| (0..2).map(|_| rng.random_range(0..vocab_size)).collect())
        .collect();
    let model = Model::new(model_cfg, params, Rc::new(descs), 0)?;

    let note: Vec<usize> = (0..tokens)
        .map(|_| rng.random_range(0..vocab_size))
        .collect();
    let mut target_row: Vec<f64> = (0..codes)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    target_row[0] = 1.0;
    let targets = crate::tensor::Tensor::constant(1, codes, target_row)?;

    let named = model.params.named();
    let forward = move |tape: &mut Tape| {
        let logits = model.forward_logits(tape, &note, false, 0)?;
        tape.bce_with_logits(&logits, &targets)
    };
    grad_check(forward, &named, cfg)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub dev: MetricsReport,
}

/// Trains the full model and both ablations under one configuration and
/// budget, reporting dev metrics for each.
pub fn run_ablation(
    data_dir: &Path,
    embeddings_path: &Path,
    run: &RunConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let data = load_preprocessed(data_dir)?;
    let table = load_table_for(&data, embeddings_path)?;
    let mut rows = Vec::new();
    for variant in [Variant::Full, Variant::NoNci, Variant::NoGating] {
        let mut model = build_model(&data, &table, run, variant, seed)?;
        train(
            &mut model,
            &data.train,
            &data.dev,
            &run.train_settings(),
            seed,
        )?;
        let preds = collect_predictions(&model, &data.dev)?;
        let dev = report(&preds, run.threshold, run.eval_k)?;
        rows.push(AblationRow { variant, dev });
    }
    Ok(rows)
}

/// The three-row comparison table as CSV.
pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    let mut out = String::from("variant,macro_auc,micro_auc,macro_f1,micro_f1,p_at_k\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            row.variant,
            fmt(row.dev.macro_auc),
            fmt(row.dev.micro_auc),
            row.dev.macro_f1,
            row.dev.micro_f1,
            row.dev.p_at_k
        ));
    }
    out
}

/// Random hyper-parameter search over the preprocessed dataset.
pub fn run_search(
    data_dir: &Path,
    embeddings_path: &Path,
    run: &RunConfig,
    budget: usize,
    epochs_per_trial: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    let data = load_preprocessed(data_dir)?;
    let table = load_table_for(&data, embeddings_path)?;
    let base_config =
        run.model_config(data.vocab.len(), table.dim, data.codes.len(), Variant::Full);
    let base_candidate = Candidate {
        lr: run.lr,
        kernel_size: run.kernel_size,
        levels: run.levels,
        hidden_dim: base_config.feature_dim(),
    };
    let ctx = TrialContext {
        train_set: &data.train,
        dev_set: &data.dev,
        embedding: &table,
        code_descs: Rc::new(data.codes.description_ids().to_vec()),
        unk_id: data.vocab.unk_id(),
    };
    random_search(
        &SearchSpace::default(),
        &base_config,
        &base_candidate,
        budget,
        epochs_per_trial,
        &ctx,
        seed,
    )
}
