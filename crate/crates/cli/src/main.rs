//! Operator command line for the gated-CNN note-code pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gated_cnn_nci::error::Error;
use gated_cnn_nci::model::Variant;
use gated_cnn_nci::pipeline::{
    ablation_to_csv, evaluate_checkpoint, full_model_grad_check, predict_notes, preprocess,
    run_ablation, run_search, train_embeddings, train_model, write_synth_files, PreprocessOptions,
    RunConfig,
};
use gated_cnn_nci::synth::SynthSpec;
use gated_cnn_nci::tensor::{worst_rel_err, GradCheckConfig};
use gated_cnn_nci::text::CbowConfig;
use gated_cnn_nci::train::trials_to_csv;

#[derive(Parser)]
#[command(
    name = "gated-cnn-nci",
    version,
    about = "Multi-label code assignment over text: synthesize data, preprocess, pretrain embeddings, train, evaluate, predict"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Full,
    NoNci,
    NoGating,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoNci => Variant::NoNci,
            VariantArg::NoGating => Variant::NoGating,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for train/dev/test JSONL and codes.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    codes: usize,
    #[arg(long, default_value_t = 2000)]
    train_notes: usize,
    #[arg(long, default_value_t = 300)]
    dev_notes: usize,
    #[arg(long, default_value_t = 300)]
    test_notes: usize,
    #[arg(long, default_value_t = 30)]
    min_len: usize,
    #[arg(long, default_value_t = 40)]
    max_len: usize,
    #[arg(long, default_value_t = 4)]
    triggers: usize,
    #[arg(long, default_value_t = 0.5)]
    plant_prob: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Training-split notes JSONL (vocabulary and code universe come
    /// from here).
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Code descriptions TSV: code<TAB>description.
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    min_doc_count: usize,
    #[arg(long, default_value_t = 2500)]
    max_len: usize,
}

#[derive(Args)]
struct EmbeddingsArgs {
    /// Preprocessed data directory.
    #[arg(long)]
    data: PathBuf,
    /// Embedding text file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: PathBuf,
    /// JSON file of model/optimizer hyper-parameters; defaults apply to
    /// anything omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Raw notes JSONL to score.
    #[arg(long)]
    notes: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    tokens: usize,
    #[arg(long, default_value_t = 5)]
    codes: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    variant: VariantArg,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Directory for ablation.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Directory for trials.csv and best_config.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    budget: usize,
    #[arg(long, default_value_t = 2)]
    epochs_per_trial: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trigger dataset (notes JSONL + codes TSV).
    Synth(SynthArgs),
    /// Tokenize, build the vocabulary and code set, encode all splits.
    Preprocess(PreprocessArgs),
    /// Pretrain CBOW word embeddings on the encoded training split.
    TrainEmbeddings(EmbeddingsArgs),
    /// Train a model and write the best checkpoint plus a JSONL log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and print the metrics report.
    Eval(EvalArgs),
    /// Score raw notes and emit the top-k codes per note as JSONL.
    Predict(PredictArgs),
    /// Finite-difference check of the full-model gradients.
    Gradcheck(GradcheckArgs),
    /// Train the full model and both ablation variants, emit the
    /// comparison table.
    Ablate(AblateArgs),
    /// Random hyper-parameter search; emits the trial table and the best
    /// configuration.
    Search(SearchArgs),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        Error::Io(_)
        | Error::File { .. }
        | Error::Json { .. }
        | Error::DataFormat { .. }
        | Error::HashMismatch { .. }
        | Error::EmptyCorpus
        | Error::IdOutOfRange { .. } => 2,
        _ => 3,
    }
}

fn load_run_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(args) => {
            let spec = SynthSpec {
                vocab_size: args.vocab_size,
                n_codes: args.codes,
                train_notes: args.train_notes,
                dev_notes: args.dev_notes,
                test_notes: args.test_notes,
                note_len: (args.min_len, args.max_len),
                triggers_per_code: args.triggers,
                plant_prob: args.plant_prob,
                noise_rate: args.noise,
                seed: args.seed,
            };
            write_synth_files(&spec, &args.out)?;
            println!(
                "wrote {} train / {} dev / {} test notes and {} code descriptions to {}",
                spec.train_notes,
                spec.dev_notes,
                spec.test_notes,
                spec.n_codes,
                args.out.display()
            );
        }
        Command::Preprocess(args) => {
            let summary = preprocess(
                &args.train,
                args.dev.as_deref(),
                args.test.as_deref(),
                &args.codes,
                &args.out,
                &PreprocessOptions {
                    min_doc_count: args.min_doc_count,
                    max_len: args.max_len,
                },
            )?;
            for code in &summary.missing_descriptions {
                eprintln!("warning: code {code} has no description; using an empty one");
            }
            if summary.unknown_code_refs > 0 {
                eprintln!(
                    "warning: dropped {} code references outside the training code universe",
                    summary.unknown_code_refs
                );
            }
            if summary.dropped_empty > 0 {
                eprintln!(
                    "warning: skipped {} notes that tokenized to nothing",
                    summary.dropped_empty
                );
            }
            println!(
                "vocabulary {} tokens, {} codes; encoded splits: {}",
                summary.vocab_size,
                summary.code_count,
                summary
                    .split_counts
                    .iter()
                    .map(|(name, count)| format!("{name}={count}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        Command::TrainEmbeddings(args) => {
            let cfg = CbowConfig {
                dim: args.dim,
                window: args.window,
                negatives: args.negatives,
                epochs: args.epochs,
                initial_lr: args.lr,
                seed: args.seed,
            };
            let stats = train_embeddings(&args.data, &args.out, &cfg)?;
            println!(
                "trained {}-dim embeddings for {} epochs; per-epoch loss: {}",
                args.dim,
                args.epochs,
                stats
                    .epoch_losses
                    .iter()
                    .map(|l| format!("{l:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            println!("wrote {}", args.out.display());
        }
        Command::Train(args) => {
            let run_cfg = load_run_config(&args.config)?;
            let artifacts = train_model(
                &args.data,
                &args.embeddings,
                &run_cfg,
                args.variant.into(),
                &args.out,
                args.seed,
            )?;
            for entry in &artifacts.outcome.log {
                println!(
                    "epoch {:>3}  train_loss {:>8.4}  dev_micro_f1 {:.4}  dev_p@{} {:.4}",
                    entry.epoch,
                    entry.train_loss,
                    entry.dev.micro_f1,
                    entry.dev.k,
                    entry.dev.p_at_k
                );
            }
            println!(
                "best dev micro-F1 {:.4} at epoch {}; checkpoint {}",
                artifacts.outcome.best_dev_micro_f1,
                artifacts.outcome.best_epoch,
                artifacts.checkpoint_path.display()
            );
        }
        Command::Eval(args) => {
            let report = evaluate_checkpoint(
                &args.checkpoint,
                &args.data,
                &args.split,
                args.threshold,
                args.k,
            )?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{json}");
            if let Some(out) = &args.out {
                fs::write(out, format!("{json}\n"))?;
            }
        }
        Command::Predict(args) => {
            let (records, skipped) =
                predict_notes(&args.checkpoint, &args.data, &args.notes, args.k)?;
            if skipped > 0 {
                eprintln!("warning: skipped {skipped} notes that tokenized to nothing");
            }
            let mut lines = String::new();
            for record in &records {
                lines.push_str(&serde_json::to_string(record).expect("record serializes"));
                lines.push('\n');
            }
            match &args.out {
                Some(path) => {
                    fs::write(path, &lines)?;
                    println!("wrote {} predictions to {}", records.len(), path.display());
                }
                None => print!("{lines}"),
            }
        }
        Command::Gradcheck(args) => {
            let cfg = GradCheckConfig {
                eps: args.eps,
                max_samples: 100,
                seed: args.seed,
            };
            let reports = full_model_grad_check(
                args.variant.into(),
                args.tokens,
                args.codes,
                args.seed,
                &cfg,
            )?;
            for r in &reports {
                println!(
                    "{:<12} checked {:>4} elements  max rel err {:.3e}",
                    r.name, r.checked, r.max_rel_err
                );
            }
            let worst = worst_rel_err(&reports);
            println!(
                "max relative error {worst:.3e} (tolerance {:.1e})",
                args.tolerance
            );
            if worst >= args.tolerance {
                eprintln!("error: gradient check failed");
                std::process::exit(3);
            }
        }
        Command::Ablate(args) => {
            let run_cfg = load_run_config(&args.config)?;
            let rows = run_ablation(&args.data, &args.embeddings, &run_cfg, args.seed)?;
            let csv = ablation_to_csv(&rows);
            print!("{csv}");
            fs::create_dir_all(&args.out)?;
            let path = args.out.join("ablation.csv");
            fs::write(&path, csv)?;
            println!("wrote {}", path.display());
        }
        Command::Search(args) => {
            let run_cfg = load_run_config(&args.config)?;
            let outcome = run_search(
                &args.data,
                &args.embeddings,
                &run_cfg,
                args.budget,
                args.epochs_per_trial,
                args.seed,
            )?;
            let csv = trials_to_csv(&outcome.trials);
            print!("{csv}");
            fs::create_dir_all(&args.out)?;
            fs::write(args.out.join("trials.csv"), &csv)?;
            let best = serde_json::to_string_pretty(&outcome.best).expect("candidate serializes");
            fs::write(args.out.join("best_config.json"), format!("{best}\n"))?;
            println!(
                "best trial {} (dev micro-F1 {:.4}); wrote {}",
                outcome.best_trial,
                outcome.trials[outcome.best_trial].dev_micro_f1,
                args.out.join("trials.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap pre-formats its own message.
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
