//! `nopevade`: corpus generation, classifier and agent training, three-way
//! evaluation and reporting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifact,
//! 4 numeric failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nopevade::harness::{self, ExperimentConfig};
use nopevade::Error;

#[derive(Parser)]
#[command(name = "nopevade", version)]
#[command(about = "NOP-insertion evasion experiments against a mnemonic CNN classifier")]
struct Cli {
    /// Experiment config (TOML, or JSON when the name ends in .json)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and split the synthetic corpus
    GenCorpus,
    /// Train the classifier and score it on the evaluation split
    TrainClassifier,
    /// Score the stored classifier on the evaluation split
    EvalClassifier,
    /// Train one family's agent
    TrainAgent {
        /// Family name or numeric id
        #[arg(long)]
        family: String,
    },
    /// Compare no attack, the random agent and the trained agents
    Evaluate {
        /// Random-agent episodes per sample
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Summarise stored traces
    Report {
        /// Results directory (defaults to the output directory)
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::MissingArtifact(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn resolve(cli: &Cli) -> nopevade::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> nopevade::Result<()> {
    let mut cfg = resolve(&cli)?;
    match cli.command {
        Command::GenCorpus => {
            let corpus = harness::gen_corpus(&cfg)?;
            println!("corpus written to {}", cfg.corpus_dir().display());
            println!("vocabulary: {} mnemonics", corpus.vocab.len());
            println!("{:<16} {:>6} {:>6} {:>6}", "family", "train", "val", "test");
            for c in harness::manifest_summary(&corpus) {
                println!("{:<16} {:>6} {:>6} {:>6}", c.family, c.train, c.val, c.test);
            }
        }
        Command::TrainClassifier => {
            let run = harness::train_classifier_step(&cfg)?;
            println!("best epoch: {}", run.best_epoch);
            println!("{} accuracy: {:.4}", cfg.eval_split, run.evaluation.accuracy);
            println!("confusion matrix: {}", cfg.classifier_dir().join("confusion.csv").display());
        }
        Command::EvalClassifier => {
            let eval = harness::eval_classifier_step(&cfg)?;
            println!("{} accuracy: {:.4}", cfg.eval_split, eval.accuracy);
            for (i, row) in eval.confusion.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:>4}")).collect();
                println!("{i:>3} |{}", cells.join(""));
            }
        }
        Command::TrainAgent { family } => {
            let run = harness::train_agent_step(&cfg, &family)?;
            println!(
                "family {}: {} episodes on {} samples ({} trivial), trailing evasion rate {:.2}",
                run.family,
                run.episodes,
                run.pool,
                run.trivial.len(),
                run.trailing_evasion_rate
            );
        }
        Command::Evaluate { repeats } => {
            if let Some(r) = repeats {
                cfg.eval.repeats = r;
            }
            let reports = harness::evaluate_step(&cfg)?;
            println!(
                "{:<16} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8}",
                "family", "n", "acc", "acc_rnd", "acc_dqn", "ins_rnd", "ins_dqn"
            );
            for r in &reports {
                println!(
                    "{:<16} {:>4} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                    r.family,
                    r.n_test,
                    r.accuracy_no_agent,
                    r.accuracy_random,
                    r.accuracy_dqn,
                    r.avg_insertions_random,
                    r.avg_insertions_dqn
                );
            }
        }
        Command::Report { results } => {
            let dir = results.unwrap_or_else(|| cfg.out.clone());
            let s = harness::report_step(&dir)?;
            let w = &s.accuracy_sample_weighted;
            println!("accuracy (sample-weighted): no agent {:.2}, random {:.2}, dqn {:.2}", w.no_agent, w.random, w.dqn);
            match s.insertion_reduction {
                Some(r) => println!("insertion reduction: {:.2}%", 100.0 * r),
                None => println!("insertion reduction: undefined"),
            }
            println!("summary: {}", dir.join("report").join("summary.md").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
