//! The experiment steps behind each CLI subcommand. Output layout under
//! `out`:
//!
//! ```text
//! corpus/                      generated corpus (see `corpus::write_corpus`)
//! classifier/checkpoint.json   metrics.jsonl  evaluation.json  confusion.csv
//! agents/<family>/checkpoint.json  train_log.jsonl  summary.json
//! eval/traces.jsonl  family_report.{csv,json}  series.json
//! report/summary.{json,md}  family_report.csv
//! ```
//!
//! Every step that consumes the config writes it, fully resolved, as
//! `config.json` next to its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, train_classifier, Classifier, Evaluation};
use crate::corpus::{generate_synthetic_corpus, load_corpus, split_corpus, write_corpus, Corpus, Split};
use crate::dqn::{greedy_episode, random_agent, train_agent, trailing_evasion_rate, EpisodeLog, QNetwork};
use crate::env::EvasionEnv;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{
    family_reports, read_traces, render_markdown, reports_to_csv, series, summarize, traces_to_jsonl, AgentKind,
    FamilyReport, Summary, TraceRecord,
};
use crate::rng;
use crate::tensor::Checkpoint;

/// Window of the trailing evasion-rate curve.
pub const EVASION_WINDOW: usize = 100;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path.display().to_string(), e))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::format(path.display().to_string(), e))?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join("config.json"), &(cfg.to_json() + "\n"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub family: String,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn manifest_summary(corpus: &Corpus) -> Vec<FamilyCounts> {
    (0..corpus.num_families())
        .map(|f| FamilyCounts {
            family: corpus.family_names[f].clone(),
            train: corpus.manifest.count(f, Split::Train),
            val: corpus.manifest.count(f, Split::Val),
            test: corpus.manifest.count(f, Split::Test),
        })
        .collect()
}

/// Generates the synthetic corpus, splits it and writes it to
/// `<out>/corpus`.
pub fn gen_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    cfg.validate()?;
    if cfg.corpus.dir.is_some() {
        return Err(Error::config("corpus.dir", "an existing corpus is configured; nothing to generate"));
    }
    let corpus = generate_synthetic_corpus(&cfg.corpus.synthetic, cfg.seed)?;
    let manifest = split_corpus(&corpus.manifest, cfg.split, cfg.seed)?;
    let corpus = corpus.with_manifest(manifest)?;
    let dir = cfg.corpus_dir();
    write_corpus(&corpus, &dir)?;
    write_config(cfg, &dir)?;
    Ok(corpus)
}

/// Loads the configured corpus, splitting it in memory when its manifest
/// carries no split column.
pub fn load_experiment_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let corpus = load_corpus(&cfg.corpus_dir())?;
    if corpus.manifest.entries.iter().all(|e| e.split.is_some()) {
        return Ok(corpus);
    }
    let manifest = split_corpus(&corpus.manifest, cfg.split, cfg.seed)?;
    corpus.with_manifest(manifest)
}

pub fn load_classifier(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Classifier> {
    let model = Classifier::from_checkpoint(&Checkpoint::load(&cfg.classifier_dir().join("checkpoint.json"))?)?;
    if model.vocab_size() != corpus.vocab.len() || model.classes() != corpus.num_families() {
        return Err(Error::Contract(format!(
            "classifier expects vocabulary {} and {} classes; corpus has {} and {}",
            model.vocab_size(),
            model.classes(),
            corpus.vocab.len(),
            corpus.num_families()
        )));
    }
    Ok(model)
}

fn confusion_csv(eval: &Evaluation, names: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("true\\predicted").chain(names.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(|e| Error::format("confusion.csv", e))?;
    for (i, row) in eval.confusion.iter().enumerate() {
        let cells: Vec<String> = std::iter::once(names[i].clone()).chain(row.iter().map(|c| c.to_string())).collect();
        w.write_record(&cells).map_err(|e| Error::format("confusion.csv", e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("confusion.csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_evaluation(cfg: &ExperimentConfig, corpus: &Corpus, model: &Classifier) -> Result<Evaluation> {
    let eval = evaluate(model, &corpus.samples_in(cfg.eval_split))?;
    let dir = cfg.classifier_dir();
    write_json(&dir.join("evaluation.json"), &eval)?;
    write_text(&dir.join("confusion.csv"), &confusion_csv(&eval, &corpus.family_names)?)?;
    Ok(eval)
}

#[derive(Clone, Debug)]
pub struct ClassifierRun {
    pub evaluation: Evaluation,
    pub best_epoch: usize,
}

/// Trains the classifier, then scores it on the evaluation split.
pub fn train_classifier_step(cfg: &ExperimentConfig) -> Result<ClassifierRun> {
    cfg.validate()?;
    let corpus = load_experiment_corpus(cfg)?;
    let trained = train_classifier(&corpus, &cfg.classifier, cfg.seed)?;
    let dir = cfg.classifier_dir();
    write_config(cfg, &dir)?;
    trained.model.to_checkpoint(cfg.seed).save(&dir.join("checkpoint.json"))?;
    write_jsonl(&dir.join("metrics.jsonl"), &trained.metrics)?;
    let evaluation = write_evaluation(cfg, &corpus, &trained.model)?;
    Ok(ClassifierRun {
        evaluation,
        best_epoch: trained.best_epoch,
    })
}

pub fn eval_classifier_step(cfg: &ExperimentConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let corpus = load_experiment_corpus(cfg)?;
    let model = load_classifier(cfg, &corpus)?;
    write_evaluation(cfg, &corpus, &model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub family: String,
    pub family_id: usize,
    pub episodes: usize,
    pub pool: usize,
    pub trivial: Vec<String>,
    /// Evasion rate over the last `EVASION_WINDOW` training episodes.
    pub trailing_evasion_rate: f64,
}

/// Trailing-window evasion rate after each episode.
pub fn evasion_curve(log: &[EpisodeLog], window: usize) -> Vec<f64> {
    (1..=log.len()).map(|n| trailing_evasion_rate(&log[..n], window)).collect()
}

/// Trains the agent of one family (name or id) on its RL pool.
pub fn train_agent_step(cfg: &ExperimentConfig, family: &str) -> Result<AgentRun> {
    cfg.validate()?;
    let corpus = load_experiment_corpus(cfg)?;
    let f = corpus.family_index(family)?;
    let classifier = load_classifier(cfg, &corpus)?;
    let env = EvasionEnv::new(&classifier, cfg.agent.max_turn)?;
    let pool = corpus.family_samples(f, cfg.rl_split);
    let seed = cfg.agent_seed(f);
    let trained = train_agent(&env, &pool, &cfg.agent, seed)?;
    let curve = evasion_curve(&trained.log, EVASION_WINDOW);
    if curve.len() >= 2 * EVASION_WINDOW && curve[curve.len() - 1] < curve[EVASION_WINDOW - 1] {
        log::warn!(
            "family {}: trailing evasion rate fell from {:.2} to {:.2} during training",
            corpus.family_names[f],
            curve[EVASION_WINDOW - 1],
            curve[curve.len() - 1]
        );
    }
    let dir = cfg.agent_dir(f);
    write_config(cfg, &dir)?;
    trained.network.to_checkpoint(seed).save(&dir.join("checkpoint.json"))?;
    write_jsonl(&dir.join("train_log.jsonl"), &trained.log)?;
    let run = AgentRun {
        family: corpus.family_names[f].clone(),
        family_id: f,
        episodes: trained.log.len(),
        pool: pool.len(),
        trivial: trained.trivial,
        trailing_evasion_rate: trailing_evasion_rate(&trained.log, EVASION_WINDOW),
    };
    write_json(&dir.join("summary.json"), &run)?;
    Ok(run)
}

pub fn load_agent(cfg: &ExperimentConfig, family: usize) -> Result<QNetwork> {
    QNetwork::from_checkpoint(&Checkpoint::load(&cfg.agent_dir(family).join("checkpoint.json"))?)
}

fn eval_families(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<usize>> {
    if cfg.eval.families.is_empty() {
        return Ok((0..corpus.num_families()).collect());
    }
    let mut out = cfg
        .eval
        .families
        .iter()
        .map(|k| corpus.family_index(k))
        .collect::<Result<Vec<_>>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Runs the random and greedy agents over every evaluation-split sample of
/// the selected families. Returns the traces in a fixed order.
pub fn collect_traces(cfg: &ExperimentConfig, corpus: &Corpus, classifier: &Classifier) -> Result<Vec<TraceRecord>> {
    let env = EvasionEnv::new(classifier, cfg.agent.max_turn)?;
    let mut records = Vec::new();
    for f in eval_families(cfg, corpus)? {
        let net = load_agent(cfg, f)?;
        let name = &corpus.family_names[f];
        let mut rng = rng::stream(cfg.seed, "eval-random", f as u64);
        for s in corpus.family_samples(f, cfg.eval_split) {
            if s.is_excluded() {
                log::warn!("sample `{}` has no valid insertion point; skipped", s.id);
                continue;
            }
            for repeat in 0..cfg.eval.repeats {
                records.push(TraceRecord {
                    agent: AgentKind::Random,
                    family_name: name.clone(),
                    repeat,
                    trace: random_agent(&env, s, &mut rng)?,
                });
            }
            records.push(TraceRecord {
                agent: AgentKind::Dqn,
                family_name: name.clone(),
                repeat: 0,
                trace: greedy_episode(&env, &net, s)?,
            });
        }
    }
    Ok(records)
}

/// Three-way comparison: writes traces, the per-family table and the
/// bar-chart series.
pub fn evaluate_step(cfg: &ExperimentConfig) -> Result<Vec<FamilyReport>> {
    cfg.validate()?;
    let corpus = load_experiment_corpus(cfg)?;
    let classifier = load_classifier(cfg, &corpus)?;
    let records = collect_traces(cfg, &corpus, &classifier)?;
    let reports = family_reports(&records)?;
    let dir = cfg.eval_dir();
    write_config(cfg, &dir)?;
    write_text(&dir.join("traces.jsonl"), &traces_to_jsonl(&records))?;
    write_text(&dir.join("family_report.csv"), &reports_to_csv(&reports)?)?;
    write_json(&dir.join("family_report.json"), &reports)?;
    write_json(&dir.join("series.json"), &series(&reports))?;
    Ok(reports)
}

/// Rebuilds the per-family table and the overall summary from the traces
/// stored under `results`.
pub fn report_step(results: &Path) -> Result<Summary> {
    let traces = results.join("eval").join("traces.jsonl");
    let records = read_traces(&traces)?;
    if records.is_empty() {
        return Err(Error::Input(format!("{}: no traces", traces.display())));
    }
    let reports = family_reports(&records)?;
    let summary = summarize(&reports)?;
    let dir = results.join("report");
    write_text(&dir.join("family_report.csv"), &reports_to_csv(&reports)?)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_text(&dir.join("summary.md"), &render_markdown(&reports, &summary))?;
    Ok(summary)
}
