//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criteria 4–6 share one experiment (seed 7, default configuration) under a
//! temporary directory; the agents of criteria 5 and 6 are trained for the
//! full 1000 episodes.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use nopevade::classifier::{Classifier, ClassifierConfig};
use nopevade::corpus::{parse_asm, Split, SyntheticConfig};
use nopevade::dqn::{
    polyak_update, random_agent, select_action, AgentConfig, DoubleDqn, EpsilonSchedule, HeadMode, QNetwork,
    ReplayBuffer, Transition,
};
use nopevade::env::{episode_return, insert_nop, EvasionEnv, MAX_TURN};
use nopevade::harness::{self, insertion_reduction, ExperimentConfig, FamilyReport};
use nopevade::rng;
use nopevade::tensor::{gradient_check, gradient_check_piecewise, ParamSet};
use nopevade::tensor::layers::{argmax, softmax};
use nopevade::TokenId;

const SEED: u64 = 7;

/// Families without NOP in their signatures, attacked in criterion 5.
const NOP_FREE: [&str; 3] = ["Kelihos_ver3", "Simda", "Kelihos_ver1"];
/// NOP-bearing family of criterion 6.
const NOP_BEARING: &str = "Obfuscator.ACY";

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = Result<Verdict, String>;

fn within(elapsed: Duration, limit: Duration, v: Verdict) -> Verdict {
    if elapsed <= limit {
        return v;
    }
    Verdict::new(false, format!("{}; runtime {elapsed:.1?} over the {limit:?} budget", v.detail))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_tokens<R: Rng>(r: &mut R, n: usize, v: usize) -> Vec<TokenId> {
    (0..n).map(|_| r.gen_range(0..v as TokenId)).collect()
}

// ---------------------------------------------------------------------------

fn parameter_counts() -> Check {
    let c = Classifier::new(557, 9, &ClassifierConfig::default(), 0).map_err(err)?;
    let q = QNetwork::new(557, 4, 10, HeadMode::Softmax, 0).map_err(err)?;
    let (nc, nq) = (c.params().scalar_count(), q.params().scalar_count());
    Ok(Verdict::new(nc == 10928 && nq == 2358, format!("classifier {nc} (want 10928), q-network {nq} (want 2358)")))
}

/// Random inputs of N = 30 tokens over V = 557, 200 sampled coordinates
/// each, step 1e-5. The classifier's max pooling is only piecewise smooth, so
/// coordinates whose probes move a pooling argmax are skipped (and counted);
/// the plain checker's verdict is reported alongside.
fn gradients() -> Check {
    const INPUTS: u64 = 10;
    let v = 557;
    let cfg = ClassifierConfig::default();
    let mut r = rng::stream(SEED, "acceptance-gradcheck", 0);
    let (mut worst_c, mut worst_q, mut kinks, mut checked) = (0.0f64, 0.0f64, 0, 0);
    let mut plain_over = 0;
    for i in 0..INPUTS {
        let toks = random_tokens(&mut r, 30, v);
        let family = r.gen_range(0..9);

        let mut c = Classifier::new(v, 9, &cfg, 100 + i).map_err(err)?;
        c.params_mut().zero_grad();
        c.accumulate_gradient(&toks, family).map_err(err)?;
        // Numeric side goes through the layer-by-layer reference path.
        let loss = |p: &ParamSet| {
            let m = Classifier::from_params(p.clone(), &cfg, 9).unwrap();
            -m.classify_layers(&toks).unwrap()[family].ln()
        };
        let pooling = |p: &ParamSet| Classifier::from_params(p.clone(), &cfg, 9).unwrap().forward(&toks).unwrap().argmax;
        let seed = r.gen::<u64>();
        let res = gradient_check_piecewise(c.params(), loss, pooling, 200, &mut rng::stream(seed, "coords", 0));
        let plain = gradient_check(c.params(), loss, 200, &mut rng::stream(seed, "coords", 0));
        plain_over += usize::from(plain >= 1e-4);
        worst_c = worst_c.max(res.max_rel_error);
        kinks += res.kinks;
        checked += res.checked;

        for head in [HeadMode::Softmax, HeadMode::Linear] {
            let mut q = QNetwork::new(v, 4, 10, head, 200 + i).map_err(err)?;
            let up: Vec<f64> = (0..30).map(|_| r.gen_range(-1.0..1.0)).collect();
            q.params_mut().zero_grad();
            q.accumulate_gradient(&toks, &up).map_err(err)?;
            let objective = |p: &ParamSet| {
                let net = QNetwork::from_params(p.clone(), head).unwrap();
                let raw = net.raw_scores_layers(&toks).unwrap();
                let vals = match head {
                    HeadMode::Linear => raw,
                    HeadMode::Softmax => softmax(&raw),
                };
                vals.iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            worst_q = worst_q.max(gradient_check(q.params(), objective, 200, &mut r));
        }
    }
    Ok(Verdict::new(
        worst_c < 1e-4 && worst_q < 1e-4,
        format!(
            "{INPUTS} inputs of 30 tokens: classifier max rel. error {worst_c:.2e} over {checked} coordinates \
             ({kinks} kink-straddling skipped; plain checker over the limit on {plain_over} of {INPUTS}), \
             q-network (both heads) {worst_q:.2e}; limit 1e-4"
        ),
    ))
}

/// The shared experiment: generated corpus and trained classifier.
struct Experiment {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    corpus: nopevade::corpus::Corpus,
    classifier: Classifier,
}

fn classifier_accuracy(exp: &mut Option<Experiment>) -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = ExperimentConfig {
        seed: SEED,
        out: dir.path().join("run"),
        ..ExperimentConfig::default()
    };
    let corpus = harness::gen_corpus(&cfg).map_err(err)?;
    let counts = harness::manifest_summary(&corpus);
    let shape_ok = counts.len() == 9 && counts.iter().all(|c| (c.train, c.val, c.test) == (140, 30, 30));
    let run = harness::train_classifier_step(&cfg).map_err(err)?;
    let metrics = std::fs::read_to_string(cfg.classifier_dir().join("metrics.jsonl")).map_err(err)?;
    let epochs = metrics.lines().count();
    let acc = run.evaluation.accuracy;
    let classifier = harness::load_classifier(&cfg, &corpus).map_err(err)?;
    *exp = Some(Experiment {
        _dir: dir,
        cfg,
        corpus,
        classifier,
    });
    Ok(Verdict::new(
        acc >= 0.95 && shape_ok && epochs == 15,
        format!("test accuracy {:.2}% over {epochs} epochs (need ≥ 95%); 9 families × 140/30/30: {shape_ok}", 100.0 * acc),
    ))
}

fn telescoping(exp: &Experiment) -> Check {
    let env = EvasionEnv::new(&exp.classifier, MAX_TURN).map_err(err)?;
    let mut r = rng::stream(SEED, "acceptance-telescoping", 0);
    let test = exp.corpus.samples_in(Split::Test);
    let mut worst = 0.0f64;
    let mut episodes = 0;
    for s in test.iter().filter(|s| exp.classifier.predict(&s.tokens).unwrap() == s.family).take(100) {
        let trace = random_agent(&env, s, &mut r).map_err(err)?;
        // Replay the actions and score the end points independently.
        let (mut toks, mut mask) = (s.tokens.clone(), s.insert_mask.clone());
        for &a in &trace.actions {
            (toks, mask) = insert_nop(&toks, &mask, a);
        }
        let initial = exp.classifier.loss_of(&s.tokens, s.family).map_err(err)?;
        let last = exp.classifier.loss_of(&toks, s.family).map_err(err)?;
        worst = worst.max((episode_return(&trace) - (last - initial)).abs());
        episodes += 1;
    }
    Ok(Verdict::new(
        episodes == 100 && worst < 1e-9,
        format!("{episodes} episodes, max |Σr − Δloss| = {worst:.2e} (limit 1e-9)"),
    ))
}

struct AgentRuns {
    reports: Vec<FamilyReport>,
    slowest: Duration,
    nop_free_flags: Vec<bool>,
    nop_bearing_flag: bool,
}

fn train_and_evaluate(exp: &Experiment) -> Result<AgentRuns, String> {
    let synth: &SyntheticConfig = &exp.cfg.corpus.synthetic;
    let flag = |name: &str| synth.families.iter().find(|f| f.name == name).map(|f| f.nop_bearing);
    let mut slowest = Duration::ZERO;
    for family in NOP_FREE.iter().chain([&NOP_BEARING]) {
        let t = Instant::now();
        harness::train_agent_step(&exp.cfg, family).map_err(err)?;
        slowest = slowest.max(t.elapsed());
    }
    let mut cfg = exp.cfg.clone();
    cfg.eval.families = NOP_FREE.iter().chain([&NOP_BEARING]).map(|s| s.to_string()).collect();
    let reports = harness::evaluate_step(&cfg).map_err(err)?;
    Ok(AgentRuns {
        reports,
        slowest,
        nop_free_flags: NOP_FREE.iter().map(|n| flag(n) == Some(false)).collect(),
        nop_bearing_flag: flag(NOP_BEARING) == Some(true),
    })
}

fn report_for<'a>(runs: &'a AgentRuns, name: &str) -> Result<&'a FamilyReport, String> {
    runs.reports.iter().find(|r| r.family == name).ok_or_else(|| format!("no report for {name}"))
}

fn dqn_efficacy(runs: &AgentRuns) -> Check {
    let reports = NOP_FREE.iter().map(|n| report_for(runs, n)).collect::<Result<Vec<_>, _>>()?;
    let all_evaded = reports.iter().all(|r| r.accuracy_dqn == 0.0);
    let reduction = insertion_reduction(&reports).unwrap_or(f64::NEG_INFINITY);
    let rows: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{} acc {:.0}→{:.0}% ins {:.2} vs random {:.2}",
                r.family, r.accuracy_no_agent, r.accuracy_dqn, r.avg_insertions_dqn, r.avg_insertions_random
            )
        })
        .collect();
    let v = Verdict::new(
        all_evaded && reduction >= 0.25 && runs.nop_free_flags.iter().all(|&f| f),
        format!("{}; insertion reduction {:.1}% (need ≥ 25%)", rows.join("; "), 100.0 * reduction),
    );
    Ok(within(runs.slowest, Duration::from_secs(30 * 60), v))
}

fn nop_resistance(runs: &AgentRuns) -> Check {
    let r = report_for(runs, NOP_BEARING)?;
    let drop = r.accuracy_no_agent - r.accuracy_dqn;
    Ok(Verdict::new(
        drop <= 10.0 && runs.nop_bearing_flag,
        format!(
            "{} accuracy {:.2}% → {:.2}% under the agent, degradation {drop:.2} pp (limit 10)",
            r.family, r.accuracy_no_agent, r.accuracy_dqn
        ),
    ))
}

/// Two states; in each, action 0 leads back to s0 and action 1 moves on
/// (s0 → s1, s1 → terminal with reward 1).
fn chain_step(state: usize, action: usize) -> (usize, f64, bool) {
    match (state, action) {
        (_, 0) => (0, 0.0, false),
        (0, _) => (1, 0.0, false),
        _ => (0, 1.0, true),
    }
}

fn value_iteration(gamma: f64) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..10_000 {
        let mut next = q;
        for (s, row) in next.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (s2, r, done) = chain_step(s, a);
                *v = r + if done { 0.0 } else { gamma * q[s2][0].max(q[s2][1]) };
            }
        }
        q = next;
    }
    q
}

fn chain_convergence() -> Check {
    let gamma = 0.9;
    let cfg = AgentConfig {
        head: HeadMode::Linear,
        gamma,
        ..AgentConfig::default()
    };
    let mut dqn = DoubleDqn::new(QNetwork::new(4, 4, 10, HeadMode::Linear, 1).map_err(err)?, &cfg).map_err(err)?;
    let states: [Arc<[TokenId]>; 2] = [vec![2, 2].into(), vec![3, 3].into()];
    // Two positions; the append slot is masked so each state has two actions.
    let mask: Arc<[bool]> = vec![true, true, false].into();
    let mut r = rng::stream(SEED, "acceptance-chain", 0);
    let mut s = 0;
    for _ in 0..2000 {
        let a = select_action(dqn.primary(), &states[s], &mask, 1.0, &mut r).map_err(err)?;
        let (s2, reward, done) = chain_step(s, a);
        dqn.observe(Transition {
            tokens: states[s].clone(),
            mask: mask.clone(),
            action: a,
            reward,
            next_tokens: states[s2].clone(),
            next_mask: mask.clone(),
            done,
        });
        dqn.update(&mut r).map_err(err)?;
        s = s2;
    }
    let oracle = value_iteration(gamma);
    let mut worst = 0.0f64;
    for (st, row) in oracle.iter().enumerate() {
        let q = dqn.primary().q_values(&states[st], &mask).map_err(err)?;
        for a in 0..2 {
            worst = worst.max((q[a] - row[a]).abs());
        }
    }
    Ok(Verdict::new(
        worst < 0.05,
        format!("max |Q − Q*| = {worst:.2e} against Q* = {oracle:.3?} (limit 0.05)"),
    ))
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let config = tmp.path().join("tiny.toml");
    std::fs::write(&config, common::TINY).map_err(err)?;
    let out = tmp.path().join("run");
    common::pipeline(&config, &out);
    let first = common::hashes(&out);
    std::fs::remove_dir_all(&out).map_err(err)?;
    common::pipeline(&config, &out);
    let second = common::hashes(&out);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    Ok(Verdict::new(
        differing.is_empty() && first.len() == second.len(),
        format!("{} artifacts across all six commands, {} differ", first.len(), differing.len()),
    ))
}

fn mechanics() -> Check {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let t = |i: usize| Transition {
        tokens: vec![1].into(),
        mask: vec![true, true].into(),
        action: 0,
        reward: i as f64,
        next_tokens: vec![1, 1].into(),
        next_mask: vec![true; 3].into(),
        done: false,
    };
    let mut buf = ReplayBuffer::new(2000).map_err(err)?;
    for i in 0..2500 {
        buf.push(t(i));
    }
    let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
    check(buf.len() == 2000 && kept == (500..2500).map(|i| i as f64).collect::<Vec<_>>(), "replay FIFO at 2000");

    let sched: EpsilonSchedule = AgentConfig::default().schedule();
    let values: Vec<f64> = (0..=30_000u64).step_by(50).map(|s| sched.value(s)).collect();
    check(sched.value(0) == 1.0 && sched.value(sched.horizon) == 0.5 && sched.value(u64::MAX) == 0.5, "ε endpoints");
    check(values.windows(2).all(|w| w[1] <= w[0]), "ε monotone");

    let mut r = rng::stream(SEED, "acceptance-mechanics", 0);
    let net = QNetwork::new(20, 4, 10, HeadMode::Softmax, 3).map_err(err)?;
    let toks = random_tokens(&mut r, 11, 20);
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
    let valid: Vec<usize> = (0..12).filter(|&i| mask[i]).collect();
    let mut counts = [0usize; 12];
    let mut masked_picks = 0;
    for draw in 0..10_000 {
        let eps = [0.0, 0.5, 1.0][draw % 3];
        let a = select_action(&net, &toks, &mask, eps, &mut r).map_err(err)?;
        masked_picks += usize::from(!mask[a]);
    }
    for _ in 0..10_000 {
        counts[select_action(&net, &toks, &mask, 1.0, &mut r).map_err(err)?] += 1;
    }
    check(masked_picks == 0 && valid.iter().map(|&i| counts[i]).sum::<usize>() == 10_000, "masked actions never chosen");
    let expected = 10_000.0 / valid.len() as f64;
    let chi2: f64 = valid.iter().map(|&i| (counts[i] as f64 - expected).powi(2) / expected).sum();
    // χ²(7) at p = 0.001.
    check(chi2 < 24.32, "uniform exploration");

    let primary = QNetwork::new(20, 4, 10, HeadMode::Linear, 4).map_err(err)?;
    let target = QNetwork::new(20, 4, 10, HeadMode::Linear, 5).map_err(err)?;
    let mut same = target.params().clone();
    polyak_update(&mut same, primary.params(), 0.0).map_err(err)?;
    check(same.flat_values() == target.params().flat_values(), "Polyak τ = 0 keeps the target");
    let mut copy = target.params().clone();
    polyak_update(&mut copy, primary.params(), 1.0).map_err(err)?;
    check(copy.flat_values() == primary.params().flat_values(), "Polyak τ = 1 copies the primary");

    let mut disagreements = 0;
    for i in 0..1000u64 {
        let linear = QNetwork::new(20, 4, 10, HeadMode::Linear, 1000 + i).map_err(err)?;
        let soft = linear.clone().with_head(HeadMode::Softmax);
        let n = r.gen_range(2..40);
        let toks = random_tokens(&mut r, n, 20);
        let mut mask: Vec<bool> = (0..=n).map(|_| r.gen_bool(0.7)).collect();
        mask[r.gen_range(0..=n)] = true;
        let a = argmax(&linear.q_values(&toks, &mask).map_err(err)?);
        let b = argmax(&soft.q_values(&toks, &mask).map_err(err)?);
        disagreements += usize::from(a != b);
    }
    check(disagreements == 0, "head argmax agreement");

    Ok(Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("FIFO, ε 1.0→0.5 monotone, 0 masked picks, χ² {chi2:.2}, Polyak identities, 1000/1000 head agreements")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    ))
}

const LISTING_MNEMONICS: &[&str] = &[
    "push", "mov", "sub", "push", "mov", "test", "jz", "lea", "push", "push", "call", "add", "xor", "inc",
    "jmp", "mov", "shl", "add", "mov", "pop", "nop", "mov", "pop", "retn",
];

fn parser_fixture() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let a = parse_asm(&std::fs::read_to_string(dir.join("listing.asm")).map_err(err)?);
    let b = parse_asm(&std::fs::read_to_string(dir.join("listing_twin.asm")).map_err(err)?);
    Ok(Verdict::new(
        a.mnemonics == LISTING_MNEMONICS && a.warnings == 0 && a == b,
        format!("{} mnemonics, {} warnings, twin identical: {}", a.mnemonics.len(), a.warnings, a == b),
    ))
}

// ---------------------------------------------------------------------------

fn record(results: &mut Vec<(u8, &'static str, Verdict, Duration)>, id: u8, name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
    let t = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
    let elapsed = t.elapsed();
    let v = match outcome {
        Ok(v) => match limit {
            Some(l) => within(elapsed, l, v),
            None => v,
        },
        Err(e) => Verdict::new(false, format!("error: {e}")),
    };
    println!("criterion {id:>2} {}: {name}: {} ({elapsed:.1?})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    results.push((id, name, v, elapsed));
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();
    record(&mut results, 1, "parameter counts", Some(secs(1)), parameter_counts);
    record(&mut results, 2, "gradient check", Some(secs(30)), gradients);
    let mut exp = None;
    record(&mut results, 4, "classifier accuracy", Some(secs(600)), || classifier_accuracy(&mut exp));
    match &exp {
        Some(exp) => {
            record(&mut results, 3, "telescoping reward", Some(secs(60)), || telescoping(exp));
            let t = Instant::now();
            let runs = train_and_evaluate(exp);
            println!("(agents for criteria 5 and 6 trained and evaluated in {:.1?})", t.elapsed());
            match runs {
                Ok(runs) => {
                    record(&mut results, 5, "DQN learning efficacy", None, || dqn_efficacy(&runs));
                    record(&mut results, 6, "NOP-bearing resistance", None, || nop_resistance(&runs));
                }
                Err(e) => {
                    record(&mut results, 5, "DQN learning efficacy", None, || Err(e.clone()));
                    record(&mut results, 6, "NOP-bearing resistance", None, || Err(e));
                }
            }
        }
        None => {
            for (id, name) in [(3, "telescoping reward"), (5, "DQN learning efficacy"), (6, "NOP-bearing resistance")] {
                record(&mut results, id, name, None, || Err("no trained classifier".into()));
            }
        }
    }
    record(&mut results, 7, "Double-Q chain oracle", Some(secs(60)), chain_convergence);
    record(&mut results, 8, "CLI determinism", None, determinism);
    record(&mut results, 9, "mechanics", Some(secs(60)), mechanics);
    record(&mut results, 10, "listing fixture", None, parser_fixture);

    results.sort_by_key(|r| r.0);
    println!("\nsummary:");
    for (id, name, v, _) in &results {
        println!("  {id:>2} {:<24} {}", name, if v.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
