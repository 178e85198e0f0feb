//! Aggregates over stored episode traces. Traces are the source of truth;
//! every number here is a pure fold over them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{episode_return, DoneReason, EpisodeTrace};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Random,
    Dqn,
}

/// One `traces.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub agent: AgentKind,
    pub family_name: String,
    /// Repeat index; always 0 for the greedy agent.
    pub repeat: usize,
    #[serde(flatten)]
    pub trace: EpisodeTrace,
}

/// Per-family comparison of no attack, the random baseline and the learned
/// agent. Accuracies are percentages; episodes that hit the turn limit count
/// their full insertion budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub n_test: usize,
    pub accuracy_no_agent: f64,
    pub accuracy_random: f64,
    pub accuracy_dqn: f64,
    pub avg_insertions_random: f64,
    pub avg_insertions_dqn: f64,
    pub avg_return_random: f64,
    pub avg_return_dqn: f64,
    /// Samples misclassified before any insertion.
    pub trivial_evasions: usize,
}

#[derive(Default)]
struct Fold {
    n: usize,
    detected: usize,
    insertions: usize,
    ret: f64,
    trivial: usize,
}

impl Fold {
    fn add(&mut self, t: &EpisodeTrace) {
        self.n += 1;
        self.detected += usize::from(!t.evaded());
        self.insertions += t.insertions;
        self.ret += episode_return(t);
        self.trivial += usize::from(t.done_reason == DoneReason::Trivial);
    }

    fn accuracy(&self) -> f64 {
        100.0 * self.detected as f64 / self.n as f64
    }

    fn avg_insertions(&self) -> f64 {
        self.insertions as f64 / self.n as f64
    }

    fn avg_return(&self) -> f64 {
        self.ret / self.n as f64
    }
}

/// One report per family id present in `records`, in family order.
pub fn family_reports(records: &[TraceRecord]) -> Result<Vec<FamilyReport>> {
    let mut folds: BTreeMap<usize, (String, Fold, Fold)> = BTreeMap::new();
    for r in records {
        let entry = folds
            .entry(r.trace.family)
            .or_insert_with(|| (r.family_name.clone(), Fold::default(), Fold::default()));
        match r.agent {
            AgentKind::Random => entry.1.add(&r.trace),
            AgentKind::Dqn => entry.2.add(&r.trace),
        }
    }
    folds
        .into_values()
        .map(|(family, random, dqn)| {
            if random.n == 0 || dqn.n == 0 {
                return Err(Error::Input(format!("family `{family}` lacks traces for one of the agents")));
            }
            Ok(FamilyReport {
                family,
                n_test: dqn.n,
                // Trivial evasions are exactly the samples the unattacked
                // classifier already gets wrong.
                accuracy_no_agent: 100.0 * (dqn.n - dqn.trivial) as f64 / dqn.n as f64,
                accuracy_random: random.accuracy(),
                accuracy_dqn: dqn.accuracy(),
                avg_insertions_random: random.avg_insertions(),
                avg_insertions_dqn: dqn.avg_insertions(),
                avg_return_random: random.avg_return(),
                avg_return_dqn: dqn.avg_return(),
                trivial_evasions: dqn.trivial,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallAccuracy {
    pub no_agent: f64,
    pub random: f64,
    pub dqn: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub families: usize,
    pub samples: usize,
    /// Weighted by each family's test count.
    pub accuracy_sample_weighted: OverallAccuracy,
    /// Unweighted mean over families.
    pub accuracy_family_mean: OverallAccuracy,
    /// Families where both agents evaded at least one sample on their own.
    pub evaded_by_both: Vec<String>,
    pub mean_insertions_random: Option<f64>,
    pub mean_insertions_dqn: Option<f64>,
    /// `1 − mean DQN insertions / mean random insertions` over `evaded_by_both`.
    pub insertion_reduction: Option<f64>,
}

/// `1 − mean(dqn) / mean(random)` over the given reports, `None` when empty
/// or when the random mean is zero.
pub fn insertion_reduction(reports: &[&FamilyReport]) -> Option<f64> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let random = reports.iter().map(|r| r.avg_insertions_random).sum::<f64>() / n;
    let dqn = reports.iter().map(|r| r.avg_insertions_dqn).sum::<f64>() / n;
    (random > 0.0).then(|| 1.0 - dqn / random)
}

pub fn summarize(reports: &[FamilyReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::Input("no family reports to summarise".into()));
    }
    let samples: usize = reports.iter().map(|r| r.n_test).sum();
    let weighted = |f: fn(&FamilyReport) -> f64| {
        reports.iter().map(|r| f(r) * r.n_test as f64).sum::<f64>() / samples as f64
    };
    let mean = |f: fn(&FamilyReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let both: Vec<&FamilyReport> = reports
        .iter()
        .filter(|r| r.accuracy_random < r.accuracy_no_agent && r.accuracy_dqn < r.accuracy_no_agent)
        .collect();
    let n_both = both.len() as f64;
    Ok(Summary {
        families: reports.len(),
        samples,
        accuracy_sample_weighted: OverallAccuracy {
            no_agent: weighted(|r| r.accuracy_no_agent),
            random: weighted(|r| r.accuracy_random),
            dqn: weighted(|r| r.accuracy_dqn),
        },
        accuracy_family_mean: OverallAccuracy {
            no_agent: mean(|r| r.accuracy_no_agent),
            random: mean(|r| r.accuracy_random),
            dqn: mean(|r| r.accuracy_dqn),
        },
        evaded_by_both: both.iter().map(|r| r.family.clone()).collect(),
        mean_insertions_random: (!both.is_empty())
            .then(|| both.iter().map(|r| r.avg_insertions_random).sum::<f64>() / n_both),
        mean_insertions_dqn: (!both.is_empty())
            .then(|| both.iter().map(|r| r.avg_insertions_dqn).sum::<f64>() / n_both),
        insertion_reduction: insertion_reduction(&both),
    })
}

/// Bar-chart data: one array per quantity, aligned with `families`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub families: Vec<String>,
    pub accuracy_no_agent: Vec<f64>,
    pub accuracy_random: Vec<f64>,
    pub accuracy_dqn: Vec<f64>,
    pub avg_insertions_random: Vec<f64>,
    pub avg_insertions_dqn: Vec<f64>,
    pub avg_return_random: Vec<f64>,
    pub avg_return_dqn: Vec<f64>,
}

pub fn series(reports: &[FamilyReport]) -> Series {
    let col = |f: fn(&FamilyReport) -> f64| reports.iter().map(f).collect();
    Series {
        families: reports.iter().map(|r| r.family.clone()).collect(),
        accuracy_no_agent: col(|r| r.accuracy_no_agent),
        accuracy_random: col(|r| r.accuracy_random),
        accuracy_dqn: col(|r| r.accuracy_dqn),
        avg_insertions_random: col(|r| r.avg_insertions_random),
        avg_insertions_dqn: col(|r| r.avg_insertions_dqn),
        avg_return_random: col(|r| r.avg_return_random),
        avg_return_dqn: col(|r| r.avg_return_dqn),
    }
}

pub fn reports_to_csv(reports: &[FamilyReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(|e| Error::format("family report", e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("family report", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn traces_to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace serialises"));
        out.push('\n');
    }
    out
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(format!("{} line {}", path.display(), i + 1), e)))
        .collect()
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

/// Human-readable summary: the per-family table followed by the overall rows.
pub fn render_markdown(reports: &[FamilyReport], summary: &Summary) -> String {
    let mut s = String::new();
    s.push_str("# Evasion summary\n\n");
    s.push_str("| family | n | acc. no agent | acc. random | acc. DQN | ins. random | ins. DQN | return random | return DQN | trivial |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.2} | {:.2} | {:.4} | {:.4} | {} |",
            r.family,
            r.n_test,
            pct(r.accuracy_no_agent),
            pct(r.accuracy_random),
            pct(r.accuracy_dqn),
            r.avg_insertions_random,
            r.avg_insertions_dqn,
            r.avg_return_random,
            r.avg_return_dqn,
            r.trivial_evasions
        );
    }
    let w = &summary.accuracy_sample_weighted;
    let m = &summary.accuracy_family_mean;
    let _ = write!(
        s,
        "\nOverall accuracy over {} samples in {} families (sample-weighted): no agent {}, random {}, DQN {}.\n",
        summary.samples,
        summary.families,
        pct(w.no_agent),
        pct(w.random),
        pct(w.dqn)
    );
    let _ = writeln!(
        s,
        "Overall accuracy (family mean): no agent {}, random {}, DQN {}.",
        pct(m.no_agent),
        pct(m.random),
        pct(m.dqn)
    );
    match summary.insertion_reduction {
        Some(r) => {
            let _ = writeln!(
                s,
                "Insertion reduction over families evaded by both agents ({}): {:.2}%.",
                summary.evaded_by_both.join(", "),
                100.0 * r
            );
        }
        None => s.push_str("No family was evaded by both agents; insertion reduction undefined.\n"),
    }
    s
}
