use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::corpus::{Split, SplitRatios, SyntheticConfig};
use crate::dqn::AgentConfig;
use crate::error::{Error, Result};

/// Where the corpus comes from: an existing directory, or the synthetic
/// generator writing into `<out>/corpus`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Random-agent episodes per test sample.
    pub repeats: usize,
    /// Families to evaluate (names or ids); empty means all.
    pub families: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 1,
            families: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusConfig,
    pub split: SplitRatios,
    pub classifier: ClassifierConfig,
    pub agent: AgentConfig,
    /// Split each family's agent trains on.
    pub rl_split: Split,
    /// Split the three-way comparison runs on.
    pub eval_split: Split,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            split: SplitRatios::default(),
            classifier: ClassifierConfig::default(),
            agent: AgentConfig::default(),
            rl_split: Split::Val,
            eval_split: Split::Test,
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document, or JSON when the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.classifier.validate()?;
        self.agent.validate()?;
        if self.corpus.dir.is_none() {
            self.corpus.synthetic.validate()?;
        }
        if self.eval.repeats == 0 {
            return Err(Error::config("eval.repeats", "must be positive"));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.dir.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    pub fn classifier_dir(&self) -> PathBuf {
        self.out.join("classifier")
    }

    pub fn agent_dir(&self, family: usize) -> PathBuf {
        self.out.join("agents").join(family.to_string())
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    /// Seed of one family's agent.
    pub fn agent_seed(&self, family: usize) -> u64 {
        crate::rng::derive_seed(self.seed, "agent", family as u64)
    }
}
