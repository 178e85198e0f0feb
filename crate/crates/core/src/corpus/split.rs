use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::sample::{CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("split.{name}"),
                    format!("ratio {v} outside [0, 1]"),
                ));
            }
        }
        let total = self.train + self.val + self.test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split",
                format!("ratios sum to {total}, expected 1"),
            ));
        }
        Ok(())
    }

    /// Per-split counts for a family of `n` samples.
    fn counts(&self, n: usize) -> (usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let train = train.min(n);
        let val = (((n as f64) * self.val).round() as usize).min(n - train);
        (train, val)
    }
}

/// Assigns every manifest entry a split, stratified by family and
/// deterministic under `seed`. Entry order is preserved.
pub fn split_corpus(
    manifest: &CorpusManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<CorpusManifest> {
    ratios.validate()?;
    let mut by_family: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_family.entry(e.family).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (family, mut idx) in by_family {
        if idx.len() < 3 {
            return Err(Error::config(
                "corpus",
                format!("family {family} has {} samples; at least 3 are needed to split", idx.len()),
            ));
        }
        idx.shuffle(&mut rng::stream(seed, "split", family as u64));
        let (n_train, n_val) = ratios.counts(idx.len());
        for (rank, &i) in idx.iter().enumerate() {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            out.entries[i].split = Some(split);
        }
    }
    Ok(out)
}
