use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// A labelled mnemonic-id sequence.
///
/// `insert_mask[i]` says whether a NOP may be inserted before token `i`;
/// `insert_mask[len]` is the append slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub family: usize,
    pub tokens: Vec<TokenId>,
    pub insert_mask: Vec<bool>,
}

impl Sample {
    /// A sample with every boundary open for insertion.
    pub fn new(id: impl Into<String>, family: usize, tokens: Vec<TokenId>) -> Result<Self> {
        let insert_mask = build_insert_mask(&tokens, &BTreeSet::new())?;
        Ok(Sample {
            id: id.into(),
            family,
            tokens,
            insert_mask,
        })
    }

    pub fn with_mask(
        id: impl Into<String>,
        family: usize,
        tokens: Vec<TokenId>,
        insert_mask: Vec<bool>,
    ) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Input(format!("sample `{id}` has no tokens")));
        }
        if insert_mask.len() != tokens.len() + 1 {
            return Err(Error::Input(format!(
                "sample `{id}`: mask length {} for {} tokens",
                insert_mask.len(),
                tokens.len()
            )));
        }
        Ok(Sample {
            id,
            family,
            tokens,
            insert_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// No valid insertion point: the sample cannot be attacked.
    pub fn is_excluded(&self) -> bool {
        !self.insert_mask.iter().any(|&m| m)
    }
}

/// Mask of length `N+1`, true everywhere except the positions in `deny`.
pub fn build_insert_mask(tokens: &[TokenId], deny: &BTreeSet<usize>) -> Result<Vec<bool>> {
    if tokens.is_empty() {
        return Err(Error::Input("insertion mask for an empty sequence".into()));
    }
    Ok((0..=tokens.len()).map(|i| !deny.contains(&i)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

/// One `manifest.csv` row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub family: usize,
    pub path: String,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn families(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.family).collect()
    }

    pub fn count(&self, family: usize, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.family == family && e.split == Some(split))
            .count()
    }

    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| e.id.as_str())
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::format("manifest.csv", e))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::format("manifest.csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let entries = r
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| Error::format("manifest.csv", e))?;
        Ok(CorpusManifest { entries })
    }
}
