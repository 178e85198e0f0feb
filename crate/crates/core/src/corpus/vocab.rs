use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::TokenId;

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const NOP_MNEMONIC: &str = "nop";

/// Reserved ids come first; the remaining mnemonics follow in lexicographic
/// order.
pub const UNKNOWN_ID: TokenId = 0;
pub const NOP_ID: TokenId = 1;

/// Frozen mnemonic ↔ id mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MnemonicVocab {
    names: Vec<String>,
    ids: BTreeMap<String, TokenId>,
}

impl MnemonicVocab {
    /// One id per distinct mnemonic plus the reserved `<unk>` and `nop`.
    pub fn build<I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let mut distinct = BTreeSet::new();
        for seq in sequences {
            for m in seq.as_ref() {
                if m != NOP_MNEMONIC && m != UNKNOWN_TOKEN {
                    distinct.insert(m.clone());
                }
            }
        }
        let mut names = vec![UNKNOWN_TOKEN.to_string(), NOP_MNEMONIC.to_string()];
        names.extend(distinct);
        Self::from_names(names).expect("reserved entries are in place")
    }

    fn from_names(names: Vec<String>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(UNKNOWN_TOKEN)
            || names.get(1).map(String::as_str) != Some(NOP_MNEMONIC)
        {
            return Err(Error::format(
                "vocabulary",
                format!("ids {UNKNOWN_ID} and {NOP_ID} must be `{UNKNOWN_TOKEN}` and `{NOP_MNEMONIC}`"),
            ));
        }
        let mut ids = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i as TokenId).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate entry `{n}`")));
            }
        }
        Ok(MnemonicVocab { names, ids })
    }

    /// Vocabulary size `V`, reserved entries included.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, mnemonic: &str) -> Option<TokenId> {
        self.ids.get(mnemonic).copied()
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    /// Unknown mnemonics map to [`UNKNOWN_ID`]; the vocabulary never grows.
    pub fn encode(&self, mnemonics: &[String]) -> Vec<TokenId> {
        mnemonics
            .iter()
            .map(|m| self.id(m).unwrap_or(UNKNOWN_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.name(i).unwrap_or(UNKNOWN_TOKEN).to_string())
            .collect()
    }

    /// `{mnemonic: id}` JSON object.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.ids).expect("map serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, TokenId> =
            serde_json::from_str(text).map_err(|e| Error::format("vocab.json", e))?;
        let mut names = vec![String::new(); map.len()];
        for (name, id) in map {
            let slot = names.get_mut(id as usize).ok_or_else(|| {
                Error::format("vocab.json", format!("id {id} of `{name}` is not dense"))
            })?;
            *slot = name;
        }
        Self::from_names(names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
