use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Vocabulary size the embedding table was built for.
    #[serde(rename = "V")]
    pub vocab_size: usize,
    /// Embedding width.
    #[serde(rename = "E")]
    pub embed_dim: usize,
    pub architecture: String,
    pub seed: u64,
    /// Architecture-specific settings (head mode, class count, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(vocab_size: usize, embed_dim: usize, architecture: &str, seed: u64) -> Self {
        CheckpointMeta {
            vocab_size,
            embed_dim,
            architecture: architecture.to_string(),
            seed,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<String>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON document: parameter name to `{shape, data}` plus metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub metadata: CheckpointMeta,
    pub params: BTreeMap<String, StoredTensor>,
    /// Parameter names in network order; `params` is keyed alphabetically.
    pub order: Vec<String>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet, metadata: CheckpointMeta) -> Self {
        let mut stored = BTreeMap::new();
        let mut order = Vec::new();
        for (name, p) in params.iter() {
            order.push(name.to_string());
            stored.insert(
                name.to_string(),
                StoredTensor {
                    shape: p.value.shape().to_vec(),
                    data: p.value.data().to_vec(),
                },
            );
        }
        Checkpoint {
            metadata,
            params: stored,
            order,
        }
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        let mut ps = ParamSet::new();
        for name in &self.order {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter `{name}`")))?;
            ps.insert(name.clone(), Tensor::from_vec(&t.shape, t.data.clone())?);
        }
        Ok(ps)
    }

    pub fn expect_architecture(&self, tag: &str) -> Result<()> {
        if self.metadata.architecture != tag {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "architecture `{}` where `{tag}` was expected",
                    self.metadata.architecture
                ),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_reproduces_values(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut ps = ParamSet::new();
            ps.insert("w", Tensor::vector(values.clone()));
            ps.insert("a", Tensor::vector(vec![values[0] * 1e-9]));
            let meta = CheckpointMeta {
                vocab_size: 3,
                embed_dim: 4,
                architecture: "test".into(),
                seed: 1,
                extra: BTreeMap::new(),
            };
            let ck = Checkpoint::from_json(&Checkpoint::from_params(&ps, meta).to_json()).unwrap();
            let back = ck.to_params().unwrap();
            prop_assert_eq!(back.names().collect::<Vec<_>>(), vec!["w", "a"]);
            for (a, b) in back.flat_values().iter().zip(ps.flat_values()) {
                prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
            }
        }
    }
}
