//! On-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.csv      id,family,path,split
//! <dir>/vocab.json        {mnemonic: id}
//! <dir>/families.json     ["Ramnit", ...], indexed by family id
//! <dir>/samples/*.tokens  whitespace-separated mnemonics
//! ```
//!
//! Manifest paths are relative to `<dir>`; entries ending in `.asm` are run
//! through the listing parser instead.

use std::path::Path;

use crate::corpus::parse::{parse_asm, parse_tokens};
use crate::corpus::sample::{CorpusManifest, Sample, Split};
use crate::corpus::vocab::MnemonicVocab;
use crate::error::{Error, Result};

/// Samples in manifest order, plus the manifest, vocabulary and family names.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub manifest: CorpusManifest,
    pub vocab: MnemonicVocab,
    pub family_names: Vec<String>,
}

impl Corpus {
    pub fn num_families(&self) -> usize {
        self.family_names.len()
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        self.manifest.entries[index].split
    }

    pub fn samples_in(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(i, _)| self.split_of(*i) == Some(split))
            .map(|(_, s)| s)
            .collect()
    }

    pub fn family_samples(&self, family: usize, split: Split) -> Vec<&Sample> {
        self.samples_in(split)
            .into_iter()
            .filter(|s| s.family == family)
            .collect()
    }

    /// Index of a family given its name or its numeric id.
    pub fn family_index(&self, key: &str) -> Result<usize> {
        if let Some(i) = self.family_names.iter().position(|n| n == key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(i) if i < self.family_names.len() => Ok(i),
            _ => Err(Error::config(
                "family",
                format!("unknown family `{key}`; known: {}", self.family_names.join(", ")),
            )),
        }
    }

    /// Replaces the manifest (e.g. after splitting); ids must line up.
    pub fn with_manifest(mut self, manifest: CorpusManifest) -> Result<Self> {
        if manifest.entries.len() != self.samples.len()
            || manifest.entries.iter().zip(&self.samples).any(|(e, s)| e.id != s.id)
        {
            return Err(Error::Contract("manifest does not match the corpus samples".into()));
        }
        self.manifest = manifest;
        Ok(self)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let samples_dir = dir.join("samples");
    std::fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    for (sample, entry) in corpus.samples.iter().zip(&corpus.manifest.entries) {
        let mut text = corpus.vocab.decode(&sample.tokens).join(" ");
        text.push('\n');
        write(&dir.join(&entry.path), &text)?;
    }
    write(&dir.join("manifest.csv"), &corpus.manifest.to_csv()?)?;
    corpus.vocab.save(&dir.join("vocab.json"))?;
    let names = serde_json::to_string_pretty(&corpus.family_names).expect("names serialise");
    write(&dir.join("families.json"), &names)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a corpus directory. A missing `vocab.json` is rebuilt from the
/// samples; missing `families.json` names families by id.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = CorpusManifest::from_csv(&read(&dir.join("manifest.csv"))?)?;
    if manifest.entries.is_empty() {
        return Err(Error::Input(format!("{}: empty manifest", dir.display())));
    }
    let mut sequences = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let path = dir.join(&e.path);
        let text = read(&path)?;
        let mnemonics = if e.path.ends_with(".asm") {
            let parsed = parse_asm(&text);
            if parsed.warnings > 0 {
                log::warn!("{}: {} unparseable lines skipped", path.display(), parsed.warnings);
            }
            parsed.mnemonics
        } else {
            parse_tokens(&text)
        };
        if mnemonics.is_empty() {
            return Err(Error::Input(format!("{}: no instructions", path.display())));
        }
        sequences.push(mnemonics);
    }
    let vocab_path = dir.join("vocab.json");
    let vocab = if vocab_path.exists() {
        MnemonicVocab::load(&vocab_path)?
    } else {
        MnemonicVocab::build(&sequences)
    };
    let families_path = dir.join("families.json");
    let max_family = manifest.entries.iter().map(|e| e.family).max().unwrap_or(0);
    let family_names: Vec<String> = if families_path.exists() {
        serde_json::from_str(&read(&families_path)?)
            .map_err(|e| Error::format("families.json", e))?
    } else {
        (0..=max_family).map(|i| i.to_string()).collect()
    };
    if max_family >= family_names.len() {
        return Err(Error::format(
            "families.json",
            format!("family id {max_family} has no name"),
        ));
    }
    let samples = manifest
        .entries
        .iter()
        .zip(&sequences)
        .map(|(e, m)| Sample::new(e.id.clone(), e.family, vocab.encode(m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        samples,
        manifest,
        vocab,
        family_names,
    })
}
