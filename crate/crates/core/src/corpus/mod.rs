//! Listing parser, vocabulary, samples, synthetic generation and splits.

mod io;
mod parse;
mod sample;
mod split;
mod synth;
mod vocab;

pub use io::{load_corpus, write_corpus, Corpus};
pub use parse::{parse_asm, parse_tokens, ParsedListing};
pub use sample::{build_insert_mask, CorpusManifest, ManifestEntry, Sample, Split};
pub use split::{split_corpus, SplitRatios};
pub use synth::{generate_synthetic_corpus, FamilySpec, SyntheticConfig};
pub use vocab::{MnemonicVocab, NOP_ID, NOP_MNEMONIC, UNKNOWN_ID, UNKNOWN_TOKEN};
