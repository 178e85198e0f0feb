//! Synthetic stand-in for a labelled malware corpus.
//!
//! Every sample is a background stream of mnemonics drawn from one shared
//! Zipf-like distribution, with the family's signature n-grams planted at
//! random, non-overlapping positions. Signatures are built from ordinary
//! background mnemonics, so a family is recognisable only by token *order*,
//! which is exactly what NOP insertion can disturb.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::io::Corpus;
use crate::corpus::sample::{CorpusManifest, ManifestEntry, Sample};
use crate::corpus::vocab::{MnemonicVocab, NOP_MNEMONIC};
use crate::error::{Error, Result};
use crate::rng;

/// Common x86 mnemonics, roughly in descending real-world frequency.
const BACKGROUND: &[&str] = &[
    "mov", "push", "call", "pop", "lea", "add", "cmp", "jmp", "jz", "jnz", "sub", "xor", "test",
    "retn", "and", "inc", "or", "dec", "movzx", "shl", "shr", "imul", "jb", "ja", "jl", "jg", "jbe",
    "jge", "jle", "sar", "sbb", "adc", "neg", "not", "xchg", "leave", "cdq", "idiv", "div", "setz",
    "movsx", "stosd", "lodsb", "rol", "ror", "bt", "cld", "fld", "fstp", "fild", "fmul", "fadd",
    "movsd", "setnz", "cmovz", "bswap", "sahf", "lahf", "cwde", "int3",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    /// Inclusive sample length range.
    pub length: [usize; 2],
    pub signatures: Vec<Vec<String>>,
    /// Inclusive range of plantings per signature per sample.
    pub plantings: [usize; 2],
    /// The family's signatures contain NOP.
    pub nop_bearing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub samples_per_family: usize,
    /// Number of distinct background mnemonics.
    pub background_vocab: usize,
    /// Exponent of the background Zipf weights.
    pub zipf_exponent: f64,
    /// Probability that a background token is a NOP (alignment padding),
    /// shared by every family.
    pub background_nop_rate: f64,
    pub families: Vec<FamilySpec>,
}

fn sig(tokens: &[&str]) -> Vec<String> {
    tokens.iter().map(|t| t.to_string()).collect()
}

fn family(
    name: &str,
    length: [usize; 2],
    plantings: [usize; 2],
    nop_bearing: bool,
    signatures: &[&[&str]],
) -> FamilySpec {
    FamilySpec {
        name: name.to_string(),
        length,
        signatures: signatures.iter().map(|s| sig(s)).collect(),
        plantings,
        nop_bearing,
    }
}

impl Default for SyntheticConfig {
    /// Nine families named after the Microsoft BIG families. Ramnit, Lollipop
    /// and Obfuscator.ACY are long, heavily planted and NOP-bearing; the others
    /// are 200–800 tokens with one or two plantings of each NOP-free signature.
    fn default() -> Self {
        SyntheticConfig {
            samples_per_family: 200,
            background_vocab: 48,
            zipf_exponent: 1.0,
            background_nop_rate: 0.02,
            families: vec![
                family("Ramnit", [1000, 2000], [8, 12], true, &[
                    &["xor", "nop", "nop", "test"],
                    &["lea", "nop", "shl", "nop", "add"],
                    &["movzx", "nop", "sar"],
                ]),
                family("Lollipop", [1000, 2000], [8, 12], true, &[
                    &["push", "nop", "imul"],
                    &["nop", "cdq", "nop", "idiv", "nop"],
                    &["dec", "nop", "neg", "nop"],
                ]),
                family("Kelihos_ver3", [200, 600], [1, 1], false, &[
                    &["cmp", "sbb", "and"],
                    &["shr", "xchg", "inc", "jbe"],
                    &["movsx", "rol", "jge"],
                ]),
                family("Vundo", [200, 800], [1, 2], false, &[
                    &["sub", "adc", "jle", "or"],
                    &["test", "setz", "movzx", "jg", "dec"],
                    &["leave", "retn", "div"],
                ]),
                family("Simda", [200, 500], [1, 1], false, &[
                    &["lea", "bt", "jb"],
                    &["xor", "stosd", "neg", "jl"],
                    &["inc", "lodsb", "shl"],
                ]),
                family("Tracur", [200, 600], [1, 2], false, &[
                    &["call", "ror", "jz", "sar"],
                    &["pop", "not", "ja"],
                    &["and", "cld", "jnz", "imul", "sub"],
                ]),
                family("Kelihos_ver1", [200, 400], [1, 1], false, &[
                    &["add", "idiv", "or"],
                    &["jmp", "neg", "cdq", "setz"],
                    &["dec", "xchg", "shr"],
                ]),
                family("Obfuscator.ACY", [400, 1200], [4, 6], true, &[
                    &["jz", "nop", "xchg", "nop"],
                    &["nop", "not", "nop", "rol"],
                    &["sbb", "nop", "lodsb"],
                ]),
                family("Gatak", [200, 600], [1, 1], false, &[
                    &["test", "adc", "ror"],
                    &["sub", "jge", "bt", "jb"],
                    &["cmp", "lodsb", "leave"],
                ]),
            ],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.len() < 2 {
            return Err(Error::config("synthetic.families", "at least 2 families are needed"));
        }
        if self.samples_per_family == 0 {
            return Err(Error::config("synthetic.samples_per_family", "must be positive"));
        }
        if self.background_vocab < 2 {
            return Err(Error::config("synthetic.background_vocab", "must be at least 2"));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::config("synthetic.zipf_exponent", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.background_nop_rate) {
            return Err(Error::config("synthetic.background_nop_rate", "must be in [0, 1)"));
        }
        for (k, fam) in self.families.iter().enumerate() {
            let field = |f: &str| format!("synthetic.families[{k}].{f}");
            let [lo, hi] = fam.length;
            if lo < 20 || lo > hi {
                return Err(Error::config(field("length"), format!("invalid range [{lo}, {hi}]; minimum is 20")));
            }
            let [pmin, pmax] = fam.plantings;
            if pmin == 0 || pmin > pmax {
                return Err(Error::config(field("plantings"), format!("invalid range [{pmin}, {pmax}]")));
            }
            if fam.signatures.is_empty() {
                return Err(Error::config(field("signatures"), "at least one signature is needed"));
            }
            if pmin * fam.signatures.len() < 3 {
                return Err(Error::config(field("plantings"), "fewer than 3 plantings per sample"));
            }
            for s in &fam.signatures {
                if !(3..=7).contains(&s.len()) {
                    return Err(Error::config(field("signatures"), format!("signature {s:?} must have 3 to 7 tokens")));
                }
            }
            let has_nop = fam.signatures.iter().any(|s| s.iter().any(|t| t == NOP_MNEMONIC));
            if has_nop != fam.nop_bearing {
                return Err(Error::config(
                    field("nop_bearing"),
                    format!("flag is {} but the signatures {} NOP", fam.nop_bearing, if has_nop { "contain" } else { "lack" }),
                ));
            }
            let planted: usize = fam.signatures.iter().map(|s| s.len() * pmax).sum();
            if planted > lo {
                return Err(Error::config(field("length"), format!("{planted} planted tokens do not fit in {lo}")));
            }
        }
        for (a, fa) in self.families.iter().enumerate() {
            for (b, fb) in self.families.iter().enumerate() {
                if a == b {
                    continue;
                }
                for sa in &fa.signatures {
                    for sb in &fb.signatures {
                        if sb.windows(sa.len()).any(|w| w == sa.as_slice()) {
                            return Err(Error::config(
                                format!("synthetic.families[{a}].signatures"),
                                format!("{sa:?} overlaps {sb:?} of family {b}"),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn family_names(&self) -> Vec<String> {
        self.families.iter().map(|f| f.name.clone()).collect()
    }

    fn background(&self) -> Vec<String> {
        (0..self.background_vocab)
            .map(|i| match BACKGROUND.get(i) {
                Some(m) => m.to_string(),
                None => format!("op{i}"),
            })
            .collect()
    }
}

struct Background<'a> {
    names: &'a [String],
    weights: WeightedIndex<f64>,
    nop_rate: f64,
}

impl Background<'_> {
    fn draw(&self, r: &mut rng::Rng) -> String {
        if self.nop_rate > 0.0 && r.gen_bool(self.nop_rate) {
            NOP_MNEMONIC.to_string()
        } else {
            self.names[self.weights.sample(r)].clone()
        }
    }
}

fn planted_sequence(fam: &FamilySpec, background: &Background, r: &mut rng::Rng) -> Vec<String> {
    let len = r.gen_range(fam.length[0]..=fam.length[1]);
    let mut plantings: Vec<&[String]> = Vec::new();
    for s in &fam.signatures {
        let n = r.gen_range(fam.plantings[0]..=fam.plantings[1]);
        plantings.extend(std::iter::repeat_n(s.as_slice(), n));
    }
    plantings.shuffle(r);
    let planted: usize = plantings.iter().map(|p| p.len()).sum();
    let free = len - planted;
    // k+1 background gaps summing to `free`
    let mut cuts: Vec<usize> = (0..plantings.len()).map(|_| r.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(len);
    let mut prev = 0;
    for (p, &cut) in plantings.iter().zip(&cuts) {
        out.extend((prev..cut).map(|_| background.draw(r)));
        out.extend(p.iter().cloned());
        prev = cut;
    }
    out.extend((prev..free).map(|_| background.draw(r)));
    debug_assert_eq!(out.len(), len);
    out
}

/// Pure function of `(config, seed)`. Samples are ordered family-major;
/// every split is left unassigned.
pub fn generate_synthetic_corpus(config: &SyntheticConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let names = config.background();
    let weights = WeightedIndex::new(
        (0..names.len()).map(|i| 1.0 / ((i + 1) as f64).powf(config.zipf_exponent)),
    )
    .map_err(|e| Error::config("synthetic.zipf_exponent", e.to_string()))?;
    let background = Background {
        names: &names,
        weights,
        nop_rate: config.background_nop_rate,
    };

    let mut raw = Vec::new();
    for (k, fam) in config.families.iter().enumerate() {
        let mut r = rng::stream(seed, "synthetic", k as u64);
        for i in 0..config.samples_per_family {
            raw.push((format!("syn-{k}-{i:04}"), k, planted_sequence(fam, &background, &mut r)));
        }
    }
    let vocab = MnemonicVocab::build(raw.iter().map(|(_, _, m)| m));
    let mut samples = Vec::with_capacity(raw.len());
    let mut entries = Vec::with_capacity(raw.len());
    for (id, k, mnemonics) in raw {
        entries.push(ManifestEntry {
            id: id.clone(),
            family: k,
            path: format!("samples/{id}.tokens"),
            split: None,
        });
        samples.push(Sample::new(id, k, vocab.encode(&mnemonics))?);
    }
    Ok(Corpus {
        samples,
        manifest: CorpusManifest { entries },
        vocab,
        family_names: config.family_names(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_family() -> SyntheticConfig {
        SyntheticConfig {
            samples_per_family: 20,
            background_vocab: 10,
            zipf_exponent: 1.0,
            background_nop_rate: 0.0,
            families: vec![
                family("A", [40, 80], [3, 4], false, &[&["aaa", "bbb", "ccc"]]),
                family("B", [40, 80], [3, 3], false, &[&["ddd", "eee", "fff"]]),
            ],
        }
    }

    #[test]
    fn planted_signatures_separate_families() {
        let c = generate_synthetic_corpus(&two_family(), 5).unwrap();
        let a: Vec<u32> = c.vocab.encode(&sig(&["aaa", "bbb", "ccc"]));
        let b: Vec<u32> = c.vocab.encode(&sig(&["ddd", "eee", "fff"]));
        for s in &c.samples {
            let has_a = s.tokens.windows(3).any(|w| w == a.as_slice());
            let has_b = s.tokens.windows(3).any(|w| w == b.as_slice());
            let predicted = if has_a && !has_b { 0 } else { 1 };
            assert_eq!(predicted, s.family, "{}", s.id);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic_corpus(&two_family(), 9).unwrap();
        let b = generate_synthetic_corpus(&two_family(), 9).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.vocab, b.vocab);
        let c = generate_synthetic_corpus(&two_family(), 10).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn lengths_and_plantings_respected() {
        let cfg = two_family();
        let c = generate_synthetic_corpus(&cfg, 1).unwrap();
        let b = c.vocab.encode(&sig(&["ddd", "eee", "fff"]));
        for s in c.samples.iter().filter(|s| s.family == 1) {
            assert!((40..=80).contains(&s.len()));
            assert_eq!(s.tokens.windows(3).filter(|w| *w == b.as_slice()).count(), 3);
            assert!(s.insert_mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn rejects_overlapping_signatures() {
        let mut cfg = two_family();
        cfg.families[1].signatures = vec![sig(&["zzz", "aaa", "bbb", "ccc"])];
        let err = generate_synthetic_corpus(&cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }

    #[test]
    fn nop_flag_must_match_signatures() {
        let mut cfg = two_family();
        cfg.families[0].nop_bearing = true;
        assert!(cfg.validate().is_err());
        cfg.families[0].signatures = vec![sig(&["aaa", "nop", "ccc"])];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn default_config_is_valid_and_lengths_hold() {
        let cfg = SyntheticConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.families.len(), 9);
        let mut small = cfg.clone();
        small.samples_per_family = 3;
        let c = generate_synthetic_corpus(&small, 0).unwrap();
        let nop = c.vocab.id(NOP_MNEMONIC).unwrap();
        for s in &c.samples {
            let fam = &cfg.families[s.family];
            assert!((fam.length[0]..=fam.length[1]).contains(&s.len()));
            if fam.nop_bearing {
                assert!(s.tokens.contains(&nop), "{}", s.id);
            }
        }
    }
}
