//! Helpers shared by the CLI test targets.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub const TINY: &str = r#"
seed = 3
[corpus.synthetic]
samples_per_family = 40
[classifier]
epochs = 6
[agent]
episodes = 20
[eval]
families = ["Simda", "Gatak"]
"#;

pub fn nopevade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nopevade"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) {
    let out = nopevade(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// sha256 of every file under `dir`, keyed by relative path.
pub fn hashes(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn pipeline(config: &Path, out: &Path) {
    let c = config.to_str().unwrap();
    let o = out.to_str().unwrap();
    ok(&["--config", c, "--out", o, "gen-corpus"]);
    ok(&["--config", c, "--out", o, "train-classifier"]);
    ok(&["--config", c, "--out", o, "eval-classifier"]);
    ok(&["--config", c, "--out", o, "train-agent", "--family", "Simda"]);
    ok(&["--config", c, "--out", o, "train-agent", "--family", "8"]);
    ok(&["--config", c, "--out", o, "evaluate"]);
    ok(&["--out", o, "report"]);
}
