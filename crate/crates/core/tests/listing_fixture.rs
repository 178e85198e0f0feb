use std::path::{Path, PathBuf};

use nopevade::corpus::{load_corpus, parse_asm, Split, NOP_ID};

const EXPECTED: &[&str] = &[
    "push", "mov", "sub", "push", "mov", "test", "jz", "lea", "push", "push", "call", "add", "xor", "inc",
    "jmp", "mov", "shl", "add", "mov", "pop", "nop", "mov", "pop", "retn",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn parse(name: &str) -> nopevade::corpus::ParsedListing {
    parse_asm(&std::fs::read_to_string(fixture(name)).unwrap())
}

#[test]
fn listing_parses_to_the_expected_mnemonics() {
    let p = parse("listing.asm");
    assert_eq!(p.mnemonics, EXPECTED);
    assert_eq!(p.warnings, 0);
}

#[test]
fn operand_varied_twin_parses_identically() {
    assert_eq!(parse("listing_twin.asm"), parse("listing.asm"));
}

#[test]
fn listings_load_as_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("listing.asm"), dir.path().join("a.asm")).unwrap();
    std::fs::copy(fixture("listing_twin.asm"), dir.path().join("b.asm")).unwrap();
    std::fs::write(
        dir.path().join("manifest.csv"),
        "id,family,path,split\na,0,a.asm,train\nb,1,b.asm,test\n",
    )
    .unwrap();
    let c = load_corpus(dir.path()).unwrap();
    assert_eq!(c.samples.len(), 2);
    assert_eq!(c.samples[0].tokens, c.samples[1].tokens);
    assert_eq!(c.vocab.decode(&c.samples[0].tokens), EXPECTED);
    assert_eq!(c.samples[0].tokens[20], NOP_ID);
    assert_eq!(c.family_names, ["0", "1"]);
    assert_eq!(c.samples_in(Split::Test)[0].id, "b");
}
