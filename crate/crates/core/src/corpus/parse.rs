//! Mnemonic extraction from IDA-style listings.
//!
//! A listing line looks like
//!
//! ```text
//! .text:00401000 55                         push    ebp
//! .text:00401001 8B EC                      mov     ebp, esp
//! .text:00401003                ; comment
//! .data:00403000 dword_403000   dd 0
//! ```
//!
//! i.e. `SEGMENT:ADDRESS`, optional upper-case raw byte columns, then either an
//! instruction, a directive, a label or a comment. Only the mnemonic of each
//! instruction is kept.

use std::collections::HashSet;
use std::sync::OnceLock;

/// Parsed mnemonics plus the number of lines that were skipped as noise.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedListing {
    pub mnemonics: Vec<String>,
    pub warnings: usize,
}

const DIRECTIVES: &[&str] = &[
    "align", "assume", "public", "extrn", "extern", "include", "includelib", "model", "org", "end",
    "segment", "ends", "proc", "endp", "struc", "struct", "union", "label", "equ", "=", "db", "dw",
    "dd", "df", "dp", "dq", "dt", "byte", "word", "dword", "qword", "tbyte", "unicode", "ddq",
    "dup", "comment", "title", "subttl", "page", "option", "local", "record", "macro", "endm",
    "externdef", "typedef", "proto", ".686p", ".mmx", ".model",
];

fn directives() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| DIRECTIVES.iter().copied().collect())
}

fn is_directive(token: &str) -> bool {
    token.starts_with('.') || directives().contains(token.to_ascii_lowercase().as_str())
}

/// IDA prints opcode bytes as two upper-case hex digits, with a trailing `+`
/// when the byte column was truncated.
fn is_byte_column(token: &str) -> bool {
    let t = token.strip_suffix('+').unwrap_or(token);
    t.len() == 2 && t.bytes().all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b))
}

fn is_mnemonic(token: &str) -> bool {
    let mut bytes = token.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic())
        && bytes.all(|b| b.is_ascii_alphanumeric())
        && token.len() <= 16
}

/// `SEG:HEXADDR` prefix.
fn strip_address(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let (head, rest) = match trimmed.find(char::is_whitespace) {
        Some(i) => (&trimmed[..i], &trimmed[i..]),
        None => (trimmed, ""),
    };
    let (segment, addr) = head.rsplit_once(':')?;
    if segment.is_empty() || addr.is_empty() || !addr.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    Some(rest)
}

enum Line<'a> {
    Instruction(&'a str),
    Nothing,
    Unparseable,
}

fn classify_line(line: &str) -> Line<'_> {
    if line.trim().is_empty() {
        return Line::Nothing;
    }
    let Some(rest) = strip_address(line) else {
        return Line::Unparseable;
    };
    let code = match rest.find(';') {
        Some(i) => &rest[..i],
        None => rest,
    };
    let mut tokens = code.split_whitespace().skip_while(|t| is_byte_column(t));
    let Some(first) = tokens.next() else {
        return Line::Nothing;
    };
    if first.ends_with(':') || is_directive(first) {
        return Line::Nothing;
    }
    // `name proc near`, `dword_403000 dd 0`, `var_4 = dword ptr -4`
    if tokens.next().is_some_and(is_directive) {
        return Line::Nothing;
    }
    if is_mnemonic(first) {
        Line::Instruction(first)
    } else {
        Line::Unparseable
    }
}

/// Extracts one mnemonic per instruction line, in file order. Operands,
/// directives, labels, data definitions and comments are dropped; lines that
/// fit none of the known shapes are counted in `warnings`.
pub fn parse_asm(text: &str) -> ParsedListing {
    let mut out = ParsedListing::default();
    for line in text.lines() {
        match classify_line(line) {
            Line::Instruction(m) => out.mnemonics.push(m.to_string()),
            Line::Nothing => {}
            Line::Unparseable => out.warnings += 1,
        }
    }
    if out.warnings > 0 {
        log::debug!("skipped {} unparseable listing lines", out.warnings);
    }
    out
}

/// A `.tokens` file: whitespace-separated mnemonics.
pub fn parse_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
