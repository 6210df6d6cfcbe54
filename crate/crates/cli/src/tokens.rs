//! Line-delimited token streams: `#` header lines, then one
//! `<sequence id>\t<space-separated ids>` line per sequence.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use protok::vocab::{TokenId, TokenSequence};

pub fn header(fields: &[(&str, String)]) -> String {
    let mut out = String::from("# protok-tokens");
    for (k, v) in fields {
        write!(out, "\t{k}={v}").unwrap();
    }
    out.push('\n');
    out
}

pub fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut out = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{x}").unwrap();
    }
    out
}

pub fn write_line(out: &mut String, id: &str, ids: &[TokenId]) {
    writeln!(out, "{id}\t{}", join(ids)).unwrap();
}

/// Parses a token stream, checking every id against `vocab_size`.
pub fn parse(text: &str, file: &str, vocab_size: usize) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let Some((id, rest)) = line.split_once('\t') else {
            bail!("{file}: line {line_no}: expected <id>\\t<token ids>");
        };
        if id.is_empty() {
            bail!("{file}: line {line_no}: empty sequence id");
        }
        let ids = rest
            .split_whitespace()
            .enumerate()
            .map(|(pos, t)| {
                let v: TokenId = t
                    .parse()
                    .with_context(|| format!("{file}: line {line_no}: record {id}: bad token id {t:?} at position {pos}"))?;
                if v as usize >= vocab_size {
                    bail!("{file}: line {line_no}: record {id}: token id {v} at position {pos} is outside the vocabulary of {vocab_size}");
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(TokenSequence { ids, vocab_size, source_id: id.to_string() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = header(&[("seed", "42".into())]);
        write_line(&mut s, "a", &[5, 6, 7]);
        write_line(&mut s, "b", &[]);
        let t = parse(&s, "x", 33).unwrap();
        assert_eq!(t[0].ids, vec![5, 6, 7]);
        assert!(t[1].ids.is_empty());
        assert_eq!(t[1].source_id, "b");
    }

    #[test]
    fn errors_name_position() {
        let err = parse("a\t5 x 7\n", "f.tok", 33).unwrap_err().to_string();
        assert!(err.contains("f.tok: line 1: record a") && err.contains("position 1"), "{err}");
        let err = parse("# h\na\t5 40\n", "f.tok", 33).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("outside"), "{err}");
    }
}
