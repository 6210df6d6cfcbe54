//! Vocabularies, the fixed 33-piece residue inventory, and the vocabulary
//! file format.
//!
//! A vocabulary file is UTF-8 text:
//!
//! ```text
//! protok-vocab<TAB>1
//! <size>
//! <piece><TAB>special|piece      (repeated <size> times, in id order)
//! ```
//!
//! Ids are the zero-based line index after the size line. The five special
//! tokens `<pad> <unk> <cls> <sep> <mask>` must each appear exactly once and
//! be flagged `special`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use thiserror::Error;

use crate::corpus::ProteinSequence;

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const CLS: &str = "<cls>";
pub const SEP: &str = "<sep>";
pub const MASK: &str = "<mask>";

pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// Size of the per-residue baseline vocabulary, specials included.
pub const BASE_VOCAB_SIZE: usize = 33;

const VOCAB_MAGIC: &str = "protok-vocab";
const VOCAB_VERSION: u32 = 1;

static BASE_VOCAB_FILE: &str = include_str!("../data/base.vocab");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary file is truncated: {0}")]
    Truncated(String),
    #[error("not a vocabulary file (bad header {0:?})")]
    BadHeader(String),
    #[error("unsupported vocabulary version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("duplicate piece {piece:?} at id {id}")]
    DuplicatePiece { piece: String, id: usize },
    #[error("special token {0} is missing")]
    MissingSpecial(&'static str),
    #[error("piece {0:?} is flagged special but is not a known special token")]
    UnknownSpecial(String),
    #[error("special token {0} is not flagged special")]
    UnflaggedSpecial(String),
    #[error("line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("token sequence was built for vocabulary size {found}, not {expected}")]
    SizeMismatch { expected: usize, found: usize },
}

/// Ids of the five reserved tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

/// Dense id <-> piece map with special-token flags.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pieces: Vec<String>,
    special: Vec<bool>,
    index: HashMap<String, TokenId>,
    specials: SpecialIds,
    max_piece_chars: usize,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.special == other.special
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    /// Builds a vocabulary from `(piece, is_special)` entries in id order.
    pub fn new<I, S>(entries: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        let mut pieces = Vec::new();
        let mut special = Vec::new();
        let mut index = HashMap::new();
        for (id, (piece, is_special)) in entries.into_iter().enumerate() {
            let piece = piece.into();
            if piece.is_empty() || piece.contains(['\t', '\n', '\r']) {
                return Err(VocabError::BadLine {
                    line: id,
                    msg: format!("invalid piece {piece:?}"),
                });
            }
            let known = SPECIAL_TOKENS.contains(&piece.as_str());
            if is_special && !known {
                return Err(VocabError::UnknownSpecial(piece));
            }
            if known && !is_special {
                return Err(VocabError::UnflaggedSpecial(piece));
            }
            if index.insert(piece.clone(), id as TokenId).is_some() {
                return Err(VocabError::DuplicatePiece { piece, id });
            }
            pieces.push(piece);
            special.push(is_special);
        }
        let lookup = |name: &'static str| index.get(name).copied().ok_or(VocabError::MissingSpecial(name));
        let specials = SpecialIds {
            pad: lookup(PAD)?,
            unk: lookup(UNK)?,
            cls: lookup(CLS)?,
            sep: lookup(SEP)?,
            mask: lookup(MASK)?,
        };
        let max_piece_chars = pieces
            .iter()
            .zip(&special)
            .filter(|(_, s)| !**s)
            .map(|(p, _)| p.chars().count())
            .max()
            .unwrap_or(0);
        Ok(Self { pieces, special, index, specials, max_piece_chars })
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn id_of(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece_of(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.get(id as usize).copied().unwrap_or(false)
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn pieces(&self) -> impl Iterator<Item = (TokenId, &str, bool)> {
        self.pieces
            .iter()
            .zip(&self.special)
            .enumerate()
            .map(|(i, (p, s))| (i as TokenId, p.as_str(), *s))
    }

    /// Length in characters of the longest non-special piece.
    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    /// Serializes to the versioned text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{VOCAB_MAGIC}\t{VOCAB_VERSION}").unwrap();
        writeln!(out, "{}", self.pieces.len()).unwrap();
        for (piece, special) in self.pieces.iter().zip(&self.special) {
            let kind = if *special { "special" } else { "piece" };
            writeln!(out, "{piece}\t{kind}").unwrap();
        }
        out
    }

    pub fn save(&self) -> Vec<u8> {
        self.to_text().into_bytes()
    }

    /// Parses a vocabulary from the front of `lines`, leaving any trailing
    /// lines (model sections) for the caller.
    pub(crate) fn read_from<'a, I>(lines: &mut I) -> Result<Self, VocabError>
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        let (_, header) = lines
            .next()
            .ok_or_else(|| VocabError::Truncated("missing header".into()))?;
        let (magic, version) = header
            .split_once('\t')
            .ok_or_else(|| VocabError::BadHeader(header.to_string()))?;
        if magic != VOCAB_MAGIC {
            return Err(VocabError::BadHeader(header.to_string()));
        }
        if version.parse::<u32>().ok() != Some(VOCAB_VERSION) {
            return Err(VocabError::VersionMismatch {
                found: version.to_string(),
                expected: VOCAB_VERSION,
            });
        }
        let (line_no, size_line) = lines
            .next()
            .ok_or_else(|| VocabError::Truncated("missing size line".into()))?;
        let size: usize = size_line.trim().parse().map_err(|_| VocabError::BadLine {
            line: line_no,
            msg: format!("bad size {size_line:?}"),
        })?;
        let mut entries = Vec::with_capacity(size);
        for i in 0..size {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| VocabError::Truncated(format!("expected {size} pieces, got {i}")))?;
            let (piece, kind) = line.split_once('\t').ok_or_else(|| VocabError::BadLine {
                line: line_no,
                msg: "expected <piece>\\t<kind>".into(),
            })?;
            let special = match kind {
                "special" => true,
                "piece" => false,
                other => {
                    return Err(VocabError::BadLine {
                        line: line_no,
                        msg: format!("unknown kind {other:?}"),
                    })
                }
            };
            entries.push((piece.to_string(), special));
        }
        Self::new(entries)
    }

    pub fn load(bytes: &[u8]) -> Result<Self, VocabError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| VocabError::BadHeader(format!("not UTF-8: {e}")))?;
        let mut lines = numbered_lines(text);
        let vocab = Self::read_from(&mut lines)?;
        if let Some((line, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(VocabError::BadLine {
                line,
                msg: format!("trailing content {extra:?}"),
            });
        }
        Ok(vocab)
    }

    /// Returns the base inventory extended with `extra` multi-character
    /// pieces, appended in the given order.
    pub fn extend_base<I, S>(extra: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let base = base_vocabulary();
        let entries = base
            .pieces()
            .map(|(_, p, s)| (p.to_string(), s))
            .chain(extra.into_iter().map(|p| (p.into(), false)))
            .collect::<Vec<_>>();
        Self::new(entries)
    }
}

/// 1-based line numbering, tolerant of CRLF.
pub(crate) fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
}

/// Encoded sequence bound to the vocabulary size that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub vocab_size: usize,
    pub source_id: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The 33-piece per-residue inventory shipped in `data/base.vocab`.
pub fn base_vocabulary() -> &'static Vocabulary {
    static BASE: OnceLock<Vocabulary> = OnceLock::new();
    BASE.get_or_init(|| Vocabulary::load(BASE_VOCAB_FILE.as_bytes()).expect("shipped base vocabulary is valid"))
}

/// Characters accepted as residues in protein sequences.
pub fn is_residue(c: char) -> bool {
    c.is_ascii_uppercase()
}

/// The 28 non-special single-character pieces of the base inventory, in id order.
pub fn base_characters() -> Vec<char> {
    base_vocabulary()
        .pieces()
        .filter(|(_, _, s)| !s)
        .map(|(_, p, _)| p.chars().next().unwrap())
        .collect()
}

/// One token per residue; characters missing from `v` become `<unk>`.
pub fn encode_per_aa(v: &Vocabulary, s: &ProteinSequence) -> TokenSequence {
    let unk = v.specials().unk;
    let mut buf = [0u8; 4];
    let ids = s
        .residues()
        .chars()
        .map(|c| v.id_of(c.encode_utf8(&mut buf)).unwrap_or(unk))
        .collect();
    TokenSequence { ids, vocab_size: v.size(), source_id: s.id().to_string() }
}

/// Concatenates the non-special pieces of `t`.
pub fn decode(v: &Vocabulary, t: &TokenSequence) -> Result<String, VocabError> {
    if t.vocab_size != v.size() {
        return Err(VocabError::SizeMismatch { expected: v.size(), found: t.vocab_size });
    }
    decode_ids(v, &t.ids)
}

pub fn decode_ids(v: &Vocabulary, ids: &[TokenId]) -> Result<String, VocabError> {
    let mut out = String::with_capacity(ids.len());
    for &id in ids {
        let piece = v.piece_of(id).ok_or(VocabError::IdOutOfRange { id, size: v.size() })?;
        if !v.is_special(id) {
            out.push_str(piece);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(r: &str) -> ProteinSequence {
        ProteinSequence::new("t", r).unwrap()
    }

    #[test]
    fn base_has_33_pieces() {
        let v = base_vocabulary();
        assert_eq!(v.size(), BASE_VOCAB_SIZE);
        assert_eq!(v.pieces().filter(|(_, _, s)| *s).count(), 5);
        assert!(v.specials().mask < 33);
        assert!(v.is_special(v.specials().mask));
    }

    #[test]
    fn canonical_residues_are_distinct() {
        let v = base_vocabulary();
        let ids: std::collections::HashSet<_> =
            "ACDEFGHIKLMNPQRSTVWY".chars().map(|c| v.id_of(&c.to_string()).unwrap()).collect();
        assert_eq!(ids.len(), 20);
        for c in 'A'..='Z' {
            assert!(v.id_of(&c.to_string()).is_some(), "{c} missing");
        }
    }

    #[test]
    fn id_and_piece_are_inverse() {
        let v = base_vocabulary();
        for id in 0..v.size() as TokenId {
            assert_eq!(v.id_of(v.piece_of(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn per_aa_encodes_each_residue() {
        let v = base_vocabulary();
        let t = encode_per_aa(v, &seq("MKV"));
        let expect: Vec<_> = ["M", "K", "V"].iter().map(|p| v.id_of(p).unwrap()).collect();
        assert_eq!(t.ids, expect);
        assert_eq!(decode(v, &t).unwrap(), "MKV");
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = Vocabulary::new([(PAD, true), (UNK, true), (CLS, true), (SEP, true), (MASK, true), ("A", false)])
            .unwrap();
        let t = encode_per_aa(&v, &seq("AK"));
        assert_eq!(t.ids, vec![v.id_of("A").unwrap(), v.specials().unk]);
    }

    #[test]
    fn decode_strips_specials() {
        let v = base_vocabulary();
        assert_eq!(decode_ids(v, &[v.specials().mask]).unwrap(), "");
        assert_eq!(
            decode_ids(v, &[99]),
            Err(VocabError::IdOutOfRange { id: 99, size: 33 })
        );
        let t = TokenSequence { ids: vec![], vocab_size: 50, source_id: "x".into() };
        assert!(matches!(decode(v, &t), Err(VocabError::SizeMismatch { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let v = base_vocabulary();
        assert_eq!(&Vocabulary::load(&v.save()).unwrap(), v);
        let ext = Vocabulary::extend_base(["AB", "ABC", "LL"]).unwrap();
        let back = Vocabulary::load(&ext.save()).unwrap();
        assert_eq!(back, ext);
        assert_eq!(back.id_of("LL"), Some(35));
        assert_eq!(back.max_piece_chars(), 3);
    }

    #[test]
    fn load_errors() {
        let text = base_vocabulary().to_text();
        let cut = text[..text.len() / 2].rfind('\n').unwrap() + 1;
        let truncated = &text[..cut];
        assert!(matches!(Vocabulary::load(truncated.as_bytes()), Err(VocabError::Truncated(_))));
        let bad_version = text.replacen("protok-vocab\t1", "protok-vocab\t9", 1);
        assert!(matches!(
            Vocabulary::load(bad_version.as_bytes()),
            Err(VocabError::VersionMismatch { .. })
        ));
        let dup = text.replacen("A\tpiece", "L\tpiece", 1);
        assert!(matches!(Vocabulary::load(dup.as_bytes()), Err(VocabError::DuplicatePiece { .. })));
        let missing = text.replacen("<mask>\tspecial", "Q2\tpiece", 1);
        assert_eq!(Vocabulary::load(missing.as_bytes()), Err(VocabError::MissingSpecial(MASK)));
        assert!(matches!(Vocabulary::load(b"hello"), Err(VocabError::BadHeader(_))));
    }
}
