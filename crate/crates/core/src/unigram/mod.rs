//! Unigram language-model tokenizer.
//!
//! A model is a set of pieces with log-probabilities; a sequence is encoded
//! by the most probable segmentation. Training seeds a large candidate set
//! from frequent substrings, then alternates EM re-estimation with pruning.
//!
//! Model file grammar:
//!
//! ```text
//! protok-unigram<TAB>1
//! <vocabulary file>
//! pieces<TAB><n>
//! <piece><TAB><log-probability, 17 significant digits>   (n lines, vocab id order)
//! ```

mod lattice;
mod trainer;
mod trie;

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::ProteinSequence;
use crate::vocab::{base_characters, numbered_lines, TokenId, TokenSequence, VocabError, Vocabulary, BASE_VOCAB_SIZE};

pub use lattice::{Edge, SegmentationLattice};
pub use trainer::{
    em_step, expected_counts, leave_one_out_losses, prune, seed_pieces, train_unigram, train_unigram_with, PruneStrategy,
    UnigramConfig,
};

use trie::Trie;

const UNIGRAM_MAGIC: &str = "protok-unigram";
const UNIGRAM_VERSION: u32 = 1;

/// Tolerance on the total probability mass of a model.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum UnigramError {
    #[error("target vocabulary size {0} is below the base inventory of {BASE_VOCAB_SIZE}")]
    TargetTooSmall(usize),
    #[error("maximum piece length must be at least 2, got {0}")]
    MaxPieceLenTooSmall(usize),
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("duplicate piece {0:?}")]
    DuplicatePiece(String),
    #[error("single-character piece {0:?} is missing")]
    MissingSingle(char),
    #[error("piece {piece:?} has non-finite log-probability {log_prob}")]
    NonFiniteLogProb { piece: String, log_prob: f64 },
    #[error("piece probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("non-finite corpus log-likelihood {0} (probability underflow)")]
    NonFiniteLikelihood(f64),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Pieces with log-probabilities plus the vocabulary assigning their ids.
///
/// Single-character pieces come first, in base inventory order, followed by
/// multi-character pieces in the order given at construction.
#[derive(Debug, Clone)]
pub struct UnigramModel {
    pieces: Vec<(String, f64)>,
    ids: Vec<TokenId>,
    vocab: Vocabulary,
    trie: Trie,
    log_probs: Vec<f64>,
    max_len: usize,
}

impl PartialEq for UnigramModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.pieces.len() == other.pieces.len()
            && self
                .pieces
                .iter()
                .zip(&other.pieces)
                .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits())
    }
}

impl UnigramModel {
    /// Builds a model from `(piece, log-probability)` entries. Every base
    /// single-character piece must be present and the probabilities must
    /// sum to one.
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, UnigramError> {
        let model = Self::new_unchecked(entries)?;
        let total = model.total_probability();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(UnigramError::NotNormalized(total));
        }
        Ok(model)
    }

    pub(crate) fn new_unchecked(entries: Vec<(String, f64)>) -> Result<Self, UnigramError> {
        let mut seen = HashSet::new();
        for (p, lp) in &entries {
            if !seen.insert(p.as_str()) {
                return Err(UnigramError::DuplicatePiece(p.clone()));
            }
            if !lp.is_finite() {
                return Err(UnigramError::NonFiniteLogProb { piece: p.clone(), log_prob: *lp });
            }
        }
        let singles = base_characters();
        let by_piece: std::collections::HashMap<&str, f64> = entries.iter().map(|(p, lp)| (p.as_str(), *lp)).collect();
        let mut pieces = Vec::with_capacity(entries.len());
        for c in &singles {
            let s = c.to_string();
            let lp = *by_piece.get(s.as_str()).ok_or(UnigramError::MissingSingle(*c))?;
            pieces.push((s, lp));
        }
        let multis: Vec<(String, f64)> = entries.iter().filter(|(p, _)| !is_single(p)).cloned().collect();
        let vocab = Vocabulary::extend_base(multis.iter().map(|(p, _)| p.clone()))?;
        pieces.extend(multis);
        let ids = pieces.iter().map(|(p, _)| vocab.id_of(p).unwrap()).collect();
        let trie = Trie::new(pieces.iter().map(|(p, _)| p.as_str()));
        let log_probs = pieces.iter().map(|(_, lp)| *lp).collect();
        let max_len = pieces.iter().map(|(p, _)| p.len()).max().unwrap_or(1);
        Ok(Self { pieces, ids, vocab, trie, log_probs, max_len })
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn total_probability(&self) -> f64 {
        self.log_probs.iter().map(|lp| lp.exp()).sum()
    }

    /// Vocabulary id of the piece at `index` in [`Self::pieces`].
    pub fn piece_id(&self, index: usize) -> TokenId {
        self.ids[index]
    }

    pub fn lattice(&self, residues: &str) -> SegmentationLattice {
        SegmentationLattice::build(&self.trie, &self.log_probs, self.max_len, residues.as_bytes(), None)
    }

    pub(crate) fn lattice_without(&self, residues: &str, piece: usize) -> SegmentationLattice {
        SegmentationLattice::build(&self.trie, &self.log_probs, self.max_len, residues.as_bytes(), Some(piece as u32))
    }

    /// Most probable segmentation and its log-probability.
    pub fn viterbi(&self, residues: &str) -> (f64, Vec<TokenId>) {
        let (score, path) = self.lattice(residues).viterbi();
        if path.is_empty() && !residues.is_empty() {
            // Only reachable for characters outside the inventory.
            let unk = self.vocab.specials().unk;
            let mut buf = [0u8; 4];
            let ids = residues
                .chars()
                .map(|c| self.vocab.id_of(c.encode_utf8(&mut buf)).unwrap_or(unk))
                .collect();
            return (score, ids);
        }
        (score, path.iter().map(|e| self.ids[e.piece as usize]).collect())
    }

    pub fn encode_str(&self, residues: &str) -> Vec<TokenId> {
        self.viterbi(residues).1
    }

    pub fn encode(&self, s: &ProteinSequence) -> TokenSequence {
        TokenSequence {
            ids: self.encode_str(s.residues()),
            vocab_size: self.vocab.size(),
            source_id: s.id().to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{UNIGRAM_MAGIC}\t{UNIGRAM_VERSION}").unwrap();
        out.push_str(&self.vocab.to_text());
        writeln!(out, "pieces\t{}", self.pieces.len()).unwrap();
        for (p, lp) in &self.pieces {
            writeln!(out, "{p}\t{lp:.16e}").unwrap();
        }
        out
    }

    pub fn save(&self) -> Vec<u8> {
        self.to_text().into_bytes()
    }

    pub fn load(bytes: &[u8]) -> Result<Self, UnigramError> {
        let fmt = |line: usize, msg: String| UnigramError::Format { line, msg };
        let text = std::str::from_utf8(bytes).map_err(|e| fmt(0, e.to_string()))?;
        let mut lines = numbered_lines(text);
        let header = lines.next().map(|(_, l)| l).unwrap_or_default();
        if header != format!("{UNIGRAM_MAGIC}\t{UNIGRAM_VERSION}") {
            return Err(fmt(1, format!("bad header {header:?}")));
        }
        let vocab = Vocabulary::read_from(&mut lines)?;
        let (line_no, count_line) = lines.next().ok_or_else(|| fmt(0, "missing pieces section".into()))?;
        let count: usize = count_line
            .strip_prefix("pieces\t")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| fmt(line_no, format!("bad pieces line {count_line:?}")))?;
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let (line_no, line) =
                lines.next().ok_or_else(|| fmt(0, format!("expected {count} pieces, found {i}")))?;
            let (p, lp) = line.split_once('\t').ok_or_else(|| fmt(line_no, format!("bad piece line {line:?}")))?;
            let lp: f64 = lp.parse().map_err(|_| fmt(line_no, format!("bad log-probability {lp:?}")))?;
            entries.push((p.to_string(), lp));
        }
        if let Some((line, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(fmt(line, format!("trailing content {extra:?}")));
        }
        let model = Self::new(entries)?;
        if model.vocab != vocab {
            return Err(fmt(0, "vocabulary section does not match the piece table".into()));
        }
        Ok(model)
    }
}

fn is_single(piece: &str) -> bool {
    piece.chars().nth(1).is_none()
}
