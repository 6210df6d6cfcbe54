//! Protein sequence corpora: FASTA ingestion, deduplication and hold-out splits.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vocab::is_residue;

pub const DEFAULT_MAX_LEN: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: sequence data before any '>' header")]
    DataBeforeHeader { line: usize },
    #[error("line {line}: record header has no identifier")]
    EmptyId { line: usize },
    #[error("record {id:?}: empty sequence")]
    EmptySequence { id: String },
    #[error("record {id:?} line {line} column {column}: invalid residue {ch:?}")]
    InvalidResidue { id: String, ch: char, line: usize, column: usize },
    #[error("duplicate sequence id {0:?}")]
    DuplicateId(String),
    #[error("input is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("hold-out count {requested} exceeds corpus size {available}")]
    HoldoutTooLarge { requested: usize, available: usize },
}

/// A validated protein sequence: non-empty, uppercase residue letters only.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProteinSequence {
    id: String,
    residues: String,
}

impl ProteinSequence {
    pub fn new(id: impl Into<String>, residues: impl Into<String>) -> Result<Self, CorpusError> {
        let id = id.into();
        let residues = residues.into();
        if residues.is_empty() {
            return Err(CorpusError::EmptySequence { id });
        }
        if let Some((column, ch)) = residues.chars().enumerate().find(|(_, c)| !is_residue(*c)) {
            return Err(CorpusError::InvalidResidue { id, ch, line: 0, column: column + 1 });
        }
        Ok(Self { id, residues })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn residues(&self) -> &str {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }
}

/// An ordered, immutable collection of sequences with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sequences: Vec<ProteinSequence>,
    source: String,
}

impl Corpus {
    pub fn new(source: impl Into<String>, sequences: Vec<ProteinSequence>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(sequences.len());
        for s in &sequences {
            if !seen.insert(s.id()) {
                return Err(CorpusError::DuplicateId(s.id().to_string()));
            }
        }
        Ok(Self { sequences, source: source.into() })
    }

    /// Builds a corpus from bare residue strings, naming them `seq0`, `seq1`, ...
    pub fn from_residues<I, S>(source: &str, residues: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let seqs = residues
            .into_iter()
            .enumerate()
            .map(|(i, r)| ProteinSequence::new(format!("seq{i}"), r))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(source, seqs)
    }

    pub fn sequences(&self) -> &[ProteinSequence] {
        &self.sequences
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ProteinSequence> {
        self.sequences.iter()
    }

    pub fn total_residues(&self) -> usize {
        self.sequences.iter().map(ProteinSequence::len).sum()
    }

    /// FASTA with residues wrapped at `width` columns.
    pub fn to_fasta(&self, width: usize) -> String {
        let width = width.max(1);
        let mut out = String::with_capacity(self.total_residues() + self.len() * 16);
        for s in &self.sequences {
            writeln!(out, ">{}", s.id).unwrap();
            let bytes = s.residues.as_bytes();
            for chunk in bytes.chunks(width) {
                out.push_str(std::str::from_utf8(chunk).unwrap());
                out.push('\n');
            }
        }
        out
    }

    /// One `id<TAB>length` line per sequence.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.sequences {
            writeln!(out, "{}\t{}", s.id, s.len()).unwrap();
        }
        out
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a ProteinSequence;
    type IntoIter = std::slice::Iter<'a, ProteinSequence>;

    fn into_iter(self) -> Self::IntoIter {
        self.sequences.iter()
    }
}

#[derive(Debug, Clone)]
pub struct FastaOptions {
    /// Sequences longer than this are truncated. `None` disables truncation.
    pub max_len: Option<usize>,
    pub source: String,
}

impl Default for FastaOptions {
    fn default() -> Self {
        Self { max_len: Some(DEFAULT_MAX_LEN), source: String::from("fasta") }
    }
}

/// Warning counters collected during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub records: usize,
    pub truncated: usize,
    pub stripped_stop: usize,
    pub stripped_gap: usize,
    pub lowercased: usize,
}

pub fn parse_fasta(raw: &[u8]) -> Result<Corpus, CorpusError> {
    parse_fasta_with(raw, &FastaOptions::default()).map(|(c, _)| c)
}

pub fn parse_fasta_with(raw: &[u8], opts: &FastaOptions) -> Result<(Corpus, IngestStats), CorpusError> {
    let text = std::str::from_utf8(raw).map_err(|e| CorpusError::Encoding(e.to_string()))?;
    let mut stats = IngestStats::default();
    let mut sequences = Vec::new();
    let mut current: Option<(String, String)> = None;

    let mut finish = |rec: Option<(String, String)>, stats: &mut IngestStats| -> Result<(), CorpusError> {
        if let Some((id, mut residues)) = rec {
            if residues.is_empty() {
                return Err(CorpusError::EmptySequence { id });
            }
            if let Some(max) = opts.max_len {
                if residues.len() > max {
                    residues.truncate(max);
                    stats.truncated += 1;
                }
            }
            stats.records += 1;
            sequences.push(ProteinSequence { id, residues });
        }
        Ok(())
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            finish(current.take(), &mut stats)?;
            let id = header.split_whitespace().next().ok_or(CorpusError::EmptyId { line: line_no })?;
            current = Some((id.to_string(), String::new()));
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, residues)) = current.as_mut() else {
            return Err(CorpusError::DataBeforeHeader { line: line_no });
        };
        for (col, ch) in line.chars().enumerate() {
            match ch {
                c if c.is_whitespace() => {}
                '*' => stats.stripped_stop += 1,
                '-' => stats.stripped_gap += 1,
                c if is_residue(c) => residues.push(c),
                c if is_residue(c.to_ascii_uppercase()) => {
                    stats.lowercased += 1;
                    residues.push(c.to_ascii_uppercase());
                }
                c => {
                    return Err(CorpusError::InvalidResidue {
                        id: id.clone(),
                        ch: c,
                        line: line_no,
                        column: col + 1,
                    })
                }
            }
        }
    }
    finish(current.take(), &mut stats)?;
    if stats.truncated > 0 {
        log::warn!("truncated {} sequences to {} residues", stats.truncated, opts.max_len.unwrap_or(0));
    }
    if stats.stripped_stop + stats.stripped_gap > 0 {
        log::warn!("stripped {} '*' and {} '-' characters", stats.stripped_stop, stats.stripped_gap);
    }
    Ok((Corpus::new(opts.source.clone(), sequences)?, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub holdout_count: usize,
    pub seed: u64,
}

/// Draws `holdout_count` sequences uniformly without replacement into the
/// validation set. Both halves keep the corpus order.
pub fn split_holdout(corpus: &Corpus, spec: SplitSpec) -> Result<(Corpus, Corpus), CorpusError> {
    let n = corpus.len();
    if spec.holdout_count > n {
        return Err(CorpusError::HoldoutTooLarge { requested: spec.holdout_count, available: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut held = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, spec.holdout_count) {
        held[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - spec.holdout_count), Vec::with_capacity(spec.holdout_count));
    for (s, h) in corpus.sequences.iter().zip(held) {
        if h {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((
        Corpus { sequences: train, source: format!("{}:train", corpus.source) },
        Corpus { sequences: val, source: format!("{}:validation", corpus.source) },
    ))
}

/// Keeps the first occurrence of each residue string.
pub fn dedup(corpus: &Corpus) -> Corpus {
    let mut seen = HashSet::new();
    let sequences = corpus
        .sequences
        .iter()
        .filter(|s| seen.insert(s.residues.as_str()))
        .cloned()
        .collect();
    Corpus { sequences, source: corpus.source.clone() }
}
