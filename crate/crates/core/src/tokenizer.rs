//! One interface over the three tokenizer families.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bpe::{train_bpe, BpeError, BpeModel};
use crate::corpus::{Corpus, ProteinSequence};
use crate::unigram::{train_unigram, UnigramError, UnigramModel};
use crate::vocab::{base_vocabulary, decode_ids, encode_per_aa, TokenId, TokenSequence, VocabError, Vocabulary, BASE_VOCAB_SIZE};
use crate::Trained;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error(transparent)]
    Bpe(#[from] BpeError),
    #[error(transparent)]
    Unigram(#[from] UnigramError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("per-aa tokenizer has a fixed vocabulary of {BASE_VOCAB_SIZE}, not {0}")]
    PerAaSize(usize),
    #[error("unknown tokenizer method {0:?} (expected per-aa, bpe or unigram)")]
    UnknownMethod(String),
    #[error("unrecognized model file header {0:?}")]
    UnknownFormat(String),
    #[error("vocabulary file is not the base inventory; per-aa models use it unchanged")]
    NotBaseVocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    PerAa,
    Bpe,
    Unigram,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PerAa => "per-aa",
            Method::Bpe => "bpe",
            Method::Unigram => "unigram",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-aa" => Ok(Method::PerAa),
            "bpe" => Ok(Method::Bpe),
            "unigram" => Ok(Method::Unigram),
            other => Err(TokenizerError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    PerAa,
    Bpe(BpeModel),
    Unigram(UnigramModel),
}

impl Tokenizer {
    pub fn train(method: Method, corpus: &Corpus, vocab_size: usize) -> Result<Trained<Tokenizer>, TokenizerError> {
        Ok(match method {
            Method::PerAa => {
                if vocab_size != BASE_VOCAB_SIZE {
                    return Err(TokenizerError::PerAaSize(vocab_size));
                }
                Trained { model: Tokenizer::PerAa, shortfall: None }
            }
            Method::Bpe => {
                let t = train_bpe(corpus, vocab_size)?;
                Trained { model: Tokenizer::Bpe(t.model), shortfall: t.shortfall }
            }
            Method::Unigram => {
                let t = train_unigram(corpus, vocab_size)?;
                Trained { model: Tokenizer::Unigram(t.model), shortfall: t.shortfall }
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Tokenizer::PerAa => Method::PerAa,
            Tokenizer::Bpe(_) => Method::Bpe,
            Tokenizer::Unigram(_) => Method::Unigram,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Tokenizer::PerAa => base_vocabulary(),
            Tokenizer::Bpe(m) => m.vocab(),
            Tokenizer::Unigram(m) => m.vocab(),
        }
    }

    pub fn encode_str(&self, residues: &str) -> Vec<TokenId> {
        match self {
            Tokenizer::PerAa => {
                let v = base_vocabulary();
                let unk = v.specials().unk;
                let mut buf = [0u8; 4];
                residues.chars().map(|c| v.id_of(c.encode_utf8(&mut buf)).unwrap_or(unk)).collect()
            }
            Tokenizer::Bpe(m) => m.encode_str(residues),
            Tokenizer::Unigram(m) => m.encode_str(residues),
        }
    }

    pub fn encode(&self, s: &ProteinSequence) -> TokenSequence {
        match self {
            Tokenizer::PerAa => encode_per_aa(base_vocabulary(), s),
            Tokenizer::Bpe(m) => m.encode(s),
            Tokenizer::Unigram(m) => m.encode(s),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        decode_ids(self.vocab(), ids)
    }

    /// Model file bytes. The per-aa tokenizer saves the base vocabulary.
    pub fn save(&self) -> Vec<u8> {
        match self {
            Tokenizer::PerAa => base_vocabulary().save(),
            Tokenizer::Bpe(m) => m.save(),
            Tokenizer::Unigram(m) => m.save(),
        }
    }

    /// Loads any model file, dispatching on its header line.
    pub fn load(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let magic = first.split(|&b| b == b'\t').next().unwrap_or_default();
        match magic {
            b"protok-bpe" => Ok(Tokenizer::Bpe(BpeModel::load(bytes)?)),
            b"protok-unigram" => Ok(Tokenizer::Unigram(UnigramModel::load(bytes)?)),
            b"protok-vocab" => {
                if &Vocabulary::load(bytes)? != base_vocabulary() {
                    return Err(TokenizerError::NotBaseVocabulary);
                }
                Ok(Tokenizer::PerAa)
            }
            _ => Err(TokenizerError::UnknownFormat(String::from_utf8_lossy(first).into_owned())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        Corpus::from_residues("t", ["MKVLAAGLLK", "MKVLSSGLLK", "GGMKVLWW"]).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::PerAa, Method::Bpe, Method::Unigram] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("wordpiece".parse::<Method>().is_err());
    }

    #[test]
    fn all_methods_round_trip_through_files() {
        let c = corpus();
        for (m, v) in [(Method::PerAa, 33), (Method::Bpe, 40), (Method::Unigram, 40)] {
            let t = Tokenizer::train(m, &c, v).unwrap().model;
            assert_eq!(t.method(), m);
            let back = Tokenizer::load(&t.save()).unwrap();
            assert_eq!(back, t);
            for s in c.iter() {
                let ids = back.encode_str(s.residues());
                assert_eq!(ids, t.encode(s).ids);
                assert_eq!(back.decode(&ids).unwrap(), s.residues());
            }
        }
    }

    #[test]
    fn per_aa_size_is_fixed() {
        assert!(matches!(Tokenizer::train(Method::PerAa, &corpus(), 50), Err(TokenizerError::PerAaSize(50))));
    }

    #[test]
    fn load_rejects_unknown_headers() {
        assert!(matches!(Tokenizer::load(b"sentencepiece\t1\n"), Err(TokenizerError::UnknownFormat(_))));
        let ext = Vocabulary::extend_base(["AB"]).unwrap();
        assert!(matches!(Tokenizer::load(&ext.save()), Err(TokenizerError::NotBaseVocabulary)));
    }
}
