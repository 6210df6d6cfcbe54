//! Masking for the MLM objective, and a smoothed token-frequency language
//! model used to score tokenizations at desk scale.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::metrics::{normalized_perplexity, perplexity, MetricError, MetricRecord, ScoredTokens};
use crate::tokenizer::{Method, Tokenizer, TokenizerError};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

pub const DEFAULT_MASK_RATE: f64 = 0.15;
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MlmError {
    #[error("mask rate must be in (0, 1], got {0}")]
    BadRate(f64),
    #[error("sequence {0:?} has no maskable tokens")]
    NoMaskableTokens(String),
    #[error("smoothing alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("no tokens observed")]
    Empty,
    #[error("sequence {id:?} has vocabulary size {found}, model expects {expected}")]
    VocabMismatch { id: String, expected: usize, found: usize },
    #[error("sequence {0:?} has no non-special tokens to score")]
    NothingToScore(String),
    #[error("token id {id} out of range for vocabulary size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub rate: f64,
    /// Of the selected positions, replace 80% with the mask token, 10% with
    /// a random non-special token and leave 10% unchanged.
    pub bert_split: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { rate: DEFAULT_MASK_RATE, bert_split: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub masked_positions: Vec<usize>,
    pub original_ids: Vec<TokenId>,
    pub mask_rate: f64,
}

pub fn mask_tokens(
    t: &TokenSequence,
    vocab: &Vocabulary,
    rate: f64,
    seed: u64,
) -> Result<(TokenSequence, MaskPlan), MlmError> {
    mask_tokens_with(t, vocab, &MaskConfig { rate, ..Default::default() }, seed)
}

/// Selects each non-special position independently with probability
/// `cfg.rate`. When nothing is selected, one maskable position is chosen
/// uniformly instead.
pub fn mask_tokens_with(
    t: &TokenSequence,
    vocab: &Vocabulary,
    cfg: &MaskConfig,
    seed: u64,
) -> Result<(TokenSequence, MaskPlan), MlmError> {
    if !(cfg.rate > 0.0 && cfg.rate <= 1.0) {
        return Err(MlmError::BadRate(cfg.rate));
    }
    let maskable: Vec<usize> = (0..t.ids.len()).filter(|&i| !vocab.is_special(t.ids[i])).collect();
    if maskable.is_empty() {
        return Err(MlmError::NoMaskableTokens(t.source_id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = maskable.iter().copied().filter(|_| rng.gen_bool(cfg.rate)).collect();
    if positions.is_empty() {
        positions.push(maskable[rng.gen_range(0..maskable.len())]);
    }
    let mask = vocab.specials().mask;
    let first_piece = crate::vocab::SPECIAL_TOKENS.len() as TokenId;
    let mut masked = t.clone();
    let original_ids = positions.iter().map(|&p| t.ids[p]).collect();
    for &p in &positions {
        masked.ids[p] = if cfg.bert_split {
            match rng.gen_range(0..10) {
                0 => rng.gen_range(first_piece..vocab.size() as TokenId),
                1 => t.ids[p],
                _ => mask,
            }
        } else {
            mask
        };
    }
    Ok((masked, MaskPlan { masked_positions: positions, original_ids, mask_rate: cfg.rate }))
}

/// Context-free token distribution with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqLM {
    token_log_probs: Vec<f64>,
    alpha: f64,
}

impl FreqLM {
    pub fn vocab_size(&self) -> usize {
        self.token_log_probs.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn token_log_probs(&self) -> &[f64] {
        &self.token_log_probs
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self { token_log_probs: vec![-(vocab_size as f64).ln(); vocab_size], alpha: f64::INFINITY }
    }
}

/// `p(token) = (count + alpha) / (total + alpha * V)` over every id of the
/// vocabulary. Special tokens are not counted.
pub fn fit_freq_lm(tokenized: &[TokenSequence], vocab: &Vocabulary, alpha: f64) -> Result<FreqLM, MlmError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MlmError::BadAlpha(alpha));
    }
    let v = vocab.size();
    let mut counts = vec![0u64; v];
    for t in tokenized {
        if t.vocab_size != v {
            return Err(MlmError::VocabMismatch { id: t.source_id.clone(), expected: v, found: t.vocab_size });
        }
        for &id in &t.ids {
            if id as usize >= v {
                return Err(MlmError::IdOutOfRange { id, size: v });
            }
            if !vocab.is_special(id) {
                counts[id as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(MlmError::Empty);
    }
    let denom = total as f64 + alpha * v as f64;
    let token_log_probs = counts.iter().map(|&c| ((c as f64 + alpha) / denom).ln()).collect();
    Ok(FreqLM { token_log_probs, alpha })
}

/// Log-probabilities of the non-special tokens of `t`.
pub fn score(lm: &FreqLM, vocab: &Vocabulary, t: &TokenSequence) -> Result<ScoredTokens, MlmError> {
    if t.vocab_size != lm.vocab_size() {
        return Err(MlmError::VocabMismatch { id: t.source_id.clone(), expected: lm.vocab_size(), found: t.vocab_size });
    }
    let mut lps = Vec::with_capacity(t.ids.len());
    for &id in &t.ids {
        let lp = *lm.token_log_probs.get(id as usize).ok_or(MlmError::IdOutOfRange { id, size: lm.vocab_size() })?;
        if !vocab.is_special(id) {
            lps.push(lp);
        }
    }
    if lps.is_empty() {
        return Err(MlmError::NothingToScore(t.source_id.clone()));
    }
    Ok(ScoredTokens::new(lps, lm.vocab_size())?)
}

/// Scores every sequence and concatenates the results in corpus order.
pub fn score_all(lm: &FreqLM, vocab: &Vocabulary, tokenized: &[TokenSequence]) -> Result<ScoredTokens, MlmError> {
    let parts: Vec<ScoredTokens> = tokenized.par_iter().map(|t| score(lm, vocab, t)).collect::<Result<_, _>>()?;
    Ok(ScoredTokens::concat(parts)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub requested_size: usize,
    pub vocab_size: usize,
    pub perplexity: f64,
    pub normalized_perplexity: f64,
    pub tokens_per_residue: f64,
    pub token_count: usize,
}

fn encode_all(tok: &Tokenizer, c: &Corpus) -> Vec<TokenSequence> {
    c.sequences().par_iter().map(|s| tok.encode(s)).collect()
}

fn evaluate_tokenizer(
    method: Method,
    requested_size: usize,
    tok: &Tokenizer,
    train: &Corpus,
    val: &Corpus,
    alpha: f64,
) -> Result<SweepRow, MlmError> {
    let vocab = tok.vocab();
    let lm = fit_freq_lm(&encode_all(tok, train), vocab, alpha)?;
    let val_tokens = encode_all(tok, val);
    let scored = score_all(&lm, vocab, &val_tokens)?;
    let residues = val.total_residues();
    Ok(SweepRow {
        method,
        requested_size,
        vocab_size: vocab.size(),
        perplexity: perplexity(&scored),
        normalized_perplexity: normalized_perplexity(&scored),
        tokens_per_residue: scored.token_count() as f64 / residues as f64,
        token_count: scored.token_count(),
    })
}

/// Trains each requested tokenizer on `train`, fits a frequency LM on the
/// tokenized training set and scores `val`, one row per (method, size) pair in order.
///
/// BPE models of all requested sizes come from one training run at the
/// largest size, since a smaller model is a prefix of the merge list.
pub fn perplexity_sweep(
    train: &Corpus,
    val: &Corpus,
    specs: &[(Method, usize)],
    alpha: f64,
) -> Result<Vec<SweepRow>, MlmError> {
    let bpe_max = specs.iter().filter(|(m, _)| *m == Method::Bpe).map(|(_, v)| *v).max();
    let bpe_full = match bpe_max {
        Some(v) => match Tokenizer::train(Method::Bpe, train, v)?.model {
            Tokenizer::Bpe(m) => Some(m),
            _ => unreachable!(),
        },
        None => None,
    };
    let mut rows = Vec::with_capacity(specs.len());
    for &(method, size) in specs {
        let tok = match (method, &bpe_full) {
            (Method::Bpe, Some(full)) => Tokenizer::Bpe(full.truncated(size).map_err(TokenizerError::from)?),
            _ => Tokenizer::train(method, train, size)?.model,
        };
        let row = evaluate_tokenizer(method, size, &tok, train, val, alpha)?;
        log::info!("{method} V={}: perplexity {:.4}", row.vocab_size, row.perplexity);
        rows.push(row);
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "method\tvocab_size\tperplexity\tnormalized_perplexity\ttokens_per_residue";

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{:.16e}\t{:.16e}\t{:.16e}",
            r.method, r.vocab_size, r.perplexity, r.normalized_perplexity, r.tokens_per_residue
        )
        .unwrap();
    }
    out
}

/// Metric records for every row, named `<method>.<requested size>.<metric>`.
pub fn sweep_records(rows: &[SweepRow]) -> Vec<MetricRecord> {
    rows.iter()
        .flat_map(|r| {
            let rec = |name: &str, value| MetricRecord {
                name: format!("{}.{}.{name}", r.method, r.requested_size),
                value,
                token_count: r.token_count,
                vocab_size: r.vocab_size,
            };
            vec![
                rec("perplexity", r.perplexity),
                rec("normalized_perplexity", r.normalized_perplexity),
                rec("tokens_per_residue", r.tokens_per_residue),
            ]
        })
        .collect()
}
