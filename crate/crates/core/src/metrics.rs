//! Language-modeling and downstream-task metrics. All logarithms are natural.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::tokenizer::Tokenizer;
use crate::vocab::TokenId;

/// Allowed deviation of a predicted distribution's total mass from 1.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no tokens to score")]
    Empty,
    #[error("no masked positions")]
    EmptyMask,
    #[error("{what}: lengths differ ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("distribution at position {position} sums to {total}")]
    Unnormalized { position: usize, total: f64 },
    #[error("true token {id} at position {position} is outside a distribution of size {size}")]
    IdOutOfRange { position: usize, id: TokenId, size: usize },
    #[error("log-probability {value} at index {index} is not a finite value <= 0")]
    BadLogProb { index: usize, value: f64 },
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("need at least 2 values, got {0}")]
    TooFew(usize),
    #[error("{0} is constant, rank correlation is undefined")]
    Constant(&'static str),
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("metric needs a {expected} batch, got {found}")]
    KindMismatch { expected: TaskKind, found: TaskKind },
    #[error("index {index}: target {target:?} does not fit a {kind} task")]
    WrongTarget { index: usize, target: Target, kind: TaskKind },
    #[error("index {index}: class {class} is not below the class count {class_count}")]
    ClassOutOfRange { index: usize, class: u32, class_count: usize },
    #[error("bad metric record {0:?}")]
    BadRecord(String),
}

/// Natural-log probabilities of the true tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTokens {
    log_probs: Vec<f64>,
    vocab_size: usize,
}

impl ScoredTokens {
    pub fn new(log_probs: Vec<f64>, vocab_size: usize) -> Result<Self, MetricError> {
        if log_probs.is_empty() {
            return Err(MetricError::Empty);
        }
        if vocab_size < 2 {
            return Err(MetricError::VocabTooSmall(vocab_size));
        }
        if let Some((index, &value)) = log_probs.iter().enumerate().find(|(_, lp)| !(lp.is_finite() && **lp <= 0.0)) {
            return Err(MetricError::BadLogProb { index, value });
        }
        Ok(Self { log_probs, vocab_size })
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn token_count(&self) -> usize {
        self.log_probs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Concatenates scores from the same vocabulary in order.
    pub fn concat(parts: impl IntoIterator<Item = ScoredTokens>) -> Result<Self, MetricError> {
        let mut log_probs = Vec::new();
        let mut vocab_size = 0;
        for p in parts {
            if vocab_size != 0 && vocab_size != p.vocab_size {
                return Err(MetricError::LengthMismatch { what: "vocabulary sizes", left: vocab_size, right: p.vocab_size });
            }
            vocab_size = p.vocab_size;
            log_probs.extend(p.log_probs);
        }
        Self::new(log_probs, vocab_size)
    }

    /// Mean negative log-probability per token.
    fn mean_nll(&self) -> f64 {
        let first = self.log_probs[0];
        if self.log_probs.iter().all(|&lp| lp == first) {
            // Avoids summation rounding so that a uniform model scores exactly.
            return -first;
        }
        -self.log_probs.iter().sum::<f64>() / self.log_probs.len() as f64
    }
}

/// Mean over masked positions of `-log p(true token)`.
///
/// `log_dists[i]` is the predicted log-distribution over the vocabulary at
/// the i-th masked position.
pub fn mlm_loss(true_ids: &[TokenId], log_dists: &[Vec<f64>]) -> Result<f64, MetricError> {
    if true_ids.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    if true_ids.len() != log_dists.len() {
        return Err(MetricError::LengthMismatch { what: "masked ids and distributions", left: true_ids.len(), right: log_dists.len() });
    }
    let mut nll = Vec::with_capacity(true_ids.len());
    for (position, (&id, dist)) in true_ids.iter().zip(log_dists).enumerate() {
        let total: f64 = dist.iter().map(|lp| lp.exp()).sum();
        if !((total - 1.0).abs() <= DISTRIBUTION_TOLERANCE) {
            return Err(MetricError::Unnormalized { position, total });
        }
        let lp = *dist.get(id as usize).ok_or(MetricError::IdOutOfRange { position, id, size: dist.len() })?;
        nll.push(-lp);
    }
    if nll.iter().all(|&x| x == nll[0]) {
        return Ok(nll[0]);
    }
    Ok(nll.iter().sum::<f64>() / nll.len() as f64)
}

/// `exp(-(sum log p) / N)` with N the token count.
pub fn perplexity(s: &ScoredTokens) -> f64 {
    s.mean_nll().exp()
}

/// `exp(-(sum log p) / (N * V))`, i.e. perplexity to the power `1 / V`.
pub fn normalized_perplexity(s: &ScoredTokens) -> f64 {
    (s.mean_nll() / s.vocab_size as f64).exp()
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch { what: "spearman inputs", left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(MetricError::TooFew(xs.len()));
    }
    for (name, v) in [("xs", xs), ("ys", ys)] {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(MetricError::NonFinite { index, value });
        }
        if v.iter().all(|&x| x == v[0]) {
            return Err(MetricError::Constant(name));
        }
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Regression,
    Classification,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Regression => "regression",
            TaskKind::Classification => "classification",
        })
    }
}

/// A prediction or label: a real value, a class id, or a set of class ids
/// for multi-label tasks.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Real(f64),
    Class(u32),
    ClassSet(Vec<u32>),
}

impl Target {
    /// Class-set targets in canonical (sorted, deduplicated) form.
    pub fn class_set(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Target::ClassSet(ids)
    }

    fn classes(&self) -> &[u32] {
        match self {
            Target::Real(_) => &[],
            Target::Class(c) => std::slice::from_ref(c),
            Target::ClassSet(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    kind: TaskKind,
    predictions: Vec<Target>,
    labels: Vec<Target>,
}

impl PredictionBatch {
    /// Validates that predictions and labels align and fit `kind`. For
    /// classification, class ids must be below `class_count` when given.
    pub fn new(
        kind: TaskKind,
        predictions: Vec<Target>,
        labels: Vec<Target>,
        class_count: Option<usize>,
    ) -> Result<Self, MetricError> {
        if predictions.len() != labels.len() {
            return Err(MetricError::LengthMismatch { what: "predictions and labels", left: predictions.len(), right: labels.len() });
        }
        if predictions.is_empty() {
            return Err(MetricError::Empty);
        }
        for (index, t) in predictions.iter().chain(&labels).enumerate() {
            let index = index % labels.len();
            let fits = match (kind, t) {
                (TaskKind::Regression, Target::Real(x)) => {
                    if !x.is_finite() {
                        return Err(MetricError::NonFinite { index, value: *x });
                    }
                    true
                }
                (TaskKind::Classification, Target::Class(_) | Target::ClassSet(_)) => true,
                _ => false,
            };
            if !fits {
                return Err(MetricError::WrongTarget { index, target: t.clone(), kind });
            }
            if let Some(class_count) = class_count {
                if let Some(&class) = t.classes().iter().find(|&&c| c as usize >= class_count) {
                    return Err(MetricError::ClassOutOfRange { index, class, class_count });
                }
            }
        }
        Ok(Self { kind, predictions, labels })
    }

    pub fn regression(predictions: &[f64], labels: &[f64]) -> Result<Self, MetricError> {
        let wrap = |v: &[f64]| v.iter().map(|&x| Target::Real(x)).collect();
        Self::new(TaskKind::Regression, wrap(predictions), wrap(labels), None)
    }

    pub fn classification(predictions: &[u32], labels: &[u32], class_count: usize) -> Result<Self, MetricError> {
        let wrap = |v: &[u32]| v.iter().map(|&x| Target::Class(x)).collect();
        Self::new(TaskKind::Classification, wrap(predictions), wrap(labels), Some(class_count))
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn predictions(&self) -> &[Target] {
        &self.predictions
    }

    pub fn labels(&self) -> &[Target] {
        &self.labels
    }

    /// Predictions and labels as reals, for regression batches.
    pub fn reals(&self) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
        self.expect(TaskKind::Regression)?;
        let real = |v: &[Target]| {
            v.iter()
                .map(|t| match t {
                    Target::Real(x) => *x,
                    _ => unreachable!("checked at construction"),
                })
                .collect()
        };
        Ok((real(&self.predictions), real(&self.labels)))
    }

    fn expect(&self, expected: TaskKind) -> Result<(), MetricError> {
        if self.kind != expected {
            return Err(MetricError::KindMismatch { expected, found: self.kind });
        }
        Ok(())
    }
}

/// Fraction of exact matches. Class sets match only when equal as sets.
pub fn accuracy(b: &PredictionBatch) -> Result<f64, MetricError> {
    b.expect(TaskKind::Classification)?;
    let same = |p: &Target, l: &Target| {
        let canon = |t: &Target| {
            let mut v = t.classes().to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        match (p, l) {
            (Target::Class(a), Target::Class(b)) => a == b,
            _ => canon(p) == canon(l),
        }
    };
    let hits = b.predictions.iter().zip(&b.labels).filter(|(p, l)| same(p, l)).count();
    Ok(hits as f64 / b.labels.len() as f64)
}

pub fn mse(b: &PredictionBatch) -> Result<f64, MetricError> {
    let (p, l) = b.reals()?;
    Ok(p.iter().zip(&l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionStats {
    pub tokens: u64,
    pub residues: u64,
    pub tokens_per_residue: f64,
    pub mean_piece_length: f64,
    /// `histogram[n]` counts emitted tokens spanning `n` residues.
    pub histogram: Vec<u64>,
}

impl CompressionStats {
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "tokens\t{}\nresidues\t{}\ntokens_per_residue\t{:.16e}\nmean_piece_length\t{:.16e}\n",
            self.tokens, self.residues, self.tokens_per_residue, self.mean_piece_length
        );
        for (len, n) in self.histogram.iter().enumerate().filter(|(_, n)| **n > 0) {
            out.push_str(&format!("length\t{len}\t{n}\n"));
        }
        out
    }
}

pub fn compression_stats(tok: &Tokenizer, corpus: &Corpus) -> Result<CompressionStats, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::Empty);
    }
    let vocab = tok.vocab();
    let mut histogram = vec![0u64; vocab.max_piece_chars() + 1];
    let mut tokens = 0u64;
    for s in corpus.iter() {
        for id in tok.encode_str(s.residues()) {
            let len = if vocab.is_special(id) { 1 } else { vocab.piece_of(id).map_or(1, |p| p.chars().count()) };
            histogram[len] += 1;
            tokens += 1;
        }
    }
    let residues = corpus.total_residues() as u64;
    Ok(CompressionStats {
        tokens,
        residues,
        tokens_per_residue: tokens as f64 / residues as f64,
        mean_piece_length: residues as f64 / tokens as f64,
        histogram,
    })
}

/// One line of a metric report: `name<TAB>value<TAB>token_count<TAB>vocab_size`,
/// value printed with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub token_count: usize,
    pub vocab_size: usize,
}

impl fmt::Display for MetricRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.16e}\t{}\t{}", self.name, self.value, self.token_count, self.vocab_size)
    }
}

impl FromStr for MetricRecord {
    type Err = MetricError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || MetricError::BadRecord(line.to_string());
        let mut cols = line.split('\t');
        let mut next = || cols.next().ok_or_else(bad);
        let name = next()?.to_string();
        let value = next()?.parse().map_err(|_| bad())?;
        let token_count = next()?.parse().map_err(|_| bad())?;
        let vocab_size = next()?.parse().map_err(|_| bad())?;
        if cols.next().is_some() || name.is_empty() {
            return Err(bad());
        }
        Ok(Self { name, value, token_count, vocab_size })
    }
}

/// Perplexity and normalized perplexity of `s` as report records.
pub fn report(prefix: &str, s: &ScoredTokens) -> Vec<MetricRecord> {
    let rec = |name: &str, value| MetricRecord {
        name: format!("{prefix}{name}"),
        value,
        token_count: s.token_count(),
        vocab_size: s.vocab_size(),
    };
    vec![rec("perplexity", perplexity(s)), rec("normalized_perplexity", normalized_perplexity(s))]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::BpeModel;
    use crate::tokenizer::Method;
    use proptest::prelude::*;

    fn scored(lps: &[f64], v: usize) -> ScoredTokens {
        ScoredTokens::new(lps.to_vec(), v).unwrap()
    }

    #[test]
    fn mlm_loss_cases() {
        let v = 7usize;
        let one_hot = |i: usize| (0..v).map(|j| if j == i { 0.0 } else { f64::NEG_INFINITY }).collect::<Vec<_>>();
        assert_eq!(mlm_loss(&[2, 5], &[one_hot(2), one_hot(5)]).unwrap(), 0.0);
        let uniform = vec![-(v as f64).ln(); v];
        assert_eq!(mlm_loss(&[1, 3, 6], &vec![uniform.clone(); 3]).unwrap(), (v as f64).ln());
        let mut d1 = vec![(0.5f64 / 6.0).ln(); v];
        d1[0] = 0.5f64.ln();
        let mut d2 = vec![(0.75f64 / 6.0).ln(); v];
        d2[4] = 0.25f64.ln();
        let got = mlm_loss(&[0, 4], &[d1, d2]).unwrap();
        assert!((got - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-15);
        assert!((got - 1.0397207708399179).abs() < 1e-15);
    }

    #[test]
    fn mlm_loss_errors() {
        assert_eq!(mlm_loss(&[], &[]), Err(MetricError::EmptyMask));
        assert!(matches!(mlm_loss(&[0], &[vec![0.0, 0.0]]), Err(MetricError::Unnormalized { position: 0, .. })));
        assert!(matches!(mlm_loss(&[3], &[vec![0.0]]), Err(MetricError::IdOutOfRange { .. })));
        assert!(matches!(mlm_loss(&[0, 0], &[vec![0.0]]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn perplexity_cases() {
        for v in [2usize, 33, 50, 3200] {
            let s = scored(&vec![-(v as f64).ln(); 17], v);
            // Off by the rounding of ln V plus the rounding of exp.
            let tol = f64::EPSILON * v as f64 * (0.5 * (v as f64).ln() + 2.0);
            assert!((perplexity(&s) - v as f64).abs() <= tol);
        }
        assert_eq!(perplexity(&scored(&[0.0, 0.0], 5)), 1.0);
        assert!((perplexity(&scored(&[-1.0, -3.0], 5)) - 2f64.exp()).abs() < 1e-15);
        assert_eq!(ScoredTokens::new(vec![], 5), Err(MetricError::Empty));
        assert!(matches!(ScoredTokens::new(vec![0.5], 5), Err(MetricError::BadLogProb { index: 0, .. })));
        assert_eq!(ScoredTokens::new(vec![-1.0], 1), Err(MetricError::VocabTooSmall(1)));
    }

    #[test]
    fn normalized_perplexity_table_values() {
        let np = |p: f64, v: usize| p.powf(1.0 / v as f64);
        assert!((np(7.78, 33) - 1.064).abs() < 5e-4);
        assert!((np(9.51, 50) - 1.046).abs() < 5e-4);
        assert!((np(220.77, 3200) - 1.0017).abs() < 5e-5);
    }

    #[test]
    fn spearman_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&xs, &xs).unwrap(), 1.0);
        assert_eq!(spearman(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        // Ranks of ys: [1.5, 1.5, 3, 4] against [1, 2, 3, 4].
        let rx = [1.0, 2.0, 3.0, 4.0];
        let ry = [1.5, 1.5, 3.0, 4.0];
        let (mx, my) = (2.5, 2.5);
        let cov: f64 = rx.iter().zip(ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        let expect = cov / (vx * vy).sqrt();
        assert!((spearman(&xs, &[1.0, 1.0, 3.0, 4.0]).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.9486832980505138).abs() < 1e-15);
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0], &[1.0]), Err(MetricError::TooFew(1)));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::Constant("xs")));
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn accuracy_and_mse() {
        let b = PredictionBatch::classification(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(accuracy(&b).unwrap(), 1.0);
        let b = PredictionBatch::classification(&[1, 2, 0], &[0, 1, 2], 3).unwrap();
        assert_eq!(accuracy(&b).unwrap(), 0.0);
        let b = PredictionBatch::classification(&[0, 1, 1, 1], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(accuracy(&b).unwrap(), 0.75);
        assert!(matches!(mse(&b), Err(MetricError::KindMismatch { .. })));

        let r = |p: &[f64], l: &[f64]| mse(&PredictionBatch::regression(p, l).unwrap()).unwrap();
        assert_eq!(r(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(r(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        assert_eq!(r(&[1.0, 2.0], &[0.0, 4.0]), 2.5);
        let b = PredictionBatch::regression(&[1.0, 2.0], &[0.0, 4.0]).unwrap();
        assert!(matches!(accuracy(&b), Err(MetricError::KindMismatch { .. })));
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(
            PredictionBatch::classification(&[0, 7], &[0, 1], 7),
            Err(MetricError::ClassOutOfRange { index: 1, class: 7, class_count: 7 })
        ));
        assert!(PredictionBatch::classification(&[0, 6], &[6, 1], 7).is_ok());
        assert!(matches!(
            PredictionBatch::new(TaskKind::Regression, vec![Target::Class(1)], vec![Target::Real(1.0)], None),
            Err(MetricError::WrongTarget { .. })
        ));
        assert!(matches!(PredictionBatch::regression(&[1.0], &[]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn class_sets_need_exact_match() {
        let p = vec![Target::class_set(vec![2, 0]), Target::class_set(vec![1])];
        let l = vec![Target::class_set(vec![0, 2]), Target::class_set(vec![1, 3])];
        let b = PredictionBatch::new(TaskKind::Classification, p, l, Some(9)).unwrap();
        assert_eq!(accuracy(&b).unwrap(), 0.5);
    }

    #[test]
    fn compression_cases() {
        let c = Corpus::from_residues("t", ["AAAA"]).unwrap();
        let s = compression_stats(&Tokenizer::PerAa, &c).unwrap();
        assert_eq!(s.tokens_per_residue, 1.0);
        let m = BpeModel::from_merges(vec![("A".into(), "A".into())]).unwrap();
        let s = compression_stats(&Tokenizer::Bpe(m), &c).unwrap();
        assert_eq!(s.tokens_per_residue, 0.5);
        assert_eq!(s.mean_piece_length, 2.0);
        assert_eq!(s.histogram, vec![0, 0, 2]);
        let empty = Corpus::new("e", vec![]).unwrap();
        assert_eq!(compression_stats(&Tokenizer::PerAa, &empty), Err(MetricError::Empty));
    }

    #[test]
    fn compression_improves_with_bpe_size() {
        let c = crate::synth::SynthConfig { sequences: 200, ..Default::default() }.generate();
        let full = Tokenizer::train(Method::Bpe, &c, 400).unwrap().model;
        let Tokenizer::Bpe(full) = full else { unreachable!() };
        let mut last = f64::INFINITY;
        for v in [33, 50, 100, 200, 400] {
            let t = Tokenizer::Bpe(full.truncated(v).unwrap());
            let tpr = compression_stats(&t, &c).unwrap().tokens_per_residue;
            assert!(tpr < last, "V={v}: {tpr} >= {last}");
            last = tpr;
        }
    }

    #[test]
    fn record_round_trip() {
        let r = MetricRecord { name: "bpe.perplexity".into(), value: 9.51234567890123e1, token_count: 12, vocab_size: 50 };
        let line = r.to_string();
        assert_eq!(line.parse::<MetricRecord>().unwrap(), r);
        assert!("x\t1".parse::<MetricRecord>().is_err());
    }

    proptest! {
        #[test]
        fn normalized_is_root_of_perplexity(lps in proptest::collection::vec(-20.0f64..0.0, 1..50), v in 2usize..5000) {
            let s = scored(&lps, v);
            let a = normalized_perplexity(&s);
            let b = perplexity(&s).powf(1.0 / v as f64);
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }

        #[test]
        fn spearman_invariant_under_monotone_maps(
            xs in proptest::collection::vec(-100i32..100, 3..40),
            seed in 0u64..1000,
        ) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| (x * 0.3 + ((i as u64 * 7919 + seed) % 13) as f64).round()).collect();
            prop_assume!(xs.iter().any(|&x| x != xs[0]) && ys.iter().any(|&y| y != ys[0]));
            let base = spearman(&xs, &ys).unwrap();
            let fx: Vec<f64> = xs.iter().map(|x| (x / 50.0).exp()).collect();
            let gy: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0 * y).collect();
            prop_assert!((spearman(&fx, &gy).unwrap() - base).abs() < 1e-12);
        }
    }
}
