//! Seeding, EM re-estimation and pruning for unigram models.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{UnigramError, UnigramModel};
use crate::corpus::{Corpus, ProteinSequence};
use crate::vocab::{base_characters, BASE_VOCAB_SIZE, SPECIAL_TOKENS};
use crate::Trained;

/// Sequences per parallel work unit. Partial sums are always reduced in
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 64;

/// How prune scores the likelihood cost of dropping a piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneStrategy {
    /// Recompute the partition of every affected sequence without the piece.
    Exact,
    /// Expected count times the log-probability gap to the best
    /// segmentation of the piece's own string that avoids it.
    Approximate,
    /// `Exact` while its cost (residues re-scored, summed over candidates)
    /// stays under `budget`, otherwise `Approximate`.
    Auto { budget: u64 },
}

#[derive(Debug, Clone)]
pub struct UnigramConfig {
    /// Seed vocabulary size as a multiple of the target size.
    pub seed_factor: usize,
    pub max_piece_len: usize,
    /// EM iterations before each pruning round.
    pub em_iters_per_round: usize,
    pub final_em_iters: usize,
    /// Each pruning round keeps at least this fraction of the vocabulary.
    pub keep_fraction: f64,
    /// Probability floor applied before renormalization in the M-step.
    pub prob_floor: f64,
    pub prune: PruneStrategy,
}

impl Default for UnigramConfig {
    fn default() -> Self {
        Self {
            seed_factor: 4,
            max_piece_len: 8,
            em_iters_per_round: 2,
            final_em_iters: 2,
            keep_fraction: 0.8,
            prob_floor: 1e-12,
            prune: PruneStrategy::Auto { budget: 20_000_000 },
        }
    }
}

fn chunked<T: Send>(corpus: &Corpus, f: impl Fn(&[ProteinSequence]) -> T + Sync + Send) -> Vec<T> {
    corpus.sequences().par_chunks(CHUNK).map(f).collect()
}

/// Normalizes non-negative weights into log-probabilities, applying `floor`
/// to each probability before the final renormalization.
fn normalize(weights: &[f64], floor: f64) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights
        .iter()
        .map(|w| if total > 0.0 { (w / total).max(floor) } else { floor })
        .collect();
    let z: f64 = probs.iter().sum();
    probs.iter().map(|p| (p / z).ln()).collect()
}

fn rebuild(m: &UnigramModel, log_probs: Vec<f64>) -> Result<UnigramModel, UnigramError> {
    let entries = m.pieces().iter().zip(log_probs).map(|((p, _), lp)| (p.clone(), lp)).collect();
    UnigramModel::new_unchecked(entries)
}

/// Enumerates substrings of length 2..=`max_piece_len`, scores them by
/// occurrence count times length and keeps the best `seed_size - 33`
/// together with every single-character piece.
pub fn seed_pieces(
    corpus: &Corpus,
    seed_size: usize,
    max_piece_len: usize,
) -> Result<Trained<UnigramModel>, UnigramError> {
    seed_pieces_with(corpus, seed_size, max_piece_len, 1e-12)
}

fn seed_pieces_with(
    corpus: &Corpus,
    seed_size: usize,
    max_piece_len: usize,
    floor: f64,
) -> Result<Trained<UnigramModel>, UnigramError> {
    if seed_size < BASE_VOCAB_SIZE {
        return Err(UnigramError::TargetTooSmall(seed_size));
    }
    if max_piece_len < 2 {
        return Err(UnigramError::MaxPieceLenTooSmall(max_piece_len));
    }
    let want = seed_size - BASE_VOCAB_SIZE;
    let seqs: Vec<&[u8]> = corpus.iter().map(|s| s.residues().as_bytes()).collect();

    let mut prev: HashMap<&[u8], u64> = HashMap::new();
    for s in &seqs {
        for i in 0..s.len() {
            *prev.entry(&s[i..i + 1]).or_default() += 1;
        }
    }
    let char_counts: HashMap<u8, u64> = prev.iter().map(|(k, v)| (k[0], *v)).collect();

    // Apriori pruning: an extension can only reach score `tau` if its count
    // is at least tau / max_piece_len, and counts never grow with length.
    let mut candidates: Vec<(u64, &[u8])> = Vec::new();
    let mut tau = 0u64;
    for len in 2..=max_piece_len {
        let mut cur: HashMap<&[u8], u64> = HashMap::new();
        for s in &seqs {
            if s.len() < len {
                continue;
            }
            for i in 0..=s.len() - len {
                if prev.contains_key(&s[i..i + len - 1]) {
                    *cur.entry(&s[i..i + len]).or_default() += 1;
                }
            }
        }
        candidates.extend(cur.iter().map(|(sub, &c)| (c * len as u64, *sub)));
        if want > 0 && candidates.len() >= want {
            let mut scores: Vec<u64> = candidates.iter().map(|c| c.0).collect();
            let (_, kth, _) = scores.select_nth_unstable_by(want - 1, |a, b| b.cmp(a));
            tau = tau.max(*kth);
            candidates.retain(|c| c.0 >= tau);
        }
        cur.retain(|_, c| *c * max_piece_len as u64 >= tau);
        prev = cur;
        if prev.is_empty() {
            break;
        }
    }
    candidates.sort_unstable_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    candidates.truncate(want);
    let shortfall = (candidates.len() < want).then(|| want - candidates.len());
    if let Some(missing) = shortfall {
        log::warn!("corpus yields only {} seed pieces ({missing} short)", candidates.len());
    }

    let singles = base_characters();
    let mut entries: Vec<String> = singles.iter().map(|c| c.to_string()).collect();
    let mut weights: Vec<f64> = singles
        .iter()
        .map(|c| char_counts.get(&(*c as u8)).copied().unwrap_or(0) as f64)
        .collect();
    for (score, sub) in &candidates {
        entries.push(String::from_utf8(sub.to_vec()).expect("residues are ASCII"));
        weights.push((*score / sub.len() as u64) as f64);
    }
    let log_probs = normalize(&weights, floor);
    let model = UnigramModel::new_unchecked(entries.into_iter().zip(log_probs).collect())?;
    Ok(Trained { model, shortfall })
}

/// Posterior expected count of every piece and the corpus log-likelihood
/// `sum log Z(sequence)` under `m`.
pub fn expected_counts(m: &UnigramModel, corpus: &Corpus) -> Result<(Vec<f64>, f64), UnigramError> {
    let n = m.pieces().len();
    let parts = chunked(corpus, |chunk| {
        let mut counts = vec![0.0; n];
        let mut ll = 0.0;
        for s in chunk {
            ll += m.lattice(s.residues()).accumulate_expected(&mut counts);
        }
        (counts, ll)
    });
    let mut counts = vec![0.0; n];
    let mut ll = 0.0;
    for (c, l) in parts {
        for (acc, x) in counts.iter_mut().zip(c) {
            *acc += x;
        }
        ll += l;
    }
    if !ll.is_finite() {
        return Err(UnigramError::NonFiniteLikelihood(ll));
    }
    Ok((counts, ll))
}

/// One EM iteration. Returns the re-estimated model and the corpus
/// log-likelihood under the model passed in.
pub fn em_step(m: &UnigramModel, corpus: &Corpus) -> Result<(UnigramModel, f64), UnigramError> {
    em_step_with(m, corpus, UnigramConfig::default().prob_floor)
}

fn em_step_with(m: &UnigramModel, corpus: &Corpus, floor: f64) -> Result<(UnigramModel, f64), UnigramError> {
    let (counts, ll) = expected_counts(m, corpus)?;
    Ok((rebuild(m, normalize(&counts, floor))?, ll))
}

/// Per-sequence log partitions and, for each piece, the sequences whose
/// lattice contains it.
fn occurrence_index(m: &UnigramModel, corpus: &Corpus) -> (Vec<f64>, Vec<Vec<u32>>) {
    let parts = chunked(corpus, |chunk| {
        chunk
            .iter()
            .map(|s| {
                let lat = m.lattice(s.residues());
                let mut present: Vec<u32> = lat.edges().iter().map(|e| e.piece).collect();
                present.sort_unstable();
                present.dedup();
                (lat.log_partition(), present)
            })
            .collect::<Vec<_>>()
    });
    let mut log_z = Vec::with_capacity(corpus.len());
    let mut occ = vec![Vec::new(); m.pieces().len()];
    for (si, (z, present)) in parts.into_iter().flatten().enumerate() {
        log_z.push(z);
        for p in present {
            occ[p as usize].push(si as u32);
        }
    }
    (log_z, occ)
}

fn multi_indices(m: &UnigramModel) -> Vec<usize> {
    (0..m.pieces().len()).filter(|&i| m.pieces()[i].0.len() > 1).collect()
}

/// Exact corpus log-likelihood lost by deleting each multi-character piece
/// while every other log-probability stays fixed.
pub fn leave_one_out_losses(m: &UnigramModel, corpus: &Corpus) -> Result<Vec<(usize, f64)>, UnigramError> {
    let (log_z, occ) = occurrence_index(m, corpus);
    exact_losses(m, corpus, &log_z, &occ)
}

fn exact_losses(
    m: &UnigramModel,
    corpus: &Corpus,
    log_z: &[f64],
    occ: &[Vec<u32>],
) -> Result<Vec<(usize, f64)>, UnigramError> {
    let seqs = corpus.sequences();
    multi_indices(m)
        .into_par_iter()
        .map(|p| {
            let mut loss = 0.0;
            for &si in &occ[p] {
                let without = m.lattice_without(seqs[si as usize].residues(), p).log_partition();
                if !without.is_finite() {
                    return Err(UnigramError::NonFiniteLikelihood(without));
                }
                loss += log_z[si as usize] - without;
            }
            Ok((p, loss))
        })
        .collect()
}

fn approximate_losses(m: &UnigramModel, corpus: &Corpus) -> Result<Vec<(usize, f64)>, UnigramError> {
    let (counts, _) = expected_counts(m, corpus)?;
    Ok(multi_indices(m)
        .into_par_iter()
        .map(|p| {
            let (piece, lp) = &m.pieces()[p];
            let (alt, _) = m.lattice_without(piece, p).viterbi();
            (p, counts[p] * (lp - alt))
        })
        .collect())
}

/// Removes the multi-character pieces whose deletion costs the least corpus
/// likelihood, down to `max(keep_target, ceil(keep_fraction * size))`
/// vocabulary entries, then renormalizes.
pub fn prune(
    m: &UnigramModel,
    corpus: &Corpus,
    keep_target: usize,
    cfg: &UnigramConfig,
) -> Result<UnigramModel, UnigramError> {
    if keep_target < BASE_VOCAB_SIZE {
        return Err(UnigramError::TargetTooSmall(keep_target));
    }
    let size = m.vocab().size();
    if keep_target >= size {
        return Ok(m.clone());
    }
    let next = keep_target.max((cfg.keep_fraction * size as f64).ceil() as usize).min(size);
    let drop = size - next;

    let mut losses = match cfg.prune {
        PruneStrategy::Exact => leave_one_out_losses(m, corpus)?,
        PruneStrategy::Approximate => approximate_losses(m, corpus)?,
        PruneStrategy::Auto { budget } => {
            let (log_z, occ) = occurrence_index(m, corpus);
            let cost: u64 = multi_indices(m)
                .iter()
                .flat_map(|&p| occ[p].iter())
                .map(|&si| corpus.sequences()[si as usize].len() as u64)
                .sum();
            if cost <= budget {
                exact_losses(m, corpus, &log_z, &occ)?
            } else {
                approximate_losses(m, corpus)?
            }
        }
    };
    losses.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| m.pieces()[a.0].0.cmp(&m.pieces()[b.0].0)));
    let mut removed = vec![false; m.pieces().len()];
    for &(p, _) in losses.iter().take(drop) {
        removed[p] = true;
    }
    let kept: Vec<(String, f64)> = m
        .pieces()
        .iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(e, _)| e.clone())
        .collect();
    let weights: Vec<f64> = kept.iter().map(|(_, lp)| lp.exp()).collect();
    let log_probs = normalize(&weights, 0.0);
    UnigramModel::new_unchecked(kept.into_iter().map(|(p, _)| p).zip(log_probs).collect())
}

pub fn train_unigram(corpus: &Corpus, target_size: usize) -> Result<Trained<UnigramModel>, UnigramError> {
    train_unigram_with(corpus, target_size, &UnigramConfig::default())
}

/// Seeds `seed_factor * target_size` pieces, then alternates EM and
/// pruning until the vocabulary has `target_size` entries.
pub fn train_unigram_with(
    corpus: &Corpus,
    target_size: usize,
    cfg: &UnigramConfig,
) -> Result<Trained<UnigramModel>, UnigramError> {
    if target_size < BASE_VOCAB_SIZE {
        return Err(UnigramError::TargetTooSmall(target_size));
    }
    if corpus.is_empty() {
        return Err(UnigramError::EmptyCorpus);
    }
    let seed_size = target_size.saturating_mul(cfg.seed_factor.max(1));
    let Trained { model: mut m, .. } = seed_pieces_with(corpus, seed_size, cfg.max_piece_len, cfg.prob_floor)?;
    while m.vocab().size() > target_size {
        for _ in 0..cfg.em_iters_per_round {
            m = em_step_with(&m, corpus, cfg.prob_floor)?.0;
        }
        m = prune(&m, corpus, target_size, cfg)?;
        log::debug!("unigram prune -> {} pieces", m.vocab().size());
    }
    for _ in 0..cfg.final_em_iters {
        m = em_step_with(&m, corpus, cfg.prob_floor)?.0;
    }
    // Multi-character pieces in descending probability.
    let mut multis: Vec<(String, f64)> = m.pieces().iter().filter(|(p, _)| p.len() > 1).cloned().collect();
    multis.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut entries: Vec<(String, f64)> = m.pieces().iter().filter(|(p, _)| p.len() == 1).cloned().collect();
    entries.extend(multis);
    let model = UnigramModel::new_unchecked(entries)?;
    debug_assert!(model.pieces().iter().all(|(p, _)| !SPECIAL_TOKENS.contains(&p.as_str())));
    let size = model.vocab().size();
    let shortfall = (size < target_size).then(|| target_size - size);
    if let Some(missing) = shortfall {
        log::warn!("unigram vocabulary is {missing} pieces short of {target_size}");
    }
    Ok(Trained { model, shortfall })
}
