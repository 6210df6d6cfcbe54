//! Segmentation lattices and log-space forward-backward.

use super::trie::Trie;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub start: u32,
    pub end: u32,
    /// Index into the model's piece table.
    pub piece: u32,
    pub log_prob: f64,
}

/// All ways of covering `0..len` with model pieces. Edges are grouped by
/// start position, shortest first.
#[derive(Debug, Clone)]
pub struct SegmentationLattice {
    len: usize,
    offsets: Vec<u32>,
    edges: Vec<Edge>,
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl SegmentationLattice {
    pub(crate) fn build(trie: &Trie, log_probs: &[f64], max_len: usize, text: &[u8], skip: Option<u32>) -> Self {
        let len = text.len();
        let mut offsets = Vec::with_capacity(len + 1);
        let mut edges = Vec::with_capacity(len * 2);
        for i in 0..len {
            offsets.push(edges.len() as u32);
            trie.prefixes(&text[i..], max_len, |l, piece| {
                if Some(piece) != skip {
                    edges.push(Edge {
                        start: i as u32,
                        end: (i + l) as u32,
                        piece,
                        log_prob: log_probs[piece as usize],
                    });
                }
            });
        }
        offsets.push(edges.len() as u32);
        Self { len, offsets, edges }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edges_from(&self, pos: usize) -> &[Edge] {
        &self.edges[self.offsets[pos] as usize..self.offsets[pos + 1] as usize]
    }

    /// Log of the total probability of all segmentations.
    pub fn log_partition(&self) -> f64 {
        self.forward()[self.len]
    }

    pub fn forward(&self) -> Vec<f64> {
        let mut alpha = vec![f64::NEG_INFINITY; self.len + 1];
        alpha[0] = 0.0;
        for i in 0..self.len {
            let a = alpha[i];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for e in self.edges_from(i) {
                let end = e.end as usize;
                alpha[end] = log_add(alpha[end], a + e.log_prob);
            }
        }
        alpha
    }

    pub fn backward(&self) -> Vec<f64> {
        let mut beta = vec![f64::NEG_INFINITY; self.len + 1];
        beta[self.len] = 0.0;
        for i in (0..self.len).rev() {
            let mut acc = f64::NEG_INFINITY;
            for e in self.edges_from(i) {
                acc = log_add(acc, e.log_prob + beta[e.end as usize]);
            }
            beta[i] = acc;
        }
        beta
    }

    /// Adds each piece's posterior expected count to `counts` and returns
    /// the log partition.
    pub fn accumulate_expected(&self, counts: &mut [f64]) -> f64 {
        let alpha = self.forward();
        let beta = self.backward();
        let z = alpha[self.len];
        if !z.is_finite() {
            return z;
        }
        for e in &self.edges {
            let lp = alpha[e.start as usize] + e.log_prob + beta[e.end as usize] - z;
            if lp > -745.0 {
                counts[e.piece as usize] += lp.exp();
            }
        }
        z
    }

    /// Best path as (score, edges). Ties prefer fewer tokens, then the
    /// shorter (lexicographically smaller) piece at the first divergence.
    pub fn viterbi(&self) -> (f64, Vec<Edge>) {
        let n = self.len;
        let mut score = vec![f64::NEG_INFINITY; n + 1];
        let mut tokens = vec![usize::MAX; n + 1];
        let mut choice: Vec<Option<Edge>> = vec![None; n + 1];
        score[n] = 0.0;
        tokens[n] = 0;
        for i in (0..n).rev() {
            for e in self.edges_from(i) {
                let j = e.end as usize;
                if tokens[j] == usize::MAX {
                    continue;
                }
                let s = e.log_prob + score[j];
                let t = tokens[j] + 1;
                // Edges from `i` arrive shortest first, so an exact tie on
                // (score, tokens) keeps the earlier, shorter piece.
                let better = s > score[i] || (s == score[i] && t < tokens[i]);
                if better || choice[i].is_none() {
                    score[i] = s;
                    tokens[i] = t;
                    choice[i] = Some(*e);
                }
            }
        }
        let mut path = Vec::new();
        let mut i = 0;
        while i < n {
            let Some(e) = choice[i] else {
                return (f64::NEG_INFINITY, Vec::new());
            };
            path.push(e);
            i = e.end as usize;
        }
        (score[0], path)
    }
}
