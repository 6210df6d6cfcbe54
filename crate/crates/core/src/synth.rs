//! Deterministic synthetic protein corpora.
//!
//! Sequences are mutated copies of random family templates drawn from
//! background amino-acid frequencies, so related sequences share long
//! substrings the way homologous proteins do. Used where no real FASTA
//! corpus is available.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, ProteinSequence};

/// Canonical residues with approximate background frequencies (percent).
pub const BACKGROUND: [(char, f64); 20] = [
    ('L', 9.86),
    ('A', 8.25),
    ('G', 7.07),
    ('V', 6.86),
    ('E', 6.72),
    ('S', 6.63),
    ('I', 5.92),
    ('K', 5.81),
    ('R', 5.53),
    ('D', 5.46),
    ('T', 5.35),
    ('P', 4.74),
    ('N', 4.06),
    ('Q', 3.93),
    ('F', 3.86),
    ('Y', 2.92),
    ('M', 2.41),
    ('H', 2.27),
    ('C', 1.38),
    ('W', 1.10),
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub sequences: usize,
    pub families: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-residue probability of resampling a template residue.
    pub substitution_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { sequences: 10_000, families: 500, min_len: 50, max_len: 600, substitution_rate: 0.2, seed: 42 }
    }
}

impl SynthConfig {
    pub fn generate(&self) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let background = WeightedIndex::new(BACKGROUND.iter().map(|(_, w)| *w)).expect("positive weights");
        let residue = |rng: &mut ChaCha8Rng| BACKGROUND[background.sample(rng)].0;
        let (lo, hi) = (self.min_len.max(1), self.max_len.max(self.min_len.max(1)));
        let templates: Vec<Vec<char>> = (0..self.families.max(1))
            .map(|_| {
                let len = rng.gen_range(lo..=hi);
                (0..len).map(|_| residue(&mut rng)).collect()
            })
            .collect();
        let seqs = (0..self.sequences)
            .map(|i| {
                let t = &templates[rng.gen_range(0..templates.len())];
                // Some members keep only a window of the family template.
                let (start, end) = if rng.gen_bool(0.3) && t.len() > lo {
                    let len = rng.gen_range(lo..=t.len());
                    let start = rng.gen_range(0..=t.len() - len);
                    (start, start + len)
                } else {
                    (0, t.len())
                };
                let residues: String = t[start..end]
                    .iter()
                    .map(|&c| if rng.gen_bool(self.substitution_rate) { residue(&mut rng) } else { c })
                    .collect();
                ProteinSequence::new(format!("syn{i}"), residues).expect("canonical residues")
            })
            .collect();
        Corpus::new("synthetic", seqs).expect("ids are unique")
    }
}
