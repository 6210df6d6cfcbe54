//! Byte-pair encoding over residue strings.
//!
//! Training starts from the 28 single-character pieces of the base inventory
//! and repeatedly merges the most frequent adjacent pair. Pair counts are
//! maintained incrementally: each merge only touches the sequences that
//! contain the merged pair, and within those only the pairs adjacent to a
//! merge site.
//!
//! Model file grammar:
//!
//! ```text
//! protok-bpe<TAB>1
//! <vocabulary file>
//! merges<TAB><n>
//! <left> <right>      (n lines, training order)
//! ```

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{Corpus, ProteinSequence};
use crate::vocab::{base_vocabulary, numbered_lines, TokenId, TokenSequence, VocabError, Vocabulary, BASE_VOCAB_SIZE};
use crate::Trained;

const BPE_MAGIC: &str = "protok-bpe";
const BPE_VERSION: u32 = 1;

/// Pairs seen fewer times than this are never merged.
pub const MIN_PAIR_FREQUENCY: u64 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BpeError {
    #[error("target vocabulary size {0} is below the base inventory of {BASE_VOCAB_SIZE}")]
    TargetTooSmall(usize),
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Ordered merge list plus the vocabulary it generates.
#[derive(Debug, Clone)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: Vocabulary,
    /// (left, right) -> ascending list of (rank, output id).
    ranks: HashMap<(TokenId, TokenId), Vec<(u32, TokenId)>>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.vocab == other.vocab
    }
}

impl BpeModel {
    /// Rebuilds a model from its merge list. The vocabulary is the base
    /// inventory followed by each merge output in first-creation order.
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self, BpeError> {
        let base = base_vocabulary();
        let mut extra: Vec<String> = Vec::new();
        let mut known: HashSet<String> = base.pieces().map(|(_, p, _)| p.to_string()).collect();
        for (i, (l, r)) in merges.iter().enumerate() {
            for side in [l, r] {
                if !known.contains(side.as_str()) || base.id_of(side).is_some_and(|id| base.is_special(id)) {
                    return Err(BpeError::Format {
                        line: i + 1,
                        msg: format!("merge {i} uses unknown piece {side:?}"),
                    });
                }
            }
            let out = format!("{l}{r}");
            if known.insert(out.clone()) {
                extra.push(out);
            }
        }
        let vocab = Vocabulary::extend_base(extra)?;
        let mut ranks: HashMap<(TokenId, TokenId), Vec<(u32, TokenId)>> = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let key = (vocab.id_of(l).unwrap(), vocab.id_of(r).unwrap());
            let out = vocab.id_of(&format!("{l}{r}")).unwrap();
            ranks.entry(key).or_default().push((rank as u32, out));
        }
        Ok(Self { merges, vocab, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// The model this one's training run had produced when its vocabulary
    /// first reached `size` pieces.
    pub fn truncated(&self, size: usize) -> Result<Self, BpeError> {
        if size < BASE_VOCAB_SIZE {
            return Err(BpeError::TargetTooSmall(size));
        }
        let mut seen = HashSet::new();
        let mut count = BASE_VOCAB_SIZE;
        let mut keep = 0;
        for (l, r) in &self.merges {
            if count >= size {
                break;
            }
            let out = format!("{l}{r}");
            if self.vocab.id_of(&out).is_some_and(|id| id as usize >= BASE_VOCAB_SIZE) && seen.insert(out) {
                count += 1;
            }
            keep += 1;
        }
        Self::from_merges(self.merges[..keep].to_vec())
    }

    /// Applies merges in training order, each rule left to right over
    /// non-overlapping occurrences.
    pub fn encode(&self, s: &ProteinSequence) -> TokenSequence {
        TokenSequence {
            ids: self.encode_str(s.residues()),
            vocab_size: self.vocab.size(),
            source_id: s.id().to_string(),
        }
    }

    pub fn encode_str(&self, residues: &str) -> Vec<TokenId> {
        let unk = self.vocab.specials().unk;
        let mut buf = [0u8; 4];
        let mut sym: Vec<TokenId> = residues
            .chars()
            .map(|c| self.vocab.id_of(c.encode_utf8(&mut buf)).unwrap_or(unk))
            .collect();
        let n = sym.len();
        if n < 2 || self.merges.is_empty() {
            return sym;
        }
        // Doubly linked list over symbol start positions.
        let mut next: Vec<usize> = (1..=n).collect();
        let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
        let mut alive = vec![true; n];
        // Min-heap of (rank, position, left id, right id).
        let mut heap: BinaryHeap<Reverse<(u32, usize, TokenId, TokenId)>> = BinaryHeap::new();
        let push = |heap: &mut BinaryHeap<_>, pos: usize, l: TokenId, r: TokenId, after: Option<u32>| {
            if let Some(list) = self.ranks.get(&(l, r)) {
                let found = match after {
                    None => list.first(),
                    Some(cur) => list.iter().find(|(rk, _)| *rk > cur),
                };
                if let Some(&(rank, _)) = found {
                    heap.push(Reverse((rank, pos, l, r)));
                }
            }
        };
        for i in 0..n - 1 {
            push(&mut heap, i, sym[i], sym[i + 1], None);
        }
        while let Some(Reverse((rank, pos, l, r))) = heap.pop() {
            let right = next[pos];
            if !alive[pos] || right >= n || sym[pos] != l || sym[right] != r {
                continue;
            }
            let out = self.ranks[&(l, r)].iter().find(|(rk, _)| *rk == rank).unwrap().1;
            sym[pos] = out;
            alive[right] = false;
            let after = next[right];
            next[pos] = after;
            if after < n {
                prev[after] = pos;
                push(&mut heap, pos, out, sym[after], Some(rank));
            }
            let before = prev[pos];
            if before < n {
                push(&mut heap, before, sym[before], out, Some(rank));
            }
        }
        let mut ids = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            ids.push(sym[i]);
            i = next[i];
        }
        ids
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{BPE_MAGIC}\t{BPE_VERSION}").unwrap();
        out.push_str(&self.vocab.to_text());
        writeln!(out, "merges\t{}", self.merges.len()).unwrap();
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}").unwrap();
        }
        out
    }

    pub fn save(&self) -> Vec<u8> {
        self.to_text().into_bytes()
    }

    pub fn load(bytes: &[u8]) -> Result<Self, BpeError> {
        let text = std::str::from_utf8(bytes).map_err(|e| BpeError::Format { line: 0, msg: e.to_string() })?;
        let mut lines = numbered_lines(text);
        let header = lines.next().map(|(_, l)| l).unwrap_or_default();
        if header != format!("{BPE_MAGIC}\t{BPE_VERSION}") {
            return Err(BpeError::Format { line: 1, msg: format!("bad header {header:?}") });
        }
        let vocab = Vocabulary::read_from(&mut lines)?;
        let (line_no, count_line) = lines
            .next()
            .ok_or(BpeError::Format { line: 0, msg: "missing merges section".into() })?;
        let count: usize = count_line
            .strip_prefix("merges\t")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| BpeError::Format { line: line_no, msg: format!("bad merges line {count_line:?}") })?;
        let mut merges = Vec::with_capacity(count);
        for i in 0..count {
            let (line_no, line) = lines.next().ok_or_else(|| BpeError::Format {
                line: 0,
                msg: format!("expected {count} merges, found {i}"),
            })?;
            let (l, r) = line.split_once(' ').ok_or_else(|| BpeError::Format {
                line: line_no,
                msg: format!("bad merge {line:?}"),
            })?;
            merges.push((l.to_string(), r.to_string()));
        }
        if let Some((line, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(BpeError::Format { line, msg: format!("trailing content {extra:?}") });
        }
        let model = Self::from_merges(merges)?;
        if model.vocab != vocab {
            return Err(BpeError::Format {
                line: 0,
                msg: "vocabulary section does not match the merge list".into(),
            });
        }
        Ok(model)
    }
}

fn cmp_pairs(pieces: &[String], a: (TokenId, TokenId), b: (TokenId, TokenId)) -> Ordering {
    pieces[a.0 as usize]
        .cmp(&pieces[b.0 as usize])
        .then_with(|| pieces[a.1 as usize].cmp(&pieces[b.1 as usize]))
}

/// Trains a merge table until the vocabulary holds `target_size` pieces
/// (specials included) or no pair occurs at least twice.
pub fn train_bpe(corpus: &Corpus, target_size: usize) -> Result<Trained<BpeModel>, BpeError> {
    if target_size < BASE_VOCAB_SIZE {
        return Err(BpeError::TargetTooSmall(target_size));
    }
    if corpus.is_empty() {
        return Err(BpeError::EmptyCorpus);
    }
    let base = base_vocabulary();
    let mut pieces: Vec<String> = base.pieces().map(|(_, p, _)| p.to_string()).collect();
    let mut piece_ids: HashMap<String, TokenId> = base.pieces().map(|(i, p, _)| (p.to_string(), i)).collect();
    let unk = base.specials().unk;
    let mut buf = [0u8; 4];
    let mut seqs: Vec<Vec<TokenId>> = corpus
        .iter()
        .map(|s| s.residues().chars().map(|c| base.id_of(c.encode_utf8(&mut buf)).unwrap_or(unk)).collect())
        .collect();

    let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
    let mut where_: HashMap<(TokenId, TokenId), Vec<u32>> = HashMap::new();
    for (si, s) in seqs.iter().enumerate() {
        for w in s.windows(2) {
            let key = (w[0], w[1]);
            *counts.entry(key).or_default() += 1;
            let list = where_.entry(key).or_default();
            if list.last() != Some(&(si as u32)) {
                list.push(si as u32);
            }
        }
    }

    let mut merges: Vec<(String, String)> = Vec::new();
    let mut vocab_size = BASE_VOCAB_SIZE;
    let mut scratch = Vec::new();
    while vocab_size < target_size {
        let mut best: Option<((TokenId, TokenId), u64)> = None;
        for (&pair, &c) in &counts {
            if c < MIN_PAIR_FREQUENCY {
                continue;
            }
            best = match best {
                None => Some((pair, c)),
                Some((bp, bc)) => {
                    if c > bc || (c == bc && cmp_pairs(&pieces, pair, bp) == Ordering::Less) {
                        Some((pair, c))
                    } else {
                        Some((bp, bc))
                    }
                }
            };
        }
        let Some(((a, b), _)) = best else { break };
        let merged = format!("{}{}", pieces[a as usize], pieces[b as usize]);
        let z = match piece_ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as TokenId;
                pieces.push(merged.clone());
                piece_ids.insert(merged, id);
                vocab_size += 1;
                id
            }
        };
        merges.push((pieces[a as usize].clone(), pieces[b as usize].clone()));

        let mut affected = where_.remove(&(a, b)).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        for si in affected {
            apply_merge(&mut seqs[si as usize], si, (a, b), z, &mut counts, &mut where_, &mut scratch);
        }
        counts.remove(&(a, b));
    }
    let shortfall = (vocab_size < target_size).then(|| target_size - vocab_size);
    if let Some(missing) = shortfall {
        log::warn!("BPE ran out of mergeable pairs {missing} pieces short of {target_size}");
    }
    Ok(Trained { model: BpeModel::from_merges(merges)?, shortfall })
}

/// Merges every non-overlapping `(a, b)` in `seq` left to right and patches
/// the global pair statistics for the pairs that changed.
fn apply_merge(
    seq: &mut Vec<TokenId>,
    si: u32,
    (a, b): (TokenId, TokenId),
    z: TokenId,
    counts: &mut HashMap<(TokenId, TokenId), u64>,
    where_: &mut HashMap<(TokenId, TokenId), Vec<u32>>,
    out: &mut Vec<TokenId>,
) {
    out.clear();
    let mut removed: Vec<usize> = Vec::new();
    let mut added: Vec<usize> = Vec::new();
    let n = seq.len();
    let mut i = 0;
    while i < n {
        if i + 1 < n && seq[i] == a && seq[i + 1] == b {
            for j in i.saturating_sub(1)..=(i + 1).min(n.saturating_sub(2)) {
                if removed.last().is_none_or(|&last| last < j) {
                    removed.push(j);
                }
            }
            let k = out.len();
            for j in k.saturating_sub(1)..=k {
                if added.last().is_none_or(|&last| last < j) {
                    added.push(j);
                }
            }
            out.push(z);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    if removed.is_empty() {
        return;
    }
    for j in removed {
        let key = (seq[j], seq[j + 1]);
        if let Some(c) = counts.get_mut(&key) {
            *c -= 1;
            if *c == 0 {
                counts.remove(&key);
            }
        }
    }
    for j in added {
        if j + 1 >= out.len() {
            continue;
        }
        let key = (out[j], out[j + 1]);
        *counts.entry(key).or_default() += 1;
        let list = where_.entry(key).or_default();
        if list.last() != Some(&si) {
            list.push(si);
        }
    }
    std::mem::swap(seq, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_plus(n: usize) -> usize {
        BASE_VOCAB_SIZE + n
    }

    fn corpus(rs: &[&str]) -> Corpus {
        Corpus::from_residues("t", rs.iter().copied()).unwrap()
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    /// Reference merge application: one left-to-right pass per rule.
    fn naive_encode(model: &BpeModel, s: &str) -> Vec<String> {
        let mut sym: Vec<String> = s.chars().map(String::from).collect();
        for (l, r) in model.merges() {
            let mut out = Vec::with_capacity(sym.len());
            let mut i = 0;
            while i < sym.len() {
                if i + 1 < sym.len() && &sym[i] == l && &sym[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(sym[i].clone());
                    i += 1;
                }
            }
            sym = out;
        }
        sym
    }

    #[test]
    fn single_pair_type() {
        let t = train_bpe(&corpus(&["AAAA"]), base_plus(1)).unwrap();
        assert_eq!(t.model.merges(), &[pair("A", "A")]);
        assert_eq!(t.model.vocab().size(), base_plus(1));
        assert!(t.shortfall.is_none());
    }

    #[test]
    fn abab_merges() {
        let t = train_bpe(&corpus(&["ABAB", "ABAB"]), base_plus(2)).unwrap();
        assert_eq!(t.model.merges(), &[pair("A", "B"), pair("AB", "AB")]);
    }

    #[test]
    fn base_target_has_no_merges() {
        let t = train_bpe(&corpus(&["MKVLA"]), BASE_VOCAB_SIZE).unwrap();
        assert!(t.model.merges().is_empty());
        assert_eq!(t.model.vocab(), base_vocabulary());
    }

    #[test]
    fn errors() {
        assert_eq!(train_bpe(&corpus(&["MK"]), 10).unwrap_err(), BpeError::TargetTooSmall(10));
        let empty = Corpus::new("t", vec![]).unwrap();
        assert_eq!(train_bpe(&empty, 40).unwrap_err(), BpeError::EmptyCorpus);
    }

    #[test]
    fn exhaustion_sets_shortfall() {
        let t = train_bpe(&corpus(&["MKV"]), base_plus(5)).unwrap();
        assert!(t.model.merges().is_empty());
        assert_eq!(t.shortfall, Some(5));
    }

    #[test]
    fn ties_break_lexicographically() {
        // (C,D) and (A,B) both occur twice.
        let t = train_bpe(&corpus(&["CD", "AB", "CD", "AB"]), base_plus(1)).unwrap();
        assert_eq!(t.model.merges(), &[pair("A", "B")]);
    }

    #[test]
    fn pairs_do_not_cross_sequences() {
        let t = train_bpe(&corpus(&["MA", "AK", "MA", "AK"]), base_plus(3)).unwrap();
        assert!(!t.model.merges().contains(&pair("A", "A")));
    }

    #[test]
    fn encode_applies_merges() {
        let model = BpeModel::from_merges(vec![pair("A", "B")]).unwrap();
        let ab = model.vocab().id_of("AB").unwrap();
        assert_eq!(model.encode_str("ABAB"), vec![ab, ab]);
        let plain = BpeModel::from_merges(vec![]).unwrap();
        let v = base_vocabulary();
        assert_eq!(plain.encode_str("MKV"), ["M", "K", "V"].map(|p| v.id_of(p).unwrap()));
    }

    #[test]
    fn overlapping_runs_merge_leftmost() {
        let model = BpeModel::from_merges(vec![pair("A", "A")]).unwrap();
        let aa = model.vocab().id_of("AA").unwrap();
        let a = model.vocab().id_of("A").unwrap();
        assert_eq!(model.encode_str("AAA"), vec![aa, a]);
        assert_eq!(model.encode_str("AAAAA"), vec![aa, aa, a]);
    }

    #[test]
    fn duplicate_outputs_keep_vocab_unique() {
        let model = BpeModel::from_merges(vec![pair("A", "B"), pair("B", "C"), pair("AB", "C"), pair("A", "BC")]).unwrap();
        assert_eq!(model.vocab().size(), base_plus(3));
        let pieces: Vec<_> = model.encode_str("ABC").iter().map(|&i| model.vocab().piece_of(i).unwrap()).collect();
        assert_eq!(pieces, ["ABC"]);
    }

    #[test]
    fn model_file_round_trip() {
        let t = train_bpe(&corpus(&["MKVLAAGMKVL", "GGMKVLAAG", "MKVLMKVL"]), base_plus(6)).unwrap();
        let back = BpeModel::load(&t.model.save()).unwrap();
        assert_eq!(back, t.model);
        assert_eq!(back.save(), t.model.save());
    }

    #[test]
    fn model_file_errors() {
        let t = train_bpe(&corpus(&["MKMKMK", "MKMK"]), base_plus(2)).unwrap();
        let text = t.model.to_text();
        assert!(BpeModel::load(&text.as_bytes()[..text.len() - 4]).is_err());
        assert!(BpeModel::load(text.replace("protok-bpe", "protok-xxx").as_bytes()).is_err());
        let tampered = text.replace("MK MK", "MK MQ");
        assert!(BpeModel::load(tampered.as_bytes()).is_err());
    }

    #[test]
    fn truncation_equals_shorter_training() {
        let c = corpus(&["MKVLAAGMKVLWW", "GGMKVLAAGWW", "MKVLMKVLAAGG", "WWMKGG"]);
        let full = train_bpe(&c, base_plus(8)).unwrap().model;
        for k in 0..=8 {
            let short = train_bpe(&c, base_plus(k)).unwrap().model;
            assert_eq!(full.truncated(base_plus(k)).unwrap(), short, "k={k}");
        }
    }

    proptest! {
        #[test]
        fn heap_encoder_matches_sequential_rules(
            train in prop::collection::vec("[ABCD]{2,30}", 1..12),
            probe in "[ABCD]{1,60}",
            extra in 0usize..25,
        ) {
            let c = Corpus::from_residues("t", train).unwrap();
            let model = train_bpe(&c, base_plus(extra)).unwrap().model;
            let ids = model.encode_str(&probe);
            let got: Vec<String> = ids.iter().map(|&i| model.vocab().piece_of(i).unwrap().to_string()).collect();
            prop_assert_eq!(got.concat(), probe.clone());
            prop_assert_eq!(got, naive_encode(&model, &probe));
        }

        #[test]
        fn more_merges_never_lengthen(
            train in prop::collection::vec("[ABCDE]{2,40}", 1..10),
            probe in "[ABCDE]{1,80}",
            k in 0usize..20,
        ) {
            let c = Corpus::from_residues("t", train).unwrap();
            let full = train_bpe(&c, base_plus(k + 1)).unwrap().model;
            let shorter = full.truncated(base_plus(k)).unwrap();
            prop_assert!(shorter.encode_str(&probe).len() >= full.encode_str(&probe).len());
        }
    }
}
