//! Sub-word tokenizers for protein sequences.
//!
//! Per-residue, BPE and unigram tokenizers share one base inventory of 33
//! tokens (see [`vocab`]). The remaining modules measure how vocabulary size
//! affects language-modeling metrics and provide the pooling kernels and
//! benchmark-task plumbing used downstream.

pub mod benchtasks;
pub mod bpe;
pub mod corpus;
pub mod kernels;
pub mod metrics;
pub mod mlm;
pub mod synth;
pub mod tokenizer;
pub mod unigram;
pub mod vocab;

/// A trained model plus how many entries short of the requested
/// vocabulary size training stopped, if it did.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained<M> {
    pub model: M,
    pub shortfall: Option<usize>,
}
