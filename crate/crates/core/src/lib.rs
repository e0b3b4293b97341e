//! Desk-scale laboratory for masked-language-model scaling studies on code.
//!
//! The crate covers the full pipeline: corpus construction, byte-level BPE
//! tokenization, a from-scratch transformer encoder with exact gradients,
//! MLM pretraining, evaluation, power-law fitting across data / model /
//! compute sweeps, retrieval fine-tuning, and layer-wise linear probing.
//! Everything is deterministic given a seed; every artifact carries a
//! manifest sufficient to rebuild it.

pub mod checksum;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod plot;
pub mod probing;
pub mod retrieval;
pub mod scaling;
pub mod seeds;
pub mod sweep;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use corpus::{Corpus, Document, TokenSequence};
pub use error::{Error, Result};
pub use tokenizer::TokenizerModel;
