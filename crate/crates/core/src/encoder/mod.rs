//! Tokenization and the dual-encoder text embedding function.
//!
//! Texts are lowercased, split on whitespace and punctuation, prefixed with
//! `[BOS]`, and run through a pre-LN transformer. The text vector is the mean
//! of the final token states over non-padding positions.

mod model;
mod vocab;

pub use model::{EncoderConfig, EncoderForward, EncoderModel, TokenBatch};
pub use vocab::{split_tokens, tokenize, Vocabulary, BOS_ID, PAD_ID, RESERVED, UNK_ID};
