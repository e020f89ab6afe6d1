//! Multi-stage contrastive training and evaluation of text embeddings.
//!
//! The crate covers the full loop at desk scale: a small autodiff engine
//! ([`tensor`]), a transformer text encoder ([`encoder`]), contrastive
//! objectives ([`objectives`]), data ingestion and source sampling
//! ([`datapipe`]), two-stage optimisation ([`trainer`]) and the embedding
//! benchmark evaluators ([`eval`]).

pub mod datapipe;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
