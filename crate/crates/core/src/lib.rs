//! Token-space analysis of LLM text embeddings.
//!
//! Text embeddings produced by decoder LLMs can be projected through the
//! model's unembedding matrix `E_g` to obtain one logit per vocabulary token.
//! This crate measures how well those top-scoring tokens line up with the
//! tokens of the input text ([`alignment`]), studies the singular-vector
//! structure of embedding collections ([`spectral`]), and turns the projection
//! into a training-free sparse retrieval engine ([`sparse`], [`eval`]).

pub mod alignment;
pub mod error;
pub mod eval;
pub mod io;
pub mod pooling;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use io::{EmbeddingMatrix, RelevanceJudgments, TokenTable, TokenizedCorpus};
