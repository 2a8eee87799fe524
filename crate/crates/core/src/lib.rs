//! Word-level evaluation of multilingual alignment in layer-wise
//! contextualized representations.
//!
//! The pipeline: load a parallel corpus and a bilingual dictionary
//! ([`corpus`]), extract unambiguous translated-in-context word pairs
//! ([`extract`]), read per-layer embeddings produced for those pairs by an
//! external dumper ([`store`]), and score nearest-neighbor retrieval under
//! cosine or CSLS ([`similarity`], [`retrieval`], [`sentence`]). Extraction
//! quality and similarity distributions are handled by [`precision`].

pub mod cli;
pub mod corpus;
pub mod error;
pub mod extract;
pub mod pairfile;
pub mod precision;
pub mod retrieval;
pub mod sentence;
pub mod similarity;
pub mod stats;
pub mod store;

pub use error::{Error, Result};
