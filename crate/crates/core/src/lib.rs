//! Compact hypercube embeddings for cross-modal retrieval.
//!
//! Two shallow hashing heads map precomputed text and observation embeddings
//! into a shared `b`-bit Hamming space. The heads are trained with a symmetric
//! code-alignment loss plus a coding-rate diversity term; retrieval is an
//! exhaustive popcount scan over packed 64-bit words.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: shared value types ([`EmbeddingSet`], [`Matrix`], batches, configs)
//! - [`head`]: hashing-head forward pass, sigmoid and binarization
//! - [`objective`]: alignment loss, coding-rate regularizer and analytic gradients
//! - [`trainer`]: seeded minibatch Adam loop
//! - [`index`]: packed codes, Hamming top-k and a cosine baseline
//! - [`eval`]: AP@k / mAP@k per category
//! - [`storage`]: binary file formats and the synthetic paired generator
//!
//! Data-parallel loops go through rayon when the `parallel` feature is on
//! (default) and fall back to plain iterators otherwise. Results are
//! identical either way.

pub mod data;
pub mod error;
pub mod eval;
pub mod head;
pub mod index;
pub mod objective;
mod par;
pub mod storage;
pub mod trainer;

pub use data::{
    CodeBatch, EmbeddingSet, LogitBatch, Matrix, Modality, PairedBatch, ProbBatch, TrainConfig,
};
pub use error::{Error, Result};
pub use eval::{EvalReport, EvalScope};
pub use head::HashHead;
pub use index::{PackedCodeIndex, SearchResult};
pub use objective::LossReport;
pub use trainer::{TrainLog, TrainState};
