//! Speech-emotion-recognition benchmarking over precomputed utterance
//! embeddings.
//!
//! The pipeline runs manifest ingestion, label harmonization, speaker-held-out
//! splits, class rebalancing, training of a feed-forward classification
//! head, accuracy reporting and t-SNE projection. Each stage is usable on
//! its own; `cargo run --example <name>` shows one capability at a time and
//! the `ser` binary drives the whole thing from a JSON experiment config.

pub mod balancing;
pub mod classifier;
pub mod embedding_store;
pub mod ingestion;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod splits;
pub mod synthetic;
pub mod taxonomy;
pub mod tsne;

pub use embedding_store::EmbeddingStore;
pub use ingestion::UtteranceRecord;
pub use taxonomy::{EmotionLabel, EmotionSet, EmotionSetKind, Taxonomy};
