//! Cross-domain content recommendation.
//!
//! Source-domain items (for example movies) and target-domain items (for
//! example books) are described by a dense text embedding and a subword
//! genre embedding. A small fusion network projects the genre vector into
//! the text space, concatenates the two and applies a ReLU layer. Target
//! features are precomputed into a [`index::FeatureIndex`]; a handful of
//! seed items is then enough to rank the whole target catalog by a blend of
//! fused-feature, genre and TF-IDF cosine similarity.
//!
//! The pipeline stages map onto modules:
//!
//! * [`catalog`] ingest and cleaning of item and rating files
//! * [`embeddings`] the genre trainer and the text encoder providers
//! * [`fusion`] the fusion network with exact gradients
//! * [`trainer`] loss, pair sampling, AdamW, warm-restart schedule, clipping
//! * [`scoring`] cosine, TF-IDF and score combination
//! * [`index`] the persisted target feature index
//! * [`recommender`] seed-based cold-start ranking
//! * [`pipeline`] end-to-end wiring of the stages
//! * [`evaluation`] MAE/RMSE threshold evaluation and ablations
//! * [`synthetic`] a planted-structure dataset generator for testing

pub mod binio;
pub mod catalog;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod index;
pub mod pipeline;
pub mod recommender;
pub mod scoring;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};

/// Width of description embeddings.
pub const TEXT_DIM: usize = 768;
/// Width of genre embeddings.
pub const GENRE_DIM: usize = 50;
