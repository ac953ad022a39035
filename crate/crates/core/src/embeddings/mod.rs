//! Raw item representations: subword genre vectors and description
//! embeddings.

mod genre;
mod text;

pub use genre::{char_ngrams, GenreConfig, GenreEmbeddingModel};
pub use text::{
    fallback_encode, tokenize, EmbeddingFile, EncoderProvider, FallbackEncoder, FileEncoder, TextEmbedding,
    MAX_TOKENS,
};
