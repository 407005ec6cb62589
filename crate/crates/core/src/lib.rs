//! Image-driven post retrieval and sentiment analysis over a social-media
//! corpus.
//!
//! Images are described by aggregated local features, searched with an
//! exact L2 index, and the matching posts are classified by a message-level
//! and a target-level sentiment model.

pub mod corpus;
pub mod imagefeat;
pub mod index;
pub mod pipeline;
pub mod sentiment;
pub mod vlad;

pub use corpus::CorpusError;
pub use imagefeat::FeatureError;
pub use index::IndexError;
pub use pipeline::PipelineError;
pub use sentiment::SentimentError;
pub use vlad::VladError;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Vlad(#[from] VladError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}
