//! Message- and target-level sentiment classification.

mod data;
mod metrics;
mod model;
mod text;
mod train;

use std::path::PathBuf;

pub use self::data::{
    read_fixture, read_training_tsv, score, to_examples, train_from_texts, FixturePost, LabeledText, ScoreReport,
    ScoredPost,
};
pub use self::metrics::{evaluate, EvalMetrics};
pub use self::model::{
    forward_message, forward_target, gradient_check, softmax, Encoding, Example, Gradient, Head, Params, Prediction,
    SentimentModel,
};
pub use self::text::{
    collapse_label, preprocess, tokenize, AspectSpan, Identity, SentimentLabel, TextTransform, TokenSequence, Vocab,
    UNK, UNK_INDEX,
};
pub use self::train::{accuracy, mean_loss, train, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum SentimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("malformed model: {0}")]
    Format(String),
    #[error("invalid sentiment label {0:?}")]
    BadLabel(String),
    #[error("model has a {found} head, operation needs {expected}")]
    HeadMismatch { expected: Head, found: Head },
    #[error("aspect is empty")]
    EmptyAspect,
    #[error("target head needs an aspect")]
    MissingAspect,
    #[error("example {0} has no aspect, required by the target head")]
    MissingAspectAt(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("token index {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{predictions} predictions for {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
}
