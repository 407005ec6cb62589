use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalMetrics};
use super::model::{Example, Head, Prediction, SentimentModel};
use super::text::{preprocess, tokenize, SentimentLabel, Vocab};
use super::train::{train, TrainConfig, TrainOutcome};
use super::SentimentError;

/// One row of a training file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub id: String,
    pub topic: Option<String>,
    pub label: SentimentLabel,
    pub text: String,
}

/// Reads `id<TAB>label<TAB>text` or `id<TAB>topic<TAB>label<TAB>text` rows.
///
/// The layout is decided per row by which column holds a valid label, the
/// topic form winning when both would parse. Five-point scores are
/// collapsed to three classes.
pub fn read_training_tsv(path: &Path) -> Result<Vec<LabeledText>, SentimentError> {
    let f = File::open(path).map_err(|source| SentimentError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| SentimentError::Io { path: path.to_path_buf(), source })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| SentimentError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let mut fields: Vec<&str> = line.split('\t').collect();
        while fields.len() > 3 && fields.last().is_some_and(|f| f.trim().is_empty()) {
            fields.pop();
        }
        if fields.len() < 3 {
            return Err(bad(format!("expected at least 3 tab-separated columns, found {}", fields.len())));
        }
        let topic_form = fields.len() >= 4 && fields[2].parse::<SentimentLabel>().is_ok();
        let (topic, label, text) = if topic_form {
            (Some(fields[1].trim().to_string()), fields[2], fields[3..].join("\t"))
        } else {
            (None, fields[1], fields[2..].join("\t"))
        };
        let label = label.parse::<SentimentLabel>().map_err(|e| bad(e.to_string()))?;
        out.push(LabeledText { id: fields[0].trim().to_string(), topic, label, text });
    }
    Ok(out)
}

/// Builds a vocabulary from texts and topics, then trains.
pub fn train_from_texts(
    records: &[LabeledText],
    head: Head,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, SentimentError> {
    let streams: Vec<Vec<String>> = records
        .iter()
        .flat_map(|r| {
            let topic = match head {
                Head::Target => r.topic.as_deref().map(tokenize),
                Head::Message => None,
            };
            std::iter::once(tokenize(&r.text)).chain(topic)
        })
        .collect();
    let vocab = Vocab::build(streams.iter(), config.min_count);
    let examples = to_examples(records, &vocab, head)?;
    train(vocab, &examples, head, config, seed)
}

pub fn to_examples(records: &[LabeledText], vocab: &Vocab, head: Head) -> Result<Vec<Example>, SentimentError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let aspect = match head {
                Head::Message => None,
                Head::Target => {
                    let topic = r.topic.as_deref().ok_or(SentimentError::MissingAspectAt(i))?;
                    Some(super::AspectSpan::new(topic, vocab)?.tokens.tokens)
                }
            };
            Ok(Example { tokens: preprocess(&r.text, vocab).tokens, aspect, label: r.label })
        })
        .collect()
}

/// A hand-labelled evaluation post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixturePost {
    pub id: String,
    pub text: String,
    pub label: SentimentLabel,
    #[serde(default)]
    pub aspect: Option<String>,
    /// The text was shortened or written by hand rather than collected.
    #[serde(default)]
    pub edited: bool,
    /// The aspect string appears to join two separate spans.
    #[serde(default)]
    pub multi_span: bool,
}

pub fn read_fixture(path: &Path) -> Result<Vec<FixturePost>, SentimentError> {
    let f = File::open(path).map_err(|source| SentimentError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| SentimentError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let post = serde_json::from_str(&line)
            .map_err(|e| SentimentError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(post);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPost {
    pub id: String,
    pub gold: SentimentLabel,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub head: Head,
    pub metrics: EvalMetrics,
    pub posts: Vec<ScoredPost>,
}

/// Scores a model on fixture posts. The target head only sees posts that
/// carry an aspect.
pub fn score(model: &SentimentModel, posts: &[FixturePost]) -> Result<ScoreReport, SentimentError> {
    let mut scored = Vec::new();
    for p in posts {
        let aspect = match model.head {
            Head::Message => None,
            Head::Target => match p.aspect.as_deref() {
                Some(a) => Some(a),
                None => continue,
            },
        };
        let prediction = model.predict(&p.text, aspect)?;
        scored.push(ScoredPost { id: p.id.clone(), gold: p.label, prediction });
    }
    let preds: Vec<SentimentLabel> = scored.iter().map(|s| s.prediction.label).collect();
    let gold: Vec<SentimentLabel> = scored.iter().map(|s| s.gold).collect();
    Ok(ScoreReport { head: model.head, metrics: evaluate(&preds, &gold)?, posts: scored })
}
