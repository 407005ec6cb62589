use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Example, Gradient, Head, SentimentModel};
use super::text::Vocab;
use super::SentimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_range: f64,
    /// Words rarer than this in the training texts map to the unknown token.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { dim: 25, learning_rate: 0.05, batch_size: 16, epochs: 100, init_range: 0.05, min_count: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SentimentModel,
    /// Mean loss over the whole training set before the first update.
    pub initial_loss: f64,
    /// Mean loss over the whole training set after each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

/// Mean cross-entropy over `examples`.
pub fn mean_loss(model: &SentimentModel, examples: &[Example]) -> Result<f64, SentimentError> {
    let mut total = 0.0;
    for ex in examples {
        total += model.loss(ex)?;
    }
    Ok(total / examples.len() as f64)
}

/// Classification accuracy of `model` on `examples`.
pub fn accuracy(model: &SentimentModel, examples: &[Example]) -> Result<f64, SentimentError> {
    let mut hits = 0usize;
    for ex in examples {
        if model.predict_tokens(&ex.tokens, ex.aspect.as_deref())?.label == ex.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len().max(1) as f64)
}

/// Mini-batch gradient descent on mean cross-entropy.
///
/// The message head ignores aspects; the target head requires one on every
/// example. Batches are drawn from a seeded shuffle each epoch, so the
/// result depends only on the example order, `config` and `seed`.
pub fn train(
    vocab: Vocab,
    examples: &[Example],
    head: Head,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, SentimentError> {
    if examples.is_empty() {
        return Err(SentimentError::EmptyDataset);
    }
    if config.batch_size == 0 || config.dim == 0 {
        return Err(SentimentError::Format("batch size and dimension must be positive".into()));
    }
    let examples: Vec<Example> = match head {
        Head::Message => examples.iter().map(|e| Example { aspect: None, ..e.clone() }).collect(),
        Head::Target => {
            if let Some(i) = examples.iter().position(|e| e.aspect.is_none()) {
                return Err(SentimentError::MissingAspectAt(i));
            }
            examples.to_vec()
        }
    };

    let mut model = SentimentModel::init(head, vocab, config.dim, config.init_range, seed);
    let initial_loss = mean_loss(&model, &examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = Gradient::zeros(&model);
            for &i in batch {
                let (_, g) = model.loss_and_gradient(&examples[i])?;
                grad.add(&g);
            }
            model.apply(&grad, config.learning_rate / batch.len() as f64);
        }
        let loss = mean_loss(&model, &examples)?;
        if !loss.is_finite() || !model.params.is_finite() {
            return Err(SentimentError::NonFiniteLoss { epoch: epoch + 1 });
        }
        tracing::debug!(epoch = epoch + 1, loss, "epoch finished");
        loss_history.push(loss);
    }
    let final_loss = loss_history.last().copied().unwrap_or(initial_loss);
    Ok(TrainOutcome { model, initial_loss, loss_history, final_loss })
}
