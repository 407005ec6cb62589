use serde::{Deserialize, Serialize};

use super::text::SentimentLabel;
use super::SentimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; 3],
    /// `confusion[gold][predicted]`, classes in negative, neutral, positive order.
    pub confusion: [[usize; 3]; 3],
}

/// Accuracy, per-class F1 and their unweighted mean.
///
/// A class that occurs in neither the gold labels nor the predictions
/// contributes an F1 of zero and is logged.
pub fn evaluate(predictions: &[SentimentLabel], gold: &[SentimentLabel]) -> Result<EvalMetrics, SentimentError> {
    if predictions.len() != gold.len() {
        return Err(SentimentError::LengthMismatch { predictions: predictions.len(), gold: gold.len() });
    }
    if gold.is_empty() {
        return Err(SentimentError::EmptyInput);
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, g) in predictions.iter().zip(gold) {
        confusion[g.index()][p.index()] += 1;
    }
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = [0.0; 3];
    for c in 0..3 {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
        if support == 0 && predicted == 0 {
            tracing::warn!(class = %SentimentLabel::ALL[c], "class absent from gold and predictions, F1 counted as 0");
            continue;
        }
        per_class_f1[c] = 2.0 * tp / (support + predicted) as f64;
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / 3.0,
        per_class_f1,
        confusion,
    })
}
