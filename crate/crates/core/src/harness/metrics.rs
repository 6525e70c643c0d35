use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ClientSplit;
use crate::nn::{cross_entropy, Model, NnError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("client {client} has an empty test split")]
    EmptyTestSplit { client: usize },
    #[error("{models} models for {clients} clients")]
    ClientCount { models: usize, clients: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// FedBN rounds run before running-statistic similarity is computed.
    WarmUp,
    Federated,
}

/// Test-split metrics of every client after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub phase: Phase,
    /// Top-1 accuracy on each client's own test split.
    pub accuracy: Vec<f64>,
    /// Unweighted mean of `accuracy`.
    pub avg_accuracy: f64,
    /// Mean cross-entropy on each client's own test split.
    pub loss: Vec<f64>,
    pub avg_loss: f64,
    /// Not serialized: timings go to a separate file so metrics stay
    /// reproducible.
    #[serde(skip)]
    pub wall_clock_ms: u64,
}

/// Evaluates client `i`'s model on client `i`'s test split only.
pub fn evaluate<S: Scalar>(
    models: &[Model<S>],
    splits: &[ClientSplit<S>],
    batch_size: usize,
    round: usize,
    phase: Phase,
) -> Result<MetricsRecord, EvalError> {
    if models.len() != splits.len() {
        return Err(EvalError::ClientCount {
            models: models.len(),
            clients: splits.len(),
        });
    }
    let mut accuracy = Vec::with_capacity(models.len());
    let mut loss = Vec::with_capacity(models.len());
    for (client, (model, split)) in models.iter().zip(splits).enumerate() {
        let test = &split.test;
        if test.is_empty() {
            return Err(EvalError::EmptyTestSplit { client });
        }
        let mut correct = 0usize;
        let mut total_loss = 0.0;
        for (x, labels) in test.batches(batch_size.max(1)) {
            let logits = model.forward_eval(&x, &[])?.logits;
            let (l, _) = cross_entropy(&logits, &labels)?;
            total_loss += l.to_f64_lossy() * labels.len() as f64;
            correct += logits.argmax_rows().iter().zip(&labels).filter(|(p, y)| p == y).count();
        }
        accuracy.push(correct as f64 / test.len() as f64);
        loss.push(total_loss / test.len() as f64);
    }
    let n = models.len().max(1) as f64;
    Ok(MetricsRecord {
        round,
        phase,
        avg_accuracy: accuracy.iter().sum::<f64>() / n,
        avg_loss: loss.iter().sum::<f64>() / n,
        accuracy,
        loss,
        wall_clock_ms: 0,
    })
}

/// First round whose average accuracy reaches `fraction` of the final
/// round's. `None` when no round does.
pub fn rounds_to_threshold(avg_accuracy: &[f64], fraction: f64) -> Option<usize> {
    let last = *avg_accuracy.last()?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return None;
    }
    let target = fraction * last;
    avg_accuracy.iter().position(|&a| a >= target)
}
