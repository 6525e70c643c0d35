use crate::nn::{NnError, Tensor};
use crate::scalar::{cast, Scalar};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / B`.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>), NnError> {
    let (b, c) = (logits.rows(), logits.row_len());
    if labels.len() != b {
        return Err(NnError::LabelCount {
            expected: b,
            got: labels.len(),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(NnError::LabelRange { row, label, classes: c });
    }
    let inv_b: S = cast(1.0 / b as f64);
    let mut grad = Vec::with_capacity(b * c);
    let mut total = S::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let sum: S = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let onehot = if j == y { S::one() } else { S::zero() };
            grad.push((p - onehot) * inv_b);
        }
    }
    Ok((total * inv_b, Tensor::new(vec![b, c], grad)?))
}
