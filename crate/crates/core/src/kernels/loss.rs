use crate::error::{Result, SemError};
use crate::tensor::{Element, Tensor};

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// Returns the scalar loss and the row-wise softmax probabilities.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (b, k) = match *logits.shape() {
        [b, k] if k > 0 => (b, k),
        ref s => {
            return Err(SemError::domain(format!(
                "softmax_cross_entropy expects (B,K), got {s:?}"
            )))
        }
    };
    if labels.len() != b {
        return Err(SemError::domain(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(SemError::domain(format!(
            "label {l} at position {i} outside [0, {k})"
        )));
    }
    let mut probs = Vec::with_capacity(b * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        total = total + z.ln() - (row[label] - max);
        probs.extend(exps.iter().map(|&e| e / z));
    }
    Ok((
        total / T::from_f64(b.max(1) as f64),
        Tensor::new([b, k], probs)?,
    ))
}

pub fn softmax_cross_entropy_backward<T: Element>(
    probs: &Tensor<T>,
    labels: &[usize],
    dloss: T,
) -> Tensor<T> {
    let k = probs.shape()[1];
    let scale = dloss / T::from_f64(labels.len().max(1) as f64);
    let mut d = probs.data().to_vec();
    for (row, &label) in d.chunks_exact_mut(k).zip(labels) {
        row[label] = row[label] - T::one();
        row.iter_mut().for_each(|v| *v = *v * scale);
    }
    Tensor::new(probs.shape().to_vec(), d).expect("logit grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros([3, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_gives_near_zero_loss() {
        let logits = Tensor::<f64>::from_f64([1, 3], &[100.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn out_of_range_label() {
        let logits = Tensor::<f64>::zeros([2, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(SemError::Domain(_))
        ));
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let logits = Tensor::<f64>::from_f64([1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let (_, p) = softmax_cross_entropy(&logits, &[1]).unwrap();
        let g = softmax_cross_entropy_backward(&p, &[1], 1.0);
        assert!((g.data()[1] - (p.data()[1] - 1.0)).abs() < 1e-15);
        assert!((g.data()[0] - p.data()[0]).abs() < 1e-15);
    }
}
