use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stabilized softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Predicted class (lowest index on ties) and its softmax probability.
pub fn softmax_confidence(logits: &Tensor) -> Result<(usize, f64)> {
    if logits.shape().len() != 1 || logits.len() < 2 {
        return Err(Error::Usage(format!(
            "softmax needs a 1-d vector of at least two logits, got shape {:?}",
            logits.shape()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Usage("non-finite logits".into()));
    }
    let probs = softmax(logits.data());
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs[best]))
}

/// Cross-entropy of `softmax(logits)` against `label`, with the gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if label >= logits.len() {
        return Err(Error::Usage(format!("label {label} out of range for {} classes", logits.len())));
    }
    let probs = softmax(logits.data());
    let loss = -probs[label].max(1e-300).ln();
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confidence_examples() {
        let (c, p) = softmax_confidence(&Tensor::from_vec(vec![0.0, 0.0])).unwrap();
        assert_eq!((c, p), (0, 0.5));
        let (c, p) = softmax_confidence(&Tensor::from_vec(vec![2f64.ln(), 0.0])).unwrap();
        assert_eq!(c, 0);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        let (c, p) = softmax_confidence(&Tensor::from_vec(vec![1000.0, 0.0])).unwrap();
        assert_eq!(c, 0);
        assert!(p.is_finite() && (p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn confidence_rejects_degenerate_input() {
        assert!(softmax_confidence(&Tensor::from_vec(vec![1.0])).is_err());
        assert!(softmax_confidence(&Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = softmax_cross_entropy(&Tensor::from_vec(vec![1.0, 2.0, -1.0]), 1).unwrap();
        assert!(loss > 0.0);
        assert!(g.data().iter().sum::<f64>().abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn shift_invariance(logits in prop::collection::vec(-30.0f64..30.0, 2..12), shift in -500.0f64..500.0) {
            let (c1, p1) = softmax_confidence(&Tensor::from_vec(logits.clone())).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let (c2, p2) = softmax_confidence(&Tensor::from_vec(shifted)).unwrap();
            prop_assert_eq!(c1, c2);
            prop_assert!((p1 - p2).abs() <= 1e-12);
        }
    }
}
